#pragma once

#include <algorithm>
#include <cctype>
#include <cstring>

#include "vov/fsio.hpp"
#include "vov/prng.hpp"

namespace vov {

struct Signal {
  std::vector<uint32_t> dims;
  Vec data;

  size_t size() const { return data.size(); }

  void validate() const {
    if (dims.empty()) throw FormatError("Signal: no dimensions");
    uint64_t n = 1;
    for (uint32_t d : dims) {
      if (d == 0) throw FormatError("Signal: zero-sized dimension");
      n *= d;
    }
    if (n != data.size()) throw FormatError("Signal: dims do not match payload size");
  }
};

// "VSIG": magic, u32 ndims, u32 dims..., little-endian f32 payload.
inline std::string serialize_signal(const Signal& sig) {
  sig.validate();
  std::string s;
  s += "VSIG";
  auto put_u32 = [&s](uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char(uint8_t(v >> (8 * i))));
  };
  put_u32(uint32_t(sig.dims.size()));
  for (uint32_t d : sig.dims) put_u32(d);
  for (double x : sig.data) {
    float f = float(x);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  }
  return s;
}

inline Signal parse_signal(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "VSIG") != 0)
    throw FormatError("signal file: bad magic, expected VSIG");
  size_t pos = 4;
  auto get_u32 = [&bytes, &pos]() {
    if (pos + 4 > bytes.size()) throw FormatError("signal file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(bytes[pos++])) << (8 * i);
    return v;
  };
  Signal sig;
  uint32_t nd = get_u32();
  if (nd == 0 || nd > 8) throw FormatError("signal file: implausible dimension count");
  uint64_t total = 1;
  for (uint32_t i = 0; i < nd; ++i) {
    sig.dims.push_back(get_u32());
    if (sig.dims.back() == 0) throw FormatError("signal file: zero-sized dimension");
    total *= sig.dims.back();
    if (total > (1u << 26)) throw FormatError("signal file: payload too large");
  }
  sig.data.resize(size_t(total));
  for (uint64_t i = 0; i < total; ++i) {
    uint32_t bits = get_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    sig.data[size_t(i)] = double(f);
  }
  if (pos != bytes.size()) throw FormatError("signal file: trailing bytes");
  return sig;
}

inline void save_signal(const Signal& sig, const std::string& path) {
  write_file_atomic(path, serialize_signal(sig));
}

inline Signal load_signal(const std::string& path) { return parse_signal(read_file(path)); }

// Binary 8-bit PGM (P5) import, mapped to [0,1].
inline Signal load_pgm(const std::string& path) {
  std::string bytes = read_file(path);
  size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(uint8_t(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    size_t start = pos;
    while (pos < bytes.size() && !std::isspace(uint8_t(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("pgm: truncated header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError("pgm: only binary P5 is supported");
  long w = std::stol(token());
  long h = std::stol(token());
  long maxval = std::stol(token());
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("pgm: need positive size and maxval 255");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos < size_t(w) * size_t(h)) throw FormatError("pgm: truncated payload");
  Signal sig;
  sig.dims = {uint32_t(h), uint32_t(w)};
  sig.data.resize(size_t(w) * size_t(h));
  for (size_t i = 0; i < sig.data.size(); ++i)
    sig.data[i] = double(uint8_t(bytes[pos + i])) / 255.0;
  return sig;
}

// Toy corpus element: a few Gaussian blobs plus one oriented grating on a
// side x side grid, clipped to [0,1].
inline Signal synth_signal(int side, uint64_t seed) {
  if (side < 2) throw DomainError("synth_signal: side must be at least 2");
  SequenceRng rng(seed, "synth");
  Signal sig;
  sig.dims = {uint32_t(side), uint32_t(side)};
  sig.data.assign(size_t(side) * size_t(side), 0.12);

  int blobs = 2 + int(rng.below(3));
  for (int b = 0; b < blobs; ++b) {
    double cx = 0.2 + 0.6 * rng.uniform();
    double cy = 0.2 + 0.6 * rng.uniform();
    double sd = 0.06 + 0.14 * rng.uniform();
    double amp = 0.3 + 0.6 * rng.uniform();
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        double y = (r + 0.5) / side, xx = (c + 0.5) / side;
        double d2 = (xx - cx) * (xx - cx) + (y - cy) * (y - cy);
        sig.data[size_t(r) * size_t(side) + size_t(c)] += amp * std::exp(-d2 / (2.0 * sd * sd));
      }
  }
  double gamp = 0.05 + 0.2 * rng.uniform();
  double freq = 1.0 + 3.0 * rng.uniform();
  double angle = 2.0 * kPi * rng.uniform();
  double phase = 2.0 * kPi * rng.uniform();
  double ca = std::cos(angle), sa = std::sin(angle);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      double y = (r + 0.5) / side, xx = (c + 0.5) / side;
      sig.data[size_t(r) * size_t(side) + size_t(c)] +=
          gamp * std::sin(2.0 * kPi * freq * (xx * ca + y * sa) + phase);
    }
  for (double& v : sig.data) v = std::clamp(v, 0.0, 1.0);
  return sig;
}

}  // namespace vov
