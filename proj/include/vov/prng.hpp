#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "vov/common.hpp"

namespace vov {

// Philox4x32-10 block cipher (Salmon et al. constants). Counter-based: every
// 128-bit output block is a pure function of (key, counter), so independent
// streams can be replayed in any order on any platform.
namespace philox {

constexpr uint32_t kMul0 = 0xD2511F53u;
constexpr uint32_t kMul1 = 0xCD9E8D57u;
constexpr uint32_t kWey0 = 0x9E3779B9u;
constexpr uint32_t kWey1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> block(std::array<uint32_t, 2> key, std::array<uint32_t, 4> ctr) {
  for (int round = 0; round < 10; ++round) {
    uint64_t p0 = uint64_t(kMul0) * ctr[0];
    uint64_t p1 = uint64_t(kMul1) * ctr[2];
    std::array<uint32_t, 4> next = {
        uint32_t(p1 >> 32) ^ ctr[1] ^ key[0],
        uint32_t(p1),
        uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
        uint32_t(p0),
    };
    ctr = next;
    key[0] += kWey0;
    key[1] += kWey1;
  }
  return ctr;
}

}  // namespace philox

inline uint32_t fnv1a32(std::string_view s) {
  uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// One logical random stream, addressed as (key, domain, n, m, draw).
// Word-to-variate maps are fixed:
//   uniform  u = (word + 0.5) * 2^-32          in (0,1)
//   normals  Box-Muller on (w0,w1) and (w2,w3) with u1 = (w + 1) * 2^-32 in (0,1]
// Each counter tuple yields one 4-word block; vector draws advance `draw`.
class PrngStream {
 public:
  PrngStream(uint64_t key, std::string_view domain)
      : key_{uint32_t(key >> 32), uint32_t(key)}, domain_(fnv1a32(domain)) {}

  std::array<uint32_t, 4> words(uint32_t n, uint32_t m, uint32_t draw) const {
    return philox::block(key_, {domain_, n, m, draw});
  }

  static double to_uniform(uint32_t w) { return (double(w) + 0.5) * 0x1p-32; }

  double uniform(uint32_t n, uint32_t m, uint32_t draw = 0) const {
    return to_uniform(words(n, m, draw)[0]);
  }

  // Two standard normals from one block.
  static void box_muller(uint32_t wa, uint32_t wb, double& z0, double& z1) {
    double u1 = (double(wa) + 1.0) * 0x1p-32;  // (0,1]: keeps log(u1) finite
    double u2 = (double(wb) + 0.5) * 0x1p-32;
    double r = std::sqrt(-2.0 * std::log(u1));
    z0 = r * std::cos(2.0 * kPi * u2);
    z1 = r * std::sin(2.0 * kPi * u2);
  }

  double normal(uint32_t n, uint32_t m, uint32_t draw = 0) const {
    auto w = words(n, m, draw);
    double z0, z1;
    box_muller(w[0], w[1], z0, z1);
    return z0;
  }

  Vec normal_vector(uint32_t n, uint32_t m, size_t dim) const {
    Vec out(dim);
    size_t i = 0;
    for (uint32_t draw = 0; i < dim; ++draw) {
      auto w = words(n, m, draw);
      double z[4];
      box_muller(w[0], w[1], z[0], z[1]);
      box_muller(w[2], w[3], z[2], z[3]);
      for (int j = 0; j < 4 && i < dim; ++j) out[i++] = z[j];
    }
    return out;
  }

 private:
  std::array<uint32_t, 2> key_;
  uint32_t domain_;
};

// Stateful convenience over PrngStream for sequential consumers (weight init,
// shuffles, batch sampling). Order of calls defines the sequence; the state is
// just an incrementing draw counter, so equal seeds give equal sequences.
class SequenceRng {
 public:
  SequenceRng(uint64_t key, std::string_view domain) : stream_(key, domain) {}

  uint32_t next_u32() {
    if (have_ == 0) refill();
    return buf_[--have_];
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  double uniform() { return PrngStream::to_uniform(next_u32()); }

  double normal() {
    if (has_normal_) {
      has_normal_ = false;
      return spare_normal_;
    }
    uint32_t a = next_u32(), b = next_u32();
    double z0, z1;
    PrngStream::box_muller(a, b, z0, z1);
    spare_normal_ = z1;
    has_normal_ = true;
    return z0;
  }

  // Unbiased bounded draw by rejection; deterministic given the stream state.
  uint64_t below(uint64_t bound) {
    if (bound == 0) throw DomainError("SequenceRng::below: bound must be positive");
    uint64_t limit = ~uint64_t(0) - ~uint64_t(0) % bound;
    for (;;) {
      uint64_t x = next_u64();
      if (x < limit) return x % bound;
    }
  }

 private:
  void refill() {
    auto w = stream_.words(uint32_t(draw_ >> 32), uint32_t(draw_), 0);
    ++draw_;
    for (int i = 0; i < 4; ++i) buf_[i] = w[3 - i];
    have_ = 4;
  }

  PrngStream stream_;
  uint64_t draw_ = 0;
  uint32_t buf_[4] = {};
  int have_ = 0;
  bool has_normal_ = false;
  double spare_normal_ = 0.0;
};

// Stable per-item seed derivation for parallel jobs.
inline uint64_t derive_seed(uint64_t root, uint64_t index) {
  auto w = philox::block({uint32_t(root >> 32), uint32_t(root)},
                         {fnv1a32("derive"), uint32_t(index >> 32), uint32_t(index), 0});
  return (uint64_t(w[0]) << 32) | w[1];
}

}  // namespace vov
