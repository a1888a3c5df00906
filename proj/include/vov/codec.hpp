#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

#include "vov/ratecode.hpp"
#include "vov/scaling.hpp"
#include "vov/signal_io.hpp"

namespace vov {

// Flat key=value configuration. The key set is closed: unknown keys are hard
// errors so a typo cannot silently change a run. The canonical serialization
// below (fixed key order, %.17g floats) also defines the config digest that
// ties bitstreams to the configuration that produced them.
struct CodecConfig {
  int k = 4096;
  int rank = 1;
  double lambda = 3e-3;
  int grid_steps = 100;
  double eta0 = kDefaultEta0;
  double eta1 = kDefaultEta1;
  uint64_t proj_seed = 1;
  uint64_t sampler_seed = 2;
  uint64_t fit_seed = 3;
  int stage1_steps = 400;
  int stage2_steps = 400;
  int batch_size = 64;
  double stage1_lr = 1.5e-3;
  double stage2_lr = 1.5e-3;
  double weight_decay = 1e-4;
  double v_init_scale = 0.01;
  int q_max = 64;
  // base model block: consumed by train-base, digested with everything else
  std::vector<int> net_hidden = {256, 256, 256};
  int net_time_embed = 16;
  uint64_t net_seed = 10;
  int base_steps = 1500;
  int base_batch = 64;
  double base_lr = 1.5e-3;
  double base_weight_decay = 1e-4;
  uint64_t base_seed = 11;

  void validate() const {
    if (k < 1) throw ConfigError("config: k must be positive");
    if (rank < 1) throw ConfigError("config: rank must be positive");
    if (lambda < 0.0) throw ConfigError("config: lambda must be nonnegative");
    if (grid_steps < 1) throw ConfigError("config: grid_steps must be positive");
    if (!(eta0 > 0.0) || !(eta1 > 0.0) || !(eta0 < 1.0 - eta1))
      throw ConfigError("config: clamps must satisfy 0 < eta0 < 1-eta1 < 1");
    if (stage1_steps < 0 || stage2_steps < 0 || base_steps < 0)
      throw ConfigError("config: step counts must be nonnegative");
    if (batch_size < 1 || base_batch < 1) throw ConfigError("config: batch sizes must be positive");
    if (!(stage1_lr > 0.0) || !(stage2_lr > 0.0) || !(base_lr > 0.0))
      throw ConfigError("config: learning rates must be positive");
    if (q_max < 1 || q_max > 32767) throw ConfigError("config: q_max must lie in [1, 32767]");
    if (net_hidden.empty()) throw ConfigError("config: net_hidden must list at least one width");
    for (int h : net_hidden)
      if (h < 1) throw ConfigError("config: net_hidden widths must be positive");
    if (net_time_embed < 2 || net_time_embed % 2 != 0)
      throw ConfigError("config: net_time_embed must be even and >= 2");
    if (v_init_scale <= 0.0) throw ConfigError("config: v_init_scale must be positive");
  }

  TimeGrid grid() const { return TimeGrid::uniform(grid_steps, eta0, eta1); }

  std::string to_text() const;
  static CodecConfig from_text(const std::string& text);
  uint64_t digest() const { return fnv1a64(to_text()); }
};

namespace cfgio {

inline std::string fmt_f(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_hidden(const std::vector<int>& h) {
  std::string s;
  for (size_t i = 0; i < h.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(h[i]);
  }
  return s;
}

}  // namespace cfgio

inline std::string CodecConfig::to_text() const {
  std::ostringstream o;
  o << "k=" << k << '\n'
    << "rank=" << rank << '\n'
    << "lambda=" << cfgio::fmt_f(lambda) << '\n'
    << "grid_steps=" << grid_steps << '\n'
    << "eta0=" << cfgio::fmt_f(eta0) << '\n'
    << "eta1=" << cfgio::fmt_f(eta1) << '\n'
    << "proj_seed=" << proj_seed << '\n'
    << "sampler_seed=" << sampler_seed << '\n'
    << "fit_seed=" << fit_seed << '\n'
    << "stage1_steps=" << stage1_steps << '\n'
    << "stage2_steps=" << stage2_steps << '\n'
    << "batch_size=" << batch_size << '\n'
    << "stage1_lr=" << cfgio::fmt_f(stage1_lr) << '\n'
    << "stage2_lr=" << cfgio::fmt_f(stage2_lr) << '\n'
    << "weight_decay=" << cfgio::fmt_f(weight_decay) << '\n'
    << "v_init_scale=" << cfgio::fmt_f(v_init_scale) << '\n'
    << "q_max=" << q_max << '\n'
    << "net_hidden=" << cfgio::fmt_hidden(net_hidden) << '\n'
    << "net_time_embed=" << net_time_embed << '\n'
    << "net_seed=" << net_seed << '\n'
    << "base_steps=" << base_steps << '\n'
    << "base_batch=" << base_batch << '\n'
    << "base_lr=" << cfgio::fmt_f(base_lr) << '\n'
    << "base_weight_decay=" << cfgio::fmt_f(base_weight_decay) << '\n'
    << "base_seed=" << base_seed << '\n';
  return o.str();
}

inline CodecConfig CodecConfig::from_text(const std::string& text) {
  CodecConfig cfg;
  std::map<std::string, bool> seen;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(stripped.substr(0, eq));
    std::string val = trim(stripped.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    if (seen[key]) throw ConfigError("config: duplicate key '" + key + "'");
    seen[key] = true;

    auto as_int = [&](int& out) {
      try {
        size_t used;
        long long v = std::stoll(val, &used);
        if (used != val.size()) throw std::invalid_argument("");
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
          throw std::out_of_range("");
        out = int(v);
      } catch (const std::exception&) {
        throw ConfigError("config: bad integer for '" + key + "': " + val);
      }
    };
    auto as_u64 = [&](uint64_t& out) {
      try {
        size_t used;
        out = std::stoull(val, &used);
        if (used != val.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for '" + key + "': " + val);
      }
    };
    auto as_f = [&](double& out) {
      try {
        size_t used;
        out = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ConfigError("config: bad number for '" + key + "': " + val);
      }
    };

    if (key == "k") as_int(cfg.k);
    else if (key == "rank") as_int(cfg.rank);
    else if (key == "lambda") as_f(cfg.lambda);
    else if (key == "grid_steps") as_int(cfg.grid_steps);
    else if (key == "eta0") as_f(cfg.eta0);
    else if (key == "eta1") as_f(cfg.eta1);
    else if (key == "proj_seed") as_u64(cfg.proj_seed);
    else if (key == "sampler_seed") as_u64(cfg.sampler_seed);
    else if (key == "fit_seed") as_u64(cfg.fit_seed);
    else if (key == "stage1_steps") as_int(cfg.stage1_steps);
    else if (key == "stage2_steps") as_int(cfg.stage2_steps);
    else if (key == "batch_size") as_int(cfg.batch_size);
    else if (key == "stage1_lr") as_f(cfg.stage1_lr);
    else if (key == "stage2_lr") as_f(cfg.stage2_lr);
    else if (key == "weight_decay") as_f(cfg.weight_decay);
    else if (key == "v_init_scale") as_f(cfg.v_init_scale);
    else if (key == "q_max") as_int(cfg.q_max);
    else if (key == "net_hidden") {
      cfg.net_hidden.clear();
      std::istringstream hs(val);
      std::string part;
      while (std::getline(hs, part, ',')) {
        try {
          cfg.net_hidden.push_back(std::stoi(trim(part)));
        } catch (const std::exception&) {
          throw ConfigError("config: bad net_hidden entry: " + part);
        }
      }
    } else if (key == "net_time_embed") as_int(cfg.net_time_embed);
    else if (key == "net_seed") as_u64(cfg.net_seed);
    else if (key == "base_steps") as_int(cfg.base_steps);
    else if (key == "base_batch") as_int(cfg.base_batch);
    else if (key == "base_lr") as_f(cfg.base_lr);
    else if (key == "base_weight_decay") as_f(cfg.base_weight_decay);
    else if (key == "base_seed") as_u64(cfg.base_seed);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline CodecConfig load_config(const std::string& path) {
  return CodecConfig::from_text(read_file(path));
}

// ---- bitstream ----------------------------------------------------------------

struct Bitstream {
  uint16_t version = 1;
  uint64_t config_digest = 0;
  uint64_t proj_seed = 0;
  uint64_t sampler_seed = 0;
  float s = 0.0f;
  std::array<float, 9> psi{};
  uint32_t symbol_count = 0;
  std::string payload;
  std::optional<ScalingTrace> scaling;
};

namespace bsio {

inline void put_u16(std::string& s, uint16_t v) {
  for (int i = 0; i < 2; ++i) s.push_back(char(uint8_t(v >> (8 * i))));
}
inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char(uint8_t(v >> (8 * i))));
}
inline void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(char(uint8_t(v >> (8 * i))));
}
inline void put_f32(std::string& s, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

struct Reader {
  const std::string& s;
  size_t pos = 0;
  uint8_t u8() {
    if (pos >= s.size()) throw FormatError("bitstream truncated");
    return uint8_t(s[pos++]);
  }
  uint16_t u16() {
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v = uint16_t(v | (uint16_t(u8()) << (8 * i)));
    return v;
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(u8()) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    if (pos + n > s.size()) throw FormatError("bitstream truncated");
    std::string out = s.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace bsio

inline std::string serialize_bitstream(const Bitstream& b) {
  std::string s;
  s += "VOVB";
  bsio::put_u16(s, b.version);
  bsio::put_u64(s, b.config_digest);
  bsio::put_u64(s, b.proj_seed);
  bsio::put_u64(s, b.sampler_seed);
  bsio::put_f32(s, b.s);
  for (float p : b.psi) bsio::put_f32(s, p);
  bsio::put_u32(s, b.symbol_count);
  bsio::put_u32(s, uint32_t(b.payload.size()));
  s += b.payload;
  s.push_back(b.scaling ? char(1) : char(0));
  if (b.scaling) {
    const ScalingTrace& tr = *b.scaling;
    if (tr.indices.size() != tr.steps) throw IntegrityError("bitstream: malformed scaling trace");
    bsio::put_u32(s, tr.steps);
    bsio::put_u32(s, tr.m);
    bsio::put_u64(s, tr.seed);
    uint32_t bits_per = ceil_log2(tr.m);
    uint8_t acc = 0;
    int nbits = 0;
    for (uint32_t idx : tr.indices) {
      for (int bit = int(bits_per) - 1; bit >= 0; --bit) {
        acc = uint8_t((acc << 1) | ((idx >> bit) & 1u));
        if (++nbits == 8) {
          s.push_back(char(acc));
          acc = 0;
          nbits = 0;
        }
      }
    }
    if (nbits > 0) s.push_back(char(uint8_t(acc << (8 - nbits))));
  }
  return s;
}

inline Bitstream parse_bitstream(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "VOVB") != 0)
    throw FormatError("bitstream: bad magic, expected VOVB");
  bsio::Reader rd{bytes, 4};
  Bitstream b;
  b.version = rd.u16();
  if (b.version != 1) throw FormatError("bitstream: unsupported version " + std::to_string(b.version));
  b.config_digest = rd.u64();
  b.proj_seed = rd.u64();
  b.sampler_seed = rd.u64();
  b.s = rd.f32();
  for (float& p : b.psi) p = rd.f32();
  b.symbol_count = rd.u32();
  uint32_t payload_len = rd.u32();
  b.payload = rd.bytes(payload_len);
  uint8_t flag = rd.u8();
  if (flag > 1) throw FormatError("bitstream: bad scaling flag");
  if (flag == 1) {
    ScalingTrace tr;
    tr.steps = rd.u32();
    tr.m = rd.u32();
    tr.seed = rd.u64();
    if (tr.m == 0 || tr.steps == 0 || tr.steps > (1u << 24))
      throw FormatError("bitstream: implausible scaling block");
    uint32_t bits_per = ceil_log2(tr.m);
    size_t nbytes = (size_t(tr.steps) * bits_per + 7) / 8;
    std::string packed = rd.bytes(nbytes);
    tr.indices.assign(tr.steps, 0);
    size_t bitpos = 0;
    for (uint32_t i = 0; i < tr.steps; ++i) {
      uint32_t idx = 0;
      for (uint32_t bit = 0; bit < bits_per; ++bit, ++bitpos)
        idx = (idx << 1) | ((uint8_t(packed[bitpos / 8]) >> (7 - bitpos % 8)) & 1u);
      if (idx >= tr.m) throw FormatError("bitstream: scaling index out of range");
      tr.indices[i] = idx;
    }
    b.scaling = std::move(tr);
  }
  if (rd.pos != bytes.size()) throw FormatError("bitstream: trailing bytes");
  return b;
}

struct BitAccounting {
  uint64_t payload_bits = 0;
  uint64_t header_bits = 0;
  uint64_t scaling_index_bits = 0;  // exact steps * ceil(log2 m), before byte padding
  uint64_t scaling_block_bits = 0;  // steps/m/seed fields plus padding
  uint64_t total_bits = 0;

  double bits_per_dim(size_t dim) const { return double(total_bits) / double(dim); }
};

inline BitAccounting accounting(const Bitstream& b) {
  BitAccounting acc;
  acc.total_bits = 8 * serialize_bitstream(b).size();
  acc.payload_bits = 8 * b.payload.size();
  if (b.scaling) {
    acc.scaling_index_bits = side_information_bits(b.scaling->steps, b.scaling->m);
    uint64_t packed = 8 * ((acc.scaling_index_bits + 7) / 8);
    acc.scaling_block_bits = 128 + (packed - acc.scaling_index_bits);
  }
  acc.header_bits =
      acc.total_bits - acc.payload_bits - acc.scaling_index_bits - acc.scaling_block_bits;
  return acc;
}

// ---- encode / decode -----------------------------------------------------------

struct ScaleOptions {
  uint32_t steps = 100;
  uint32_t m = 16;
  uint64_t seed = 0;
};

struct EncodeResult {
  Bitstream stream;
  Vec reconstruction;  // exactly what the decoder returns for this stream
  BitAccounting bits;
  Stage1Trace stage1;
  Stage2Trace stage2;
};

namespace detail {

// Reconstruct the adapted field's ingredients a decoder can rebuild from the
// stream alone (everything downstream of quantization uses the f32 header
// values, so encoder and decoder agree bit for bit).
struct DecodedVector {
  Vec v_hat;
  AdaptationDeltas deltas;
};

inline DecodedVector rebuild_vector(const VectorFieldNet& net, const CodecConfig& cfg,
                                    const Bitstream& bs) {
  LoraSpec spec = LoraSpec::for_net(net, cfg.rank);
  HashProjection proj = build_projection(bs.proj_seed, spec, cfg.k);
  if (int(bs.symbol_count) != cfg.k)
    throw IntegrityError("bitstream symbol count does not match config k");
  EntropyModel em;
  for (int i = 0; i < 9; ++i) em.psi[size_t(i)] = double(bs.psi[size_t(i)]);
  FrozenEntropyModel fm = FrozenEntropyModel::freeze(em, cfg.q_max);
  Symbols symbols = range_decode(reinterpret_cast<const uint8_t*>(bs.payload.data()),
                                 bs.payload.size(), bs.symbol_count, fm);
  DecodedVector out;
  out.v_hat = dequantize(symbols, double(bs.s));
  OneVector ov{out.v_hat, bs.proj_seed};
  out.deltas = expand_vector(ov, proj, net, spec);
  return out;
}

inline Vec ode_decode(const VectorField& field, size_t dim, const TimeGrid& grid, uint64_t seed,
                      double stop_tau) {
  PrngStream init(seed, "ode-init");
  TrajState state{init.normal_vector(0, 0, dim), grid.boundaries.back()};
  int stop = -1;
  for (int j = 0; j <= grid.steps(); ++j)
    if (std::abs(grid.boundaries[size_t(j)] - stop_tau) < 1e-12) stop = j;
  if (stop < 0) throw DomainError("decode: stop time must be a grid boundary");
  for (int n = grid.steps(); n > stop; --n) ode_step(state, grid.dt(n), field);
  state.t = grid.boundaries[size_t(stop)];  // pin against accumulated subtraction error
  return one_step_map(state, field);
}

}  // namespace detail

inline Vec decode(const VectorFieldNet& net, const Bitstream& bs, const CodecConfig& cfg) {
  cfg.validate();
  if (bs.config_digest != cfg.digest())
    throw ConfigError(
        "config digest mismatch: this bitstream was encoded under a different configuration; "
        "decode with the exact config file used at encode time");
  if (bs.proj_seed != cfg.proj_seed || bs.sampler_seed != cfg.sampler_seed)
    throw IntegrityError("bitstream seeds disagree with the config");
  detail::DecodedVector dv = detail::rebuild_vector(net, cfg, bs);
  VectorField field = net.field(dv.deltas);
  size_t dim = size_t(net.config.input_dim);
  if (bs.scaling) {
    TimeGrid grid = TimeGrid::uniform(int(bs.scaling->steps), cfg.eta0, cfg.eta1);
    return decode_scaled(field, dim, *bs.scaling, grid);
  }
  return detail::ode_decode(field, dim, cfg.grid(), bs.sampler_seed, cfg.eta0);
}

// Deterministic route stopped early: integrate to tau, then one-step map.
inline Vec decode_early_stop(const VectorFieldNet& net, const Bitstream& bs,
                             const CodecConfig& cfg, double tau) {
  cfg.validate();
  if (bs.config_digest != cfg.digest())
    throw ConfigError(
        "config digest mismatch: this bitstream was encoded under a different configuration; "
        "decode with the exact config file used at encode time");
  detail::DecodedVector dv = detail::rebuild_vector(net, cfg, bs);
  VectorField field = net.field(dv.deltas);
  return detail::ode_decode(field, size_t(net.config.input_dim), cfg.grid(), bs.sampler_seed, tau);
}

inline EncodeResult encode(const VectorFieldNet& net, const Vec& x, const CodecConfig& cfg,
                           const std::optional<ScaleOptions>& scale = {}) {
  cfg.validate();
  if (int(x.size()) != net.config.input_dim)
    throw DimensionError("encode: signal dimension != net input_dim");

  LoraSpec spec = LoraSpec::for_net(net, cfg.rank);
  HashProjection proj = build_projection(cfg.proj_seed, spec, cfg.k);

  Stage1Config s1;
  s1.steps = cfg.stage1_steps;
  s1.batch_size = cfg.batch_size;
  s1.lr = cfg.stage1_lr;
  s1.weight_decay = cfg.weight_decay;
  s1.v_init_scale = cfg.v_init_scale;
  s1.t_lo = cfg.eta0;
  s1.t_hi = 1.0 - cfg.eta1;
  s1.seed = derive_seed(cfg.fit_seed, 1);

  EncodeResult res;
  OneVector ov1 = fit_vector_stage1(net, x, spec, proj, cfg.k, s1, &res.stage1);

  Stage2Config s2;
  s2.steps = cfg.stage2_steps;
  s2.batch_size = cfg.batch_size;
  s2.lr = cfg.stage2_lr;
  s2.weight_decay = cfg.weight_decay;
  s2.lambda = cfg.lambda;
  s2.t_lo = cfg.eta0;
  s2.t_hi = 1.0 - cfg.eta1;
  s2.q_max = cfg.q_max;
  s2.seed = derive_seed(cfg.fit_seed, 2);
  Stage2Result r2 = fit_stage2(net, proj, spec, ov1, x, s2, &res.stage2);

  Bitstream bs;
  bs.config_digest = cfg.digest();
  bs.proj_seed = cfg.proj_seed;
  bs.sampler_seed = cfg.sampler_seed;
  bs.s = float(r2.s);
  for (int i = 0; i < 9; ++i) bs.psi[size_t(i)] = float(r2.em.psi[size_t(i)]);

  // From here on everything runs off the f32-rounded header values, exactly
  // as the decoder will see them.
  EntropyModel em32;
  for (int i = 0; i < 9; ++i) em32.psi[size_t(i)] = double(bs.psi[size_t(i)]);
  FrozenEntropyModel fm = FrozenEntropyModel::freeze(em32, cfg.q_max);
  Symbols symbols = quantize(r2.ov.v, double(bs.s));
  bs.symbol_count = uint32_t(symbols.size());
  bs.payload = range_encode(symbols, fm);

  if (scale) {
    if (scale->m < 1) throw ConfigError("encode: scaling needs at least one candidate");
    detail::DecodedVector dv = detail::rebuild_vector(net, cfg, bs);
    VectorField field = net.field(dv.deltas);
    TimeGrid grid = TimeGrid::uniform(int(scale->steps), cfg.eta0, cfg.eta1);
    ScaledEncodeResult sr = encode_scaled(field, x, grid, scale->m, scale->seed);
    bs.scaling = std::move(sr.trace);
  }

  res.stream = std::move(bs);
  res.reconstruction = decode(net, res.stream, cfg);
  res.bits = accounting(res.stream);
  return res;
}

inline void save_bitstream(const Bitstream& b, const std::string& path) {
  write_file_atomic(path, serialize_bitstream(b));
}

inline Bitstream load_bitstream(const std::string& path) {
  return parse_bitstream(read_file(path));
}

}  // namespace vov
