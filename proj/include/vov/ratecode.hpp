#pragma once

#include <array>

#include "vov/adapt.hpp"

namespace vov {

using Symbols = std::vector<int32_t>;

// ---- scalar quantizer -------------------------------------------------------

inline Symbols quantize(const Vec& v, double s) {
  if (!(s > 0.0)) throw DomainError("quantize: step size must be positive");
  Symbols q(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double r = v[i] / s;
    if (!std::isfinite(r) || std::abs(r) > 2e9) throw NumericError("quantize: symbol overflow");
    q[i] = int32_t(std::llround(r));  // halves round away from zero
  }
  return q;
}

inline Vec dequantize(const Symbols& q, double s) {
  if (!(s > 0.0)) throw DomainError("dequantize: step size must be positive");
  Vec v(q.size());
  for (size_t i = 0; i < q.size(); ++i) v[i] = double(q[i]) * s;
  return v;
}

// Differentiable stand-in for quantization in normalized symbol space:
// z = v/s + u with u ~ U(-1/2, 1/2).
inline Vec relax_noise(const Vec& v, double s, const Vec& u) {
  require_same_size(v, u, "relax_noise");
  if (!(s > 0.0)) throw DomainError("relax_noise: step size must be positive");
  Vec z(v.size());
  for (size_t i = 0; i < v.size(); ++i) z[i] = v[i] / s + u[i];
  return z;
}

// ---- factorized entropy model ----------------------------------------------
//
// A nine-parameter monotone CDF over symbol space: two 1->2->1 affine layers
// with softplus-positive weights and a tanh gate, squashed by a sigmoid.
// Strict monotonicity holds for every psi since the gate slope 1 + tanh(a)
// (1 - tanh^2 h) stays positive.

inline double softplus(double w) { return w > 0.0 ? w + std::log1p(std::exp(-w)) : std::log1p(std::exp(w)); }
inline double sigmoid(double y) { return y >= 0.0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y)); }

struct EntropyModel {
  // psi layout: w1[2], b1[2], a1[2], w2[2], b2
  std::array<double, 9> psi;

  // Symmetric start (b1 = b2 = 0 gives pmf(q) = pmf(-q)) with gentle slope so
  // the initial pmf covers the whole clipped alphabet.
  static EntropyModel init_default() {
    EntropyModel em;
    double w = std::log(std::exp(0.25) - 1.0);  // softplus(w) = 0.25
    em.psi = {w, w, 0.0, 0.0, 0.5, 0.5, w, w, 0.0};
    return em;
  }

  struct Logit {
    double y = 0.0;
    double dx = 0.0;
    std::array<double, 9> dpsi{};
  };

  Logit logit(double x) const {
    Logit out;
    double y = psi[8];
    out.dpsi[8] = 1.0;
    for (int i = 0; i < 2; ++i) {
      double sp1 = softplus(psi[0 + i]);
      double sp2 = softplus(psi[6 + i]);
      double ga = std::tanh(psi[4 + i]);
      double h = sp1 * x + psi[2 + i];
      double th = std::tanh(h);
      double g = h + ga * th;
      double dgdh = 1.0 + ga * (1.0 - th * th);
      y += sp2 * g;
      out.dx += sp2 * dgdh * sp1;
      out.dpsi[0 + i] = sp2 * dgdh * x * sigmoid(psi[0 + i]);
      out.dpsi[2 + i] = sp2 * dgdh;
      out.dpsi[4 + i] = sp2 * th * (1.0 - ga * ga);
      out.dpsi[6 + i] = g * sigmoid(psi[6 + i]);
    }
    out.y = y;
    return out;
  }

  double cdf(double x) const { return sigmoid(logit(x).y); }

  // Probability of the unit bin around x, via the cancellation-free identity
  // sigma(yb) - sigma(ya) = sigma(yb) sigma(-ya) (1 - e^{ya-yb}), so tail bins
  // stay positive down to double underflow.
  struct BinProb {
    double p = 0.0;
    double dx = 0.0;
    std::array<double, 9> dpsi{};
  };

  BinProb bin_prob(double x) const {
    Logit lo = logit(x - 0.5);
    Logit hi = logit(x + 0.5);
    BinProb out;
    out.p = sigmoid(hi.y) * sigmoid(-lo.y) * (-std::expm1(lo.y - hi.y));
    double dlo = sigmoid(lo.y) * sigmoid(-lo.y);  // d sigma / dy at the bin edges
    double dhi = sigmoid(hi.y) * sigmoid(-hi.y);
    out.dx = dhi * hi.dx - dlo * lo.dx;
    for (int i = 0; i < 9; ++i) out.dpsi[size_t(i)] = dhi * hi.dpsi[size_t(i)] - dlo * lo.dpsi[size_t(i)];
    return out;
  }

  double pmf(int32_t q) const { return bin_prob(double(q)).p; }

  // Everything the clipped alphabet does not cover.
  double escape_mass(int q_max) const {
    double lo = logit(-double(q_max) - 0.5).y;
    double hi = logit(double(q_max) + 0.5).y;
    return sigmoid(lo) + sigmoid(-hi);
  }
};

// Model cost in bits: in-alphabet symbols at -log2 pmf, escapes at the escape
// mass plus their 32 raw bits.
inline double rate_bits(const EntropyModel& em, const Symbols& q, int q_max) {
  if (q_max < 1) throw DomainError("rate_bits: q_max must be positive");
  constexpr double kInvLn2 = 1.4426950408889634;
  double esc = em.escape_mass(q_max);
  double bits = 0.0;
  for (int32_t s : q) {
    double p = (std::abs(s) <= q_max) ? em.pmf(s) : esc;
    if (!(p > 0.0) || !std::isfinite(p)) throw ModelError("rate_bits: pmf underflow");
    bits += -std::log(p) * kInvLn2;
    if (std::abs(s) > q_max) bits += 32.0;
  }
  return bits;
}

// ---- range coder ------------------------------------------------------------
//
// Carry-less 32-bit range coder with 16-bit frequency precision. The encoder
// occasionally clamps the range at the BOT boundary instead of propagating a
// carry; the matched decoder replays the identical control flow, so streams
// round-trip exactly and stay within a fraction of a percent of entropy.

constexpr uint32_t kRangeTop = 1u << 24;
constexpr uint32_t kRangeBot = 1u << 16;
constexpr uint32_t kFreqTotal = 1u << 16;

class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq, uint32_t tot) {
    if (freq == 0 || cum + freq > tot || tot > kRangeBot)
      throw DomainError("RangeEncoder: bad frequency interval");
    range_ /= tot;
    low_ += cum * range_;
    range_ *= freq;
    normalize();
  }

  void encode_raw16(uint16_t v) { encode(v, 1, kFreqTotal); }

  std::string finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(char(uint8_t(low_ >> 24)));
      low_ <<= 8;
    }
    return std::move(out_);
  }

 private:
  void normalize() {
    while ((low_ ^ (low_ + range_)) < kRangeTop ||
           (range_ < kRangeBot && ((range_ = (0u - low_) & (kRangeBot - 1)), true))) {
      out_.push_back(char(uint8_t(low_ >> 24)));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::string out_;
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | in();
  }

  uint32_t decode_freq(uint32_t tot) {
    range_ /= tot;
    uint32_t dart = (code_ - low_) / range_;
    if (dart >= tot) throw DecodeError("corrupted range-coded payload", pos_);
    return dart;
  }

  void decode_update(uint32_t cum, uint32_t freq) {
    low_ += cum * range_;
    range_ *= freq;
    while ((low_ ^ (low_ + range_)) < kRangeTop ||
           (range_ < kRangeBot && ((range_ = (0u - low_) & (kRangeBot - 1)), true))) {
      code_ = (code_ << 8) | in();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  uint16_t decode_raw16() {
    uint32_t v = decode_freq(kFreqTotal);
    decode_update(v, 1);
    return uint16_t(v);
  }

  size_t consumed() const { return pos_; }

 private:
  uint8_t in() {
    if (pos_ >= size_) throw DecodeError("range-coded payload truncated", pos_);
    return data_[pos_++];
  }

  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

// Integer frequency table over the clipped alphabet [-q_max, q_max] plus a
// final escape slot, summing exactly to kFreqTotal. Built from f32-rounded
// model parameters so encoder and decoder freeze identical tables.
struct FrozenEntropyModel {
  int q_max = 0;
  std::vector<uint32_t> freq;
  std::vector<uint32_t> cum;  // prefix sums, size freq.size()+1

  static FrozenEntropyModel freeze(const EntropyModel& em, int q_max) {
    if (q_max < 1) throw DomainError("FrozenEntropyModel: q_max must be positive");
    size_t n = size_t(2 * q_max + 2);
    std::vector<double> p(n);
    for (int q = -q_max; q <= q_max; ++q) {
      double v = em.pmf(q);
      if (!(v >= 0.0) || !std::isfinite(v)) throw ModelError("freeze: pmf underflow");
      p[size_t(q + q_max)] = v;
    }
    p[n - 1] = em.escape_mass(q_max);

    FrozenEntropyModel fm;
    fm.q_max = q_max;
    fm.freq.resize(n);
    int64_t sum = 0;
    for (size_t i = 0; i < n; ++i) {
      int64_t f = std::llround(p[i] * double(kFreqTotal));
      if (f < 1) f = 1;
      fm.freq[i] = uint32_t(f);
      sum += f;
    }
    // Deterministic largest-bin adjustment to land exactly on kFreqTotal.
    int64_t diff = int64_t(kFreqTotal) - sum;
    while (diff != 0) {
      size_t best = 0;
      for (size_t i = 1; i < n; ++i)
        if (fm.freq[i] > fm.freq[best]) best = i;
      if (diff > 0) {
        ++fm.freq[best];
        --diff;
      } else {
        if (fm.freq[best] <= 1) throw ModelError("freeze: cannot balance frequency table");
        --fm.freq[best];
        ++diff;
      }
    }
    fm.cum.resize(n + 1, 0);
    for (size_t i = 0; i < n; ++i) fm.cum[i + 1] = fm.cum[i] + fm.freq[i];
    if (fm.cum[n] != kFreqTotal) throw ModelError("freeze: table does not sum to total");
    return fm;
  }

  size_t symbol_index(int32_t q) const { return size_t(q + q_max); }
  size_t escape_index() const { return freq.size() - 1; }

  size_t index_for_dart(uint32_t dart) const {
    size_t lo = 0, hi = freq.size();
    while (lo + 1 < hi) {
      size_t mid = (lo + hi) / 2;
      (cum[mid] <= dart ? lo : hi) = mid;
    }
    return lo;
  }
};

inline std::string range_encode(const Symbols& symbols, const FrozenEntropyModel& fm) {
  RangeEncoder enc;
  for (int32_t q : symbols) {
    if (std::abs(q) <= fm.q_max) {
      size_t i = fm.symbol_index(q);
      enc.encode(fm.cum[i], fm.freq[i], kFreqTotal);
    } else {
      size_t e = fm.escape_index();
      enc.encode(fm.cum[e], fm.freq[e], kFreqTotal);
      uint32_t raw = uint32_t(q);
      enc.encode_raw16(uint16_t(raw >> 16));
      enc.encode_raw16(uint16_t(raw));
    }
  }
  return enc.finish();
}

inline Symbols range_decode(const uint8_t* data, size_t size, size_t count,
                            const FrozenEntropyModel& fm) {
  Symbols out(count);
  if (count == 0) return out;
  RangeDecoder dec(data, size);
  for (size_t i = 0; i < count; ++i) {
    uint32_t dart = dec.decode_freq(kFreqTotal);
    size_t idx = fm.index_for_dart(dart);
    dec.decode_update(fm.cum[idx], fm.freq[idx]);
    if (idx == fm.escape_index()) {
      uint32_t raw = uint32_t(dec.decode_raw16()) << 16;
      raw |= dec.decode_raw16();
      out[i] = int32_t(raw);
      if (std::abs(out[i]) <= fm.q_max)
        throw DecodeError("escape carried in-alphabet symbol", dec.consumed());
    } else {
      out[i] = int32_t(idx) - fm.q_max;
    }
  }
  return out;
}

// ---- stage 2: joint (v, s, psi) fit ------------------------------------------

struct Stage2Config {
  int steps = 400;
  int batch_size = 64;
  double lr = 1.5e-3;
  double weight_decay = 1e-4;  // applied to v only; s and psi decay-free
  double lambda = 3e-3;
  double t_lo = kDefaultEta0;
  double t_hi = 1.0 - kDefaultEta1;
  int q_max = 64;
  uint64_t seed = 0;
  int snapshot_every = 50;
};

struct Stage2Result {
  OneVector ov;
  double s = 0.0;
  EntropyModel em;
};

struct Stage2Trace {
  std::vector<double> loss, rate, distortion;
  std::vector<std::array<double, 9>> psi_snapshots;
};

// Joint descent on L = L_FM(v + s*u) + lambda * sum_i -log2 p_psi(v_i/s + u_i),
// the uniform-noise relaxation of quantize-then-code. s is optimized in the
// log domain to stay positive; its start max|v|/16 puts initial symbols well
// inside the clipped alphabet.
inline Stage2Result fit_stage2(const VectorFieldNet& net, const HashProjection& proj,
                               const LoraSpec& spec, const OneVector& ov0, const Vec& x,
                               const Stage2Config& cfg, Stage2Trace* trace = nullptr) {
  check_projection(ov0, proj, spec);
  if (int(x.size()) != net.config.input_dim)
    throw DimensionError("fit_stage2: signal dimension != net input_dim");
  constexpr double kInvLn2 = 1.4426950408889634;

  Vec v = ov0.v;
  const size_t k = v.size();
  double vmax = 0.0;
  for (double c : v) vmax = std::max(vmax, std::abs(c));
  double log_s = std::log(std::max(vmax / 16.0, 1e-6));
  EntropyModel em = EntropyModel::init_default();

  std::vector<Vec> corpus = {x};
  AdamW opt(cfg.lr, 0.0);  // decay handled manually so it touches v only
  PrngStream unif(cfg.seed, "stage2-u");
  Vec dv(k), dv_fm;
  double dlog_s = 0.0;
  std::array<double, 9> dpsi{};

  for (int step = 0; step < cfg.steps; ++step) {
    double s = std::exp(log_s);
    Vec u(k);
    {
      size_t i = 0;
      for (uint32_t draw = 0; i < k; ++draw) {
        auto w = unif.words(uint32_t(step), 0, draw);
        for (int j = 0; j < 4 && i < k; ++j) u[i++] = PrngStream::to_uniform(w[size_t(j)]) - 0.5;
      }
    }

    // distortion term on the dequantized relaxation v + s*u
    Vec v_tilde(k);
    for (size_t i = 0; i < k; ++i) v_tilde[i] = v[i] + s * u[i];
    FlowBatch batch = sample_flow_batch(cfg.seed, uint32_t(step), corpus, int(x.size()),
                                        cfg.batch_size, cfg.t_lo, cfg.t_hi);
    double dist;
    try {
      dist = loss_fm_and_grad_v(net, proj, spec, v_tilde, batch, dv_fm);
    } catch (const NumericError&) {
      throw TrainingError("fit_stage2: loss diverged at step " + std::to_string(step));
    }

    dlog_s = 0.0;
    dpsi.fill(0.0);
    for (size_t i = 0; i < k; ++i) {
      dv[i] = dv_fm[i];
      dlog_s += dv_fm[i] * s * u[i];
    }

    // rate term in normalized symbol space z = v/s + u
    double rate = 0.0;
    for (size_t i = 0; i < k; ++i) {
      double z = v[i] / s + u[i];
      auto bp = em.bin_prob(z);
      if (!(bp.p > 0.0) || !std::isfinite(bp.p)) throw ModelError("fit_stage2: pmf underflow");
      rate += -std::log(bp.p) * kInvLn2;
      double drdz = -bp.dx / (bp.p) * kInvLn2;
      dv[i] += cfg.lambda * drdz / s;
      dlog_s += cfg.lambda * drdz * (-v[i] / s);
      for (int j = 0; j < 9; ++j)
        dpsi[size_t(j)] += cfg.lambda * (-bp.dpsi[size_t(j)] / bp.p) * kInvLn2;
    }

    double loss = dist + cfg.lambda * rate;
    if (!std::isfinite(loss)) throw TrainingError("fit_stage2: loss diverged at step " + std::to_string(step));

    std::vector<AdamW::View> views = {
        {v.data(), dv.data(), k},
        {&log_s, &dlog_s, 1},
        {em.psi.data(), dpsi.data(), 9},
    };
    opt.step(views);
    for (size_t i = 0; i < k; ++i) v[i] -= cfg.lr * cfg.weight_decay * v[i];

    if (trace) {
      trace->loss.push_back(loss);
      trace->rate.push_back(rate);
      trace->distortion.push_back(dist);
      if (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0)
        trace->psi_snapshots.push_back(em.psi);
    }
  }

  Stage2Result res;
  res.ov.v = std::move(v);
  res.ov.proj_seed = ov0.proj_seed;
  res.s = std::exp(log_s);
  res.em = em;
  return res;
}

}  // namespace vov
