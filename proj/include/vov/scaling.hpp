#pragma once

#include "vov/dynamics.hpp"
#include "vov/prng.hpp"

namespace vov {

// Branching record of a scaled decode: which of the m counter-addressed
// candidates was kept at each of the grid's steps, stored from t_N down to t_1.
struct ScalingTrace {
  uint32_t steps = 0;
  uint32_t m = 1;
  uint64_t seed = 0;
  std::vector<uint32_t> indices;
};

inline uint32_t ceil_log2(uint32_t m) {
  if (m == 0) throw DomainError("ceil_log2: m must be positive");
  uint32_t bits = 0;
  while ((1u << bits) < m) ++bits;
  return bits;
}

inline uint64_t side_information_bits(uint32_t steps, uint32_t m) {
  return uint64_t(steps) * uint64_t(ceil_log2(m));
}

// Log ratio of two equal-variance isotropic Gaussians at a candidate point.
inline double log_importance_weight(const Vec& cand, const KernelParams& proposal,
                                    const KernelParams& target) {
  if (std::abs(proposal.var - target.var) > 1e-12 * std::max(proposal.var, target.var))
    throw DomainError("log_importance_weight: kernels must share their variance");
  return (squared_distance(cand, proposal.mean) - squared_distance(cand, target.mean)) /
         (2.0 * proposal.var);
}

// Max-subtracted exponentiation; returns unnormalized weights and their sum.
inline double importance_weights(const std::vector<double>& logw, std::vector<double>& w) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logw) mx = std::max(mx, l);
  if (!std::isfinite(mx)) throw NumericError("importance_weights: no finite log weight");
  w.resize(logw.size());
  double total = 0.0;
  for (size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - mx);
    total += w[i];
  }
  return total;
}

// Fixed-order categorical draw by CDF scan.
inline size_t categorical(const std::vector<double>& w, double total, double u) {
  double threshold = u * total;
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (threshold <= acc) return i;
  }
  return w.size() - 1;
}

struct ScaledEncodeResult {
  ScalingTrace trace;
  Vec reconstruction;
};

namespace detail {

inline Vec candidate(const PrngStream& stream, uint32_t n, uint32_t m, const KernelParams& kp) {
  Vec z = stream.normal_vector(n, m, kp.mean.size());
  double sd = std::sqrt(kp.var);
  for (size_t i = 0; i < z.size(); ++i) z[i] = kp.mean[i] + sd * z[i];
  return z;
}

}  // namespace detail

// Guided stochastic decode: at every grid step draw m candidates from the
// model's transition kernel and keep one by importance weight against the
// kernel pinned to the true signal. All randomness is counter-addressed by
// (seed, step, candidate), so the kept path replays exactly from the indices.
// The final hop from t_0 is the deterministic one-step map.
inline ScaledEncodeResult encode_scaled(const VectorField& vf, const Vec& x, const TimeGrid& grid,
                                        uint32_t m, uint64_t seed) {
  if (m < 1) throw DomainError("encode_scaled: need at least one candidate");
  const int N = grid.steps();
  PrngStream init(seed, "scale-init");
  PrngStream cand(seed, "scale-cand");
  PrngStream select(seed, "scale-select");

  ScaledEncodeResult res;
  res.trace.steps = uint32_t(N);
  res.trace.m = m;
  res.trace.seed = seed;
  res.trace.indices.reserve(size_t(N));

  Vec state = init.normal_vector(0, 0, x.size());
  std::vector<double> logw(m), w;
  for (int n = N; n >= 1; --n) {
    double t_n = grid.boundaries[size_t(n)];
    double dt = grid.dt(n);
    Vec v = vf(state, t_n);
    if (!all_finite(v)) throw NumericError("encode_scaled: vector field returned non-finite values");
    KernelParams proposal = em_kernel(state, t_n, dt, v);
    KernelParams target = optimal_kernel(state, t_n, dt, x);
    for (uint32_t j = 0; j < m; ++j) {
      Vec c = detail::candidate(cand, uint32_t(n), j, proposal);
      logw[j] = log_importance_weight(c, proposal, target);
    }
    double total = importance_weights(logw, w);
    uint32_t pick = uint32_t(categorical(w, total, select.uniform(uint32_t(n), 0)));
    res.trace.indices.push_back(pick);
    state = detail::candidate(cand, uint32_t(n), pick, proposal);
  }
  res.reconstruction = one_step_map({std::move(state), grid.boundaries.front()}, vf);
  return res;
}

// Replay: regenerate only the kept candidate of each step. Bit-identical to
// the encoder's path because candidates are pure functions of their counters.
inline Vec decode_scaled(const VectorField& vf, size_t dim, const ScalingTrace& trace,
                         const TimeGrid& grid) {
  if (trace.m < 1) throw IntegrityError("decode_scaled: trace has no candidates");
  if (int(trace.steps) != grid.steps() || trace.indices.size() != trace.steps)
    throw IntegrityError("decode_scaled: trace does not match the time grid");
  for (uint32_t i : trace.indices)
    if (i >= trace.m) throw IntegrityError("decode_scaled: candidate index out of range");

  PrngStream init(trace.seed, "scale-init");
  PrngStream cand(trace.seed, "scale-cand");
  Vec state = init.normal_vector(0, 0, dim);
  const int N = grid.steps();
  for (int n = N; n >= 1; --n) {
    double t_n = grid.boundaries[size_t(n)];
    double dt = grid.dt(n);
    Vec v = vf(state, t_n);
    if (!all_finite(v)) throw NumericError("decode_scaled: vector field returned non-finite values");
    KernelParams proposal = em_kernel(state, t_n, dt, v);
    state = detail::candidate(cand, uint32_t(n), trace.indices[size_t(N - n)], proposal);
  }
  return one_step_map({std::move(state), grid.boundaries.front()}, vf);
}

}  // namespace vov
