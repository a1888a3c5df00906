#pragma once

#include <functional>

#include "vov/common.hpp"

namespace vov {

// Linear-interpolation noising path: x_t = (1-t) x + t eps with eps ~ N(0,I).
// Time runs 1 -> 0 at generation. All grids are clamped to [eta0, 1-eta1] so
// the 1/t and 1/(1-t) factors below stay finite.

constexpr double kDefaultEta0 = 1e-3;
constexpr double kDefaultEta1 = 1e-3;

using VectorField = std::function<Vec(const Vec&, double)>;

struct ScheduleCoeffs {
  double t;
  double beta;          // drift coefficient -1/(1-t)
  double sigma;         // diffusion coefficient sqrt(2t/(1-t))
  double alpha;         // interpolation weight 1-t
  double marginal_var;  // per-coordinate variance t^2 of x_t | x
};

struct TrajState {
  Vec x;
  double t;
};

// Isotropic Gaussian with shared per-coordinate variance.
struct KernelParams {
  Vec mean;
  double var;
};

struct TimeGrid {
  std::vector<double> boundaries;  // ascending, boundaries.front()=eta0, .back()=1-eta1
  double eta0 = kDefaultEta0;
  double eta1 = kDefaultEta1;

  TimeGrid() = default;
  TimeGrid(std::vector<double> b, double e0, double e1) : boundaries(std::move(b)), eta0(e0), eta1(e1) {
    validate();
  }

  static TimeGrid uniform(int steps, double e0 = kDefaultEta0, double e1 = kDefaultEta1) {
    if (steps < 1) throw DomainError("TimeGrid: need at least one step");
    if (!(e0 > 0.0) || !(e1 > 0.0) || !(e0 < 1.0 - e1))
      throw DomainError("TimeGrid: clamps must satisfy 0 < eta0 < 1-eta1 < 1");
    std::vector<double> b(size_t(steps) + 1);
    double lo = e0, hi = 1.0 - e1;
    for (int j = 0; j <= steps; ++j) b[size_t(j)] = lo + (hi - lo) * double(j) / double(steps);
    b.front() = lo;
    b.back() = hi;
    return TimeGrid(std::move(b), e0, e1);
  }

  void validate() const {
    if (boundaries.size() < 2) throw DomainError("TimeGrid: need at least two boundaries");
    for (size_t j = 1; j < boundaries.size(); ++j)
      if (!(boundaries[j] > boundaries[j - 1])) throw DomainError("TimeGrid: boundaries must ascend");
    if (boundaries.front() < eta0 - 1e-15 || boundaries.back() > 1.0 - eta1 + 1e-15)
      throw DomainError("TimeGrid: boundaries must lie in [eta0, 1-eta1]");
  }

  int steps() const { return int(boundaries.size()) - 1; }
  double dt(int n) const { return boundaries[size_t(n)] - boundaries[size_t(n) - 1]; }
};

inline Vec interpolate(const Vec& x, const Vec& eps, double t) {
  require_same_size(x, eps, "interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("interpolate: t must lie in [0,1]");
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (1.0 - t) * x[i] + t * eps[i];
  return out;
}

// Field whose flow transports the marginals exactly: (x_t - x)/t = eps - x on the path.
inline Vec optimal_vf(const Vec& x_t, double t, const Vec& x) {
  require_same_size(x_t, x, "optimal_vf");
  if (!(t > 0.0)) throw DomainError("optimal_vf: t must be positive");
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (x_t[i] - x[i]) / t;
  return out;
}

inline ScheduleCoeffs schedule_coeffs(double t) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("schedule_coeffs: t must lie in (0,1)");
  return {t, -1.0 / (1.0 - t), std::sqrt(2.0 * t / (1.0 - t)), 1.0 - t, t * t};
}

// Conditional marginal of the noising path: x_t | x ~ N((1-t) x, t^2 I).
inline KernelParams marginal_kernel(const Vec& x, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("marginal_kernel: t must lie in [0,1]");
  Vec mean(x.size());
  for (size_t i = 0; i < x.size(); ++i) mean[i] = (1.0 - t) * x[i];
  return {std::move(mean), t * t};
}

// Score of the marginal from the field: grad log p_t(x_t) = -(x_t + (1-t) v)/t.
inline Vec score_from_vf(const Vec& v, const Vec& x_t, double t) {
  require_same_size(v, x_t, "score_from_vf");
  if (!(t > 0.0)) throw DomainError("score_from_vf: t must be positive");
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = -(x_t[i] + (1.0 - t) * v[i]) / t;
  return out;
}

// Explicit Euler step of dx_t = v dt backward in time: x <- x - v dt, t <- t - dt.
inline void ode_step(TrajState& state, double dt, const VectorField& vf) {
  if (!(dt > 0.0)) throw DomainError("ode_step: dt must be positive");
  if (state.t - dt < -1e-12) throw DomainError("ode_step: step crosses t=0");
  Vec v = vf(state.x, state.t);
  require_same_size(v, state.x, "ode_step");
  if (!all_finite(v)) throw NumericError("ode_step: vector field returned non-finite values");
  for (size_t i = 0; i < state.x.size(); ++i) state.x[i] -= v[i] * dt;
  state.t -= dt;
}

// Euler-Maruyama step of the reverse SDE
//   dx_t = (x_t/(1-t) + 2 v) dt + sqrt(2t/(1-t)) dw,
// stepping t -> t - dt with provided standard-normal noise.
inline void sde_step(TrajState& state, double dt, const VectorField& vf, const Vec& noise) {
  if (!(state.t > 0.0 && state.t < 1.0))
    throw DomainError("sde_step: t must lie in (0,1), diffusion diverges at the ends");
  if (!(dt > 0.0)) throw DomainError("sde_step: dt must be positive");
  require_same_size(noise, state.x, "sde_step");
  Vec v = vf(state.x, state.t);
  require_same_size(v, state.x, "sde_step");
  if (!all_finite(v)) throw NumericError("sde_step: vector field returned non-finite values");
  double t = state.t;
  double sd = std::sqrt(2.0 * t / (1.0 - t) * dt);
  for (size_t i = 0; i < state.x.size(); ++i) {
    double drift = state.x[i] / (1.0 - t) + 2.0 * v[i];
    state.x[i] = state.x[i] - drift * dt + sd * noise[i];
  }
  state.t = t - dt;
}

// Transition kernel of one Euler-Maruyama step under the model field.
inline KernelParams em_kernel(const Vec& x_t, double t_n, double dt, const Vec& v) {
  require_same_size(v, x_t, "em_kernel");
  if (!(t_n > 0.0 && t_n < 1.0)) throw DomainError("em_kernel: t must lie in (0,1)");
  if (!(dt > 0.0)) throw DomainError("em_kernel: dt must be positive");
  Vec mean(x_t.size());
  for (size_t i = 0; i < x_t.size(); ++i)
    mean[i] = x_t[i] - (x_t[i] / (1.0 - t_n) + 2.0 * v[i]) * dt;
  return {std::move(mean), 2.0 * t_n / (1.0 - t_n) * dt};
}

// Same kernel under the analytic field; target of the selection step.
inline KernelParams optimal_kernel(const Vec& x_t, double t_n, double dt, const Vec& x) {
  return em_kernel(x_t, t_n, dt, optimal_vf(x_t, t_n, x));
}

// One-hop reconstruction x_hat = x_t - t v(x_t, t); exact for the analytic field.
inline Vec one_step_map(const TrajState& state, const VectorField& vf) {
  if (!(state.t > 0.0 && state.t <= 1.0)) throw DomainError("one_step_map: t must lie in (0,1]");
  Vec v = vf(state.x, state.t);
  require_same_size(v, state.x, "one_step_map");
  if (!all_finite(v)) throw NumericError("one_step_map: vector field returned non-finite values");
  Vec out(state.x.size());
  for (size_t i = 0; i < state.x.size(); ++i) out[i] = state.x[i] - state.t * v[i];
  return out;
}

// sigma_t^2 grad log p(x_t | x0 = x) = -2 (x_t - (1-t) x) / (t (1-t)).
// The pinned-endpoint drift beta_t x_t - doob_drift(...) coincides with the
// reverse-SDE drift evaluated on the analytic field.
inline Vec doob_drift(const Vec& x_t, double t, const Vec& x) {
  require_same_size(x_t, x, "doob_drift");
  if (!(t > 0.0 && t < 1.0)) throw DomainError("doob_drift: t must lie in (0,1)");
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    out[i] = -2.0 * (x_t[i] - (1.0 - t) * x[i]) / (t * (1.0 - t));
  return out;
}

}  // namespace vov
