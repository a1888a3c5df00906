#pragma once

#include <algorithm>
#include <complex>
#include <cstdio>
#include <functional>

#include "vov/fsio.hpp"
#include "vov/scaling.hpp"

namespace vov {

inline double mse(const Vec& a, const Vec& b) {
  require_same_size(a, b, "mse");
  return squared_distance(a, b) / double(a.size());
}

inline double psnr(const Vec& a, const Vec& b, double peak = 1.0) {
  return psnr_db(mse(a, b), peak);
}

// Small numeric table with a stable text form (%.12g, comma separated).
struct Csv {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::string str() const {
    std::string out;
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) out += ',';
      out += columns[i];
    }
    out += '\n';
    char buf[40];
    for (const auto& row : rows) {
      if (row.size() != columns.size()) throw DimensionError("Csv: ragged row");
      for (size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof buf, "%.12g", row[i]);
        out += buf;
      }
      out += '\n';
    }
    return out;
  }

  void write(const std::string& path) const { write_file_atomic(path, str()); }
};

// ---- decode-point sweep ---------------------------------------------------------

// Distortion of "integrate to tau, then jump" across every grid boundary.
// One integration pass serves all boundaries.
struct SweepResult {
  std::vector<double> tau;
  std::vector<double> mse_at;
  std::vector<double> psnr_at;

  size_t argmin_mse() const {
    size_t best = 0;
    for (size_t i = 1; i < mse_at.size(); ++i)
      if (mse_at[i] < mse_at[best]) best = i;
    return best;
  }

  Csv to_csv() const {
    Csv c;
    c.columns = {"tau", "mse", "psnr_db"};
    for (size_t i = 0; i < tau.size(); ++i) c.rows.push_back({tau[i], mse_at[i], psnr_at[i]});
    return c;
  }
};

inline SweepResult dp_sweep(const VectorField& vf, const Vec& x, const Vec& x1,
                            const TimeGrid& grid) {
  require_same_size(x, x1, "dp_sweep");
  SweepResult res;
  TrajState state{x1, grid.boundaries.back()};
  for (int n = grid.steps(); n >= 0; --n) {
    state.t = grid.boundaries[size_t(n)];  // pin to the boundary to avoid drift
    Vec recon = one_step_map(state, vf);
    res.tau.push_back(state.t);
    double e = mse(recon, x);
    res.mse_at.push_back(e);
    res.psnr_at.push_back(psnr_db(e));
    if (n > 0) ode_step(state, grid.dt(n), vf);
  }
  std::reverse(res.tau.begin(), res.tau.end());
  std::reverse(res.mse_at.begin(), res.mse_at.end());
  std::reverse(res.psnr_at.begin(), res.psnr_at.end());
  return res;
}

// ---- early-stopping error bound ---------------------------------------------------

// Certificate for the one-step-at-tau error: compares the measured
// reconstruction error against
//   (tau L + 1) exp(L (T - tau)) * int_tau^T ||e_t|| dt + tau ||e_tau||,
// where e_t is the field's residual along the clean interpolation path, T is
// the clamped horizon, and L is a sampled Lipschitz estimate times a safety
// factor. The bound certifies only when L_hat really dominates the field's
// state sensitivity; the caller sees all ingredients.
struct BoundReport {
  double measured = 0.0;
  double bound = 0.0;
  double l_hat = 0.0;
  double e_integral = 0.0;
  double e_tau = 0.0;
};

inline BoundReport bound_check(const VectorField& vf, const Vec& x, const Vec& x1, double tau,
                               const TimeGrid& grid, int quad_points = 129, int probes = 256,
                               uint64_t seed = 0) {
  require_same_size(x, x1, "bound_check");
  const double t_hi = grid.boundaries.back();
  if (!(tau >= grid.boundaries.front() - 1e-12 && tau < t_hi))
    throw DomainError("bound_check: tau must lie inside the grid");
  if (quad_points < 2) throw DomainError("bound_check: need at least two quadrature points");

  Vec target(x.size());
  for (size_t i = 0; i < x.size(); ++i) target[i] = x1[i] - x[i];
  auto residual_norm = [&](double t) {
    Vec v = vf(interpolate(x, x1, t), t);
    double s = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
      double d = v[i] - target[i];
      s += d * d;
    }
    return std::sqrt(s);
  };

  BoundReport rep;
  // trapezoid over [tau, t_hi]
  double h = (t_hi - tau) / double(quad_points - 1);
  double acc = 0.0;
  for (int j = 0; j < quad_points; ++j) {
    double t = tau + h * double(j);
    double e = residual_norm(t);
    if (j == 0) rep.e_tau = e;
    acc += (j == 0 || j == quad_points - 1) ? 0.5 * e : e;
  }
  rep.e_integral = acc * h;

  // sampled two-sided directional slopes around the clean path
  PrngStream rng(seed, "bound-probe");
  double span = std::max(l2_norm(x) + l2_norm(x1), 1.0) / std::sqrt(double(x.size()));
  double max_slope = 0.0;
  for (int p = 0; p < probes; ++p) {
    auto w = rng.words(uint32_t(p), 0, 0);
    double t = tau + (t_hi - tau) * PrngStream::to_uniform(w[0]);
    Vec base = interpolate(x, x1, t);
    Vec jitter = rng.normal_vector(uint32_t(p), 1, x.size());
    for (size_t i = 0; i < base.size(); ++i) base[i] += 0.25 * span * jitter[i];
    Vec dir = rng.normal_vector(uint32_t(p), 2, x.size());
    double dn = l2_norm(dir);
    if (dn == 0.0) continue;
    double step = 1e-3 * std::max(1.0, span);
    Vec lo(base), hi(base);
    for (size_t i = 0; i < base.size(); ++i) {
      double u = dir[i] / dn;
      lo[i] -= step * u;
      hi[i] += step * u;
    }
    Vec vlo = vf(lo, t), vhi = vf(hi, t);
    double diff = 0.0;
    for (size_t i = 0; i < vlo.size(); ++i) {
      double d = vhi[i] - vlo[i];
      diff += d * d;
    }
    max_slope = std::max(max_slope, std::sqrt(diff) / (2.0 * step));
  }
  rep.l_hat = 1.5 * max_slope;

  // measured error of the actual pipeline stopped at tau
  TrajState state{x1, t_hi};
  for (int n = grid.steps(); n >= 1; --n) {
    double b = grid.boundaries[size_t(n)];
    if (b <= tau + 1e-12) break;
    state.t = b;
    ode_step(state, b - std::max(grid.boundaries[size_t(n) - 1], tau), vf);
  }
  state.t = tau;
  rep.measured = std::sqrt(squared_distance(one_step_map(state, vf), x));

  rep.bound = (tau * rep.l_hat + 1.0) * std::exp(rep.l_hat * (t_hi - tau)) * rep.e_integral +
              tau * rep.e_tau;
  return rep;
}

// Analytic field plus the planted perturbation (c t - a/t) u: the one-hop
// output from any state at tau is x - (c tau^2 - a) u, so the sweep has an
// interior optimum at tau = sqrt(a/c) when that lies inside the grid.
inline VectorField planted_minimum_field(Vec x, Vec u, double c, double a) {
  require_same_size(x, u, "planted_minimum_field");
  return [x = std::move(x), u = std::move(u), c, a](const Vec& x_t, double t) {
    Vec v = optimal_vf(x_t, t, x);
    double g = c * t - a / t;
    for (size_t i = 0; i < v.size(); ++i) v[i] += g * u[i];
    return v;
  };
}

// ---- selection-kernel oracle -------------------------------------------------------

// One scalar selection step, repeated with fresh outer seeds, against a
// deliberately mismatched proposal (zero field). Reports the moments of the
// kept sample next to the target kernel's.
struct IsKernelReport {
  double target_mean = 0.0;
  double target_var = 0.0;
  double selected_mean = 0.0;
  double selected_var = 0.0;
  double mean_se = 0.0;
  uint32_t trials = 0;

  Csv to_csv() const {
    Csv c;
    c.columns = {"target_mean", "target_var", "selected_mean", "selected_var", "mean_se", "trials"};
    c.rows.push_back({target_mean, target_var, selected_mean, selected_var, mean_se, double(trials)});
    return c;
  }
};

inline IsKernelReport is_kernel_check(double t_n, double dt, double x, uint32_t m, uint32_t trials,
                                      uint64_t seed) {
  if (m < 1 || trials < 2) throw DomainError("is_kernel_check: need m >= 1 and trials >= 2");
  Vec xv = {x};
  PrngStream setup(seed, "is-xt");
  Vec x_t = {(1.0 - t_n) * x + t_n * setup.normal(0, 0)};

  KernelParams target = optimal_kernel(x_t, t_n, dt, xv);
  KernelParams proposal = em_kernel(x_t, t_n, dt, Vec{0.0});  // mismatched on purpose
  double sd = std::sqrt(proposal.var);

  PrngStream cand(seed, "is-cand");
  PrngStream sel(seed, "is-select");
  std::vector<double> logw(m), w;
  double sum = 0.0, sumsq = 0.0;
  for (uint32_t trial = 0; trial < trials; ++trial) {
    for (uint32_t j = 0; j < m; ++j) {
      double c = proposal.mean[0] + sd * cand.normal(trial, j);
      Vec cv = {c};
      logw[j] = log_importance_weight(cv, proposal, target);
    }
    double total = importance_weights(logw, w);
    size_t pick = categorical(w, total, sel.uniform(trial, 0));
    double kept = proposal.mean[0] + sd * cand.normal(trial, uint32_t(pick));
    sum += kept;
    sumsq += kept * kept;
  }

  IsKernelReport rep;
  rep.trials = trials;
  rep.target_mean = target.mean[0];
  rep.target_var = target.var;
  rep.selected_mean = sum / double(trials);
  rep.selected_var = (sumsq - sum * sum / double(trials)) / double(trials - 1);
  rep.mean_se = std::sqrt(rep.selected_var / double(trials));
  return rep;
}

// ---- stochastic-sampler marginal oracle ----------------------------------------------

// Particle ensemble under the reverse SDE with the analytic field pinned to a
// scalar point mass; empirical moments against N((1-t) x, t^2) at requested
// checkpoints. The grid is built so every checkpoint is hit exactly.
struct MarginalReport {
  std::vector<double> t;
  std::vector<double> empirical_mean, empirical_var;
  std::vector<double> expected_mean, expected_var;
  std::vector<double> mean_se;
  size_t particles = 0;

  Csv to_csv() const {
    Csv c;
    c.columns = {"t", "empirical_mean", "empirical_var", "expected_mean", "expected_var", "mean_se"};
    for (size_t i = 0; i < t.size(); ++i)
      c.rows.push_back(
          {t[i], empirical_mean[i], empirical_var[i], expected_mean[i], expected_var[i], mean_se[i]});
    return c;
  }
};

inline MarginalReport marginal_check(double x, std::vector<double> checkpoints, size_t particles,
                                     int steps_per_segment, uint64_t seed,
                                     double eta1 = kDefaultEta1) {
  if (particles < 2) throw DomainError("marginal_check: need at least two particles");
  if (steps_per_segment < 1) throw DomainError("marginal_check: need at least one step per segment");
  std::sort(checkpoints.begin(), checkpoints.end(), std::greater<double>());
  double t_hi = 1.0 - eta1;
  for (double c : checkpoints)
    if (!(c > 0.0 && c < t_hi)) throw DomainError("marginal_check: checkpoints must lie in (0, 1-eta1)");

  // boundary times: t_hi, then uniform substeps down to each checkpoint
  std::vector<double> times = {t_hi};
  for (double c : checkpoints) {
    double from = times.back();
    for (int j = 1; j <= steps_per_segment; ++j)
      times.push_back(from + (c - from) * double(j) / double(steps_per_segment));
    times.back() = c;
  }

  Vec xv = {x};
  VectorField vf = [&xv](const Vec& x_t, double t) { return optimal_vf(x_t, t, xv); };
  PrngStream init(seed, "mc-init");
  PrngStream noise(seed, "mc-noise");

  std::vector<std::vector<double>> samples(checkpoints.size());
  for (auto& s : samples) s.reserve(particles);
  for (size_t p = 0; p < particles; ++p) {
    TrajState st{Vec{init.normal(uint32_t(p), 0)}, t_hi};
    size_t ck = 0;
    for (size_t j = 1; j < times.size(); ++j) {
      Vec z = {noise.normal(uint32_t(p), uint32_t(j))};
      sde_step(st, st.t - times[j], vf, z);
      st.t = times[j];
      if (ck < checkpoints.size() && times[j] == checkpoints[ck]) {
        samples[ck].push_back(st.x[0]);
        ++ck;
      }
    }
  }

  MarginalReport rep;
  rep.particles = particles;
  for (size_t c = 0; c < checkpoints.size(); ++c) {
    double n = double(samples[c].size());
    double sum = 0.0, sumsq = 0.0;
    for (double v : samples[c]) {
      sum += v;
      sumsq += v * v;
    }
    double mean = sum / n;
    double var = (sumsq - sum * sum / n) / (n - 1.0);
    rep.t.push_back(checkpoints[c]);
    rep.empirical_mean.push_back(mean);
    rep.empirical_var.push_back(var);
    rep.expected_mean.push_back((1.0 - checkpoints[c]) * x);
    rep.expected_var.push_back(checkpoints[c] * checkpoints[c]);
    rep.mean_se.push_back(std::sqrt(var / n));
  }
  return rep;
}

// ---- spectral diagnostic ----------------------------------------------------------

// L2 distance between radially averaged log power spectra of two 2-D signals.
// Plain O(n^2) DFT; diagnostic only, sizes here are tiny.
inline double spectrum_distance(const Vec& a, const Vec& b, int rows, int cols) {
  if (int(a.size()) != rows * cols || int(b.size()) != rows * cols)
    throw DimensionError("spectrum_distance: size mismatch");
  auto radial_log_power = [&](const Vec& img) {
    int nbins = std::max(rows, cols) / 2 + 1;
    std::vector<double> power(size_t(nbins), 0.0);
    std::vector<int> count(size_t(nbins), 0);
    for (int u = 0; u < rows; ++u)
      for (int v = 0; v < cols; ++v) {
        std::complex<double> f = 0.0;
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            double phase = -2.0 * kPi * (double(u) * r / rows + double(v) * c / cols);
            f += img[size_t(r) * size_t(cols) + size_t(c)] *
                 std::complex<double>(std::cos(phase), std::sin(phase));
          }
        double fu = u <= rows / 2 ? u : u - rows;
        double fv = v <= cols / 2 ? v : v - cols;
        int bin = int(std::lround(std::sqrt(fu * fu + fv * fv)));
        if (bin < nbins) {
          power[size_t(bin)] += std::norm(f);
          ++count[size_t(bin)];
        }
      }
    for (int i = 0; i < nbins; ++i)
      power[size_t(i)] = std::log1p(count[size_t(i)] ? power[size_t(i)] / count[size_t(i)] : 0.0);
    return power;
  };
  auto pa = radial_log_power(a), pb = radial_log_power(b);
  double s = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    double d = pa[i] - pb[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace vov
