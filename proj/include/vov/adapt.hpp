#pragma once

#include "vov/net.hpp"

namespace vov {

// Which layers get low-rank updates and at what rank. Default: every dense
// layer of the net.
struct LoraSpec {
  int rank = 1;
  std::vector<int> adapted_layers;                 // indices into net.layers
  std::vector<std::pair<int, int>> layer_shapes;   // (rows, cols) of each adapted layer

  static LoraSpec for_net(const VectorFieldNet& net, int rank) {
    if (rank < 1) throw ConfigError("LoraSpec: rank must be positive");
    LoraSpec s;
    s.rank = rank;
    auto shapes = net.config.layer_shapes();
    for (size_t l = 0; l < shapes.size(); ++l) {
      s.adapted_layers.push_back(int(l));
      s.layer_shapes.push_back(shapes[l]);
    }
    return s;
  }

  // Flattened factor parameters: per layer, a (rows x rank) then b (rank x cols),
  // both row-major, in adapted_layers order.
  size_t param_count() const {
    size_t n = 0;
    for (auto [rows, cols] : layer_shapes) n += size_t(rank) * size_t(rows + cols);
    return n;
  }
};

// Seeded sparse sign projection from the k-dim vector onto the flattened
// factor parameters: theta_j = sign_j * v[bucket_j] / sqrt(|bucket_j|).
// Buckets come from a Fisher-Yates shuffle of the balanced assignment
// (j mod k), so occupancy differs by at most one, the map preserves the
// l2 norm exactly, and k = P degenerates to a signed permutation.
struct HashProjection {
  uint64_t seed = 0;
  int k = 0;
  std::vector<uint32_t> bucket;   // P entries in [0,k)
  std::vector<int8_t> sign;       // P entries, +1/-1
  std::vector<double> col_norm;   // k entries, sqrt(occupancy), 0 for empty buckets
};

inline HashProjection build_projection(uint64_t seed, const LoraSpec& spec, int k) {
  if (k < 1) throw ConfigError("build_projection: k must be positive");
  size_t P = spec.param_count();
  if (P == 0) throw ConfigError("build_projection: spec adapts nothing");
  HashProjection proj;
  proj.seed = seed;
  proj.k = k;
  proj.bucket.resize(P);
  for (size_t j = 0; j < P; ++j) proj.bucket[j] = uint32_t(j % size_t(k));
  SequenceRng rng(seed, "hashproj");
  for (size_t j = P; j-- > 1;) {
    size_t i = size_t(rng.below(j + 1));
    std::swap(proj.bucket[j], proj.bucket[i]);
  }
  proj.sign.resize(P);
  for (size_t j = 0; j < P; ++j) proj.sign[j] = (rng.next_u32() & 1u) ? int8_t(1) : int8_t(-1);
  std::vector<uint32_t> count(size_t(k), 0);
  for (uint32_t b : proj.bucket) ++count[b];
  proj.col_norm.resize(size_t(k));
  for (size_t b = 0; b < size_t(k); ++b)
    proj.col_norm[b] = count[b] ? std::sqrt(double(count[b])) : 0.0;
  return proj;
}

// The compressed representation: one vector plus the seed that regenerates
// its projection.
struct OneVector {
  Vec v;
  uint64_t proj_seed = 0;
};

inline void check_projection(const OneVector& ov, const HashProjection& proj, const LoraSpec& spec) {
  if (ov.proj_seed != proj.seed)
    throw IntegrityError("adaptation vector and projection were built from different seeds");
  if (int(ov.v.size()) != proj.k)
    throw DimensionError("adaptation vector length != projection k");
  if (proj.bucket.size() != spec.param_count())
    throw IntegrityError("projection size does not match the adaptation spec");
}

// v -> flattened factor parameters.
inline Vec expand_to_theta(const Vec& v, const HashProjection& proj) {
  Vec theta(proj.bucket.size());
  for (size_t j = 0; j < theta.size(); ++j) {
    uint32_t b = proj.bucket[j];
    theta[j] = double(proj.sign[j]) * v[b] / proj.col_norm[b];
  }
  return theta;
}

// Adjoint of expand_to_theta: accumulates dL/dtheta into dL/dv.
inline Vec theta_adjoint(const Vec& dtheta, const HashProjection& proj) {
  Vec dv(size_t(proj.k), 0.0);
  for (size_t j = 0; j < dtheta.size(); ++j) {
    uint32_t b = proj.bucket[j];
    dv[b] += double(proj.sign[j]) * dtheta[j] / proj.col_norm[b];
  }
  return dv;
}

inline AdaptationDeltas theta_to_deltas(const Vec& theta, const VectorFieldNet& net,
                                        const LoraSpec& spec) {
  AdaptationDeltas deltas(net.layers.size());
  size_t off = 0;
  for (size_t i = 0; i < spec.adapted_layers.size(); ++i) {
    auto [rows, cols] = spec.layer_shapes[i];
    LoraDelta d;
    d.a.resize(rows, spec.rank);
    d.b.resize(spec.rank, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < spec.rank; ++c) d.a(r, c) = theta[off++];
    for (int r = 0; r < spec.rank; ++r)
      for (int c = 0; c < cols; ++c) d.b(r, c) = theta[off++];
    deltas[size_t(spec.adapted_layers[i])] = std::move(d);
  }
  return deltas;
}

inline Vec delta_grads_to_theta(const DeltaGrads& grads, const LoraSpec& spec, size_t P) {
  Vec dtheta(P);
  size_t off = 0;
  for (size_t i = 0; i < spec.adapted_layers.size(); ++i) {
    size_t l = size_t(spec.adapted_layers[i]);
    const Mat& da = grads.da[l];
    const Mat& db = grads.db[l];
    for (int r = 0; r < da.rows(); ++r)
      for (int c = 0; c < da.cols(); ++c) dtheta[off++] = da(r, c);
    for (int r = 0; r < db.rows(); ++r)
      for (int c = 0; c < db.cols(); ++c) dtheta[off++] = db(r, c);
  }
  return dtheta;
}

inline AdaptationDeltas expand_vector(const OneVector& ov, const HashProjection& proj,
                                      const VectorFieldNet& net, const LoraSpec& spec) {
  check_projection(ov, proj, spec);
  return theta_to_deltas(expand_to_theta(ov.v, proj), net, spec);
}

// Flow-matching loss and its gradient with respect to the vector, for any
// effective vector (stage 1 feeds v, stage 2 feeds its noisy relaxation).
inline double loss_fm_and_grad_v(const VectorFieldNet& net, const HashProjection& proj,
                                 const LoraSpec& spec, const Vec& v_eff, const FlowBatch& batch,
                                 Vec& dv) {
  Vec theta = expand_to_theta(v_eff, proj);
  AdaptationDeltas deltas = theta_to_deltas(theta, net, spec);
  DeltaGrads grads;
  double loss = loss_fm_and_grad_delta(net, deltas, batch, grads);
  dv = theta_adjoint(delta_grads_to_theta(grads, spec, theta.size()), proj);
  return loss;
}

struct Stage1Config {
  int steps = 400;
  int batch_size = 64;
  double lr = 1.5e-3;
  double weight_decay = 1e-4;
  double v_init_scale = 0.01;
  double t_lo = kDefaultEta0;
  double t_hi = 1.0 - kDefaultEta1;
  uint64_t seed = 0;
  int log_every = 25;
};

struct Stage1Trace {
  std::vector<double> loss;
  std::vector<double> probe_psnr;  // one-hop reconstruction quality, every log_every steps
};

// Rate-unconstrained fit of v against one signal with the base net frozen.
// v starts at small seeded noise: with both factors generated from v, the
// exact origin is a stationary point, so "near zero" must not mean zero.
inline OneVector fit_vector_stage1(const VectorFieldNet& net, const Vec& x, const LoraSpec& spec,
                                   const HashProjection& proj, int k, const Stage1Config& cfg,
                                   Stage1Trace* trace = nullptr) {
  if (int(x.size()) != net.config.input_dim)
    throw DimensionError("fit_vector_stage1: signal dimension != net input_dim");
  if (proj.k != k) throw IntegrityError("fit_vector_stage1: projection k mismatch");

  OneVector ov;
  ov.proj_seed = proj.seed;
  PrngStream init(cfg.seed, "v-init");
  ov.v = init.normal_vector(0, 0, size_t(k));
  for (double& c : ov.v) c *= cfg.v_init_scale;

  std::vector<Vec> corpus = {x};
  AdamW opt(cfg.lr, cfg.weight_decay);
  Vec dv;
  PrngStream probe(cfg.seed, "probe");
  Vec probe_noise = probe.normal_vector(0, 0, x.size());
  for (int s = 0; s < cfg.steps; ++s) {
    FlowBatch batch = sample_flow_batch(cfg.seed, uint32_t(s), corpus, int(x.size()),
                                        cfg.batch_size, cfg.t_lo, cfg.t_hi);
    double loss;
    try {
      loss = loss_fm_and_grad_v(net, proj, spec, ov.v, batch, dv);
    } catch (const NumericError&) {
      throw TrainingError("fit_vector_stage1: loss diverged at step " + std::to_string(s));
    }
    if (!std::isfinite(loss))
      throw TrainingError("fit_vector_stage1: loss diverged at step " + std::to_string(s));
    opt.step({{ov.v.data(), dv.data(), ov.v.size()}});
    if (trace) {
      trace->loss.push_back(loss);
      if (cfg.log_every > 0 && (s % cfg.log_every == cfg.log_every - 1 || s + 1 == cfg.steps)) {
        AdaptationDeltas deltas = theta_to_deltas(expand_to_theta(ov.v, proj), net, spec);
        Vec recon = one_step_map({interpolate(x, probe_noise, cfg.t_hi), cfg.t_hi},
                                 net.field(deltas));
        trace->probe_psnr.push_back(psnr_db(squared_distance(recon, x) / double(x.size())));
      }
    }
  }
  return ov;
}

// Central-difference check of the vector-path gradient (hash projection and
// low-rank expansion included).
inline GradReport grad_check_vector(const VectorFieldNet& net, const HashProjection& proj,
                                    const LoraSpec& spec, Vec v, const FlowBatch& batch,
                                    size_t probes, uint64_t seed) {
  Vec dv;
  loss_fm_and_grad_v(net, proj, spec, v, batch, dv);
  auto eval = [&](const Vec& vv) {
    AdaptationDeltas deltas = theta_to_deltas(expand_to_theta(vv, proj), net, spec);
    return loss_fm(net, &deltas, batch);
  };
  SequenceRng rng(seed, "grad-check-v");
  GradReport rep;
  for (size_t p = 0; p < probes; ++p) {
    size_t i = size_t(rng.below(v.size()));
    double h = 1e-5 * std::max(1.0, std::abs(v[i]));
    double saved = v[i];
    v[i] = saved + h;
    double lp = eval(v);
    v[i] = saved - h;
    double lm = eval(v);
    v[i] = saved;
    double fd = (lp - lm) / (2.0 * h);
    rep.max_rel_err = std::max(rep.max_rel_err, fd_rel_err(dv[i], fd));
    ++rep.checked;
  }
  return rep;
}

}  // namespace vov
