#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <memory>
#include <utility>

#include "vov/dynamics.hpp"
#include "vov/fsio.hpp"
#include "vov/prng.hpp"

namespace vov {

using Mat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

struct NetConfig {
  int input_dim = 256;
  std::vector<int> hidden_dims = {256, 256, 256};
  int time_embed_dim = 16;
  std::string activation = "silu";
  uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1) throw ConfigError("NetConfig: input_dim must be positive");
    // hidden_dims may be empty: the net is then a single linear output layer.
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("NetConfig: hidden widths must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw ConfigError("NetConfig: time_embed_dim must be even and >= 2");
    if (activation != "silu") throw ConfigError("NetConfig: unknown activation '" + activation + "'");
  }

  // (rows, cols) of every dense layer, input to output.
  std::vector<std::pair<int, int>> layer_shapes() const {
    std::vector<std::pair<int, int>> s;
    int in = input_dim + time_embed_dim;
    for (int h : hidden_dims) {
      s.emplace_back(h, in);
      in = h;
    }
    s.emplace_back(input_dim, in);
    return s;
  }
};

// Sinusoidal features of scalar time: pairs (sin, cos) at frequencies pi 2^i.
inline void time_embed(double t, int dim, double* out) {
  double freq = kPi;
  for (int i = 0; i < dim / 2; ++i) {
    out[2 * i] = std::sin(freq * t);
    out[2 * i + 1] = std::cos(freq * t);
    freq *= 2.0;
  }
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline double silu_grad(double z) {
  double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

struct DenseLayer {
  Mat w;   // rows x cols
  EVec b;  // rows
};

// Low-rank additive update of one dense layer: delta_w = a * b.
struct LoraDelta {
  Mat a;  // rows x rank
  Mat b;  // rank x cols
  bool present() const { return a.size() > 0; }
};

using AdaptationDeltas = std::vector<LoraDelta>;  // aligned with net layers; absent entries empty

// Batch of flow-matching samples: row b pairs clean signal x with noise eps at time t.
struct FlowBatch {
  std::vector<double> t;
  Mat x;    // B x d
  Mat eps;  // B x d
};

struct VectorFieldNet {
  NetConfig config;
  std::vector<DenseLayer> layers;

  // He-scaled normal init from the config seed; the output layer starts at
  // zero so an untrained net is the zero field.
  static VectorFieldNet init(const NetConfig& cfg) {
    cfg.validate();
    VectorFieldNet net;
    net.config = cfg;
    SequenceRng rng(cfg.seed, "net-init");
    auto shapes = cfg.layer_shapes();
    for (size_t l = 0; l < shapes.size(); ++l) {
      auto [rows, cols] = shapes[l];
      DenseLayer layer;
      layer.w.setZero(rows, cols);
      layer.b.setZero(rows);
      if (l + 1 < shapes.size()) {
        double scale = std::sqrt(2.0 / double(cols));
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) layer.w(r, c) = scale * rng.normal();
      }
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += size_t(l.w.size()) + size_t(l.b.size());
    return n;
  }

  Vec forward(const Vec& x_t, double t, const AdaptationDeltas* deltas = nullptr) const {
    if (int(x_t.size()) != config.input_dim)
      throw DimensionError("VectorFieldNet::forward: input_dim mismatch");
    if (deltas && deltas->size() != layers.size())
      throw DimensionError("VectorFieldNet::forward: delta list misaligned with layers");
    EVec h(config.input_dim + config.time_embed_dim);
    for (int i = 0; i < config.input_dim; ++i) h[i] = x_t[size_t(i)];
    time_embed(t, config.time_embed_dim, h.data() + config.input_dim);
    for (size_t l = 0; l < layers.size(); ++l) {
      EVec z = layers[l].w * h + layers[l].b;
      if (deltas && (*deltas)[l].present()) z.noalias() += (*deltas)[l].a * ((*deltas)[l].b * h);
      if (l + 1 < layers.size())
        h = z.unaryExpr([](double v) { return silu(v); });
      else
        h = std::move(z);
    }
    return Vec(h.data(), h.data() + h.size());
  }

  // Callable view; the net must outlive it. Deltas are copied into the closure.
  VectorField field() const {
    return [this](const Vec& x_t, double t) { return forward(x_t, t); };
  }
  VectorField field(AdaptationDeltas deltas) const {
    auto d = std::make_shared<AdaptationDeltas>(std::move(deltas));
    return [this, d](const Vec& x_t, double t) { return forward(x_t, t, d.get()); };
  }
};

namespace detail {

// Shared forward pass over a batch; keeps inputs and pre-activations for backprop.
struct BatchTrace {
  Mat in;                   // B x (d + embed)
  std::vector<Mat> z;       // pre-activations per layer
  std::vector<Mat> h;       // activations per layer (h[l] feeds layer l+1)
  Mat out;                  // B x d
  Mat residual;             // out - (eps - x)
  double loss = 0.0;
};

inline BatchTrace run_forward(const VectorFieldNet& net, const AdaptationDeltas* deltas,
                              const FlowBatch& batch) {
  const int d = net.config.input_dim;
  const int e = net.config.time_embed_dim;
  const auto B = Eigen::Index(batch.t.size());
  if (batch.x.rows() != B || batch.eps.rows() != B || batch.x.cols() != d || batch.eps.cols() != d)
    throw DimensionError("flow batch: inconsistent shapes");
  if (deltas && deltas->size() != net.layers.size())
    throw DimensionError("flow batch: delta list misaligned with layers");

  BatchTrace tr;
  tr.in.resize(B, d + e);
  std::vector<double> emb(size_t(e), 0.0);
  for (Eigen::Index r = 0; r < B; ++r) {
    double t = batch.t[size_t(r)];
    if (!(t > 0.0 && t < 1.0)) throw DomainError("flow batch: t must lie in (0,1)");
    tr.in.row(r).head(d) = (1.0 - t) * batch.x.row(r) + t * batch.eps.row(r);
    time_embed(t, e, emb.data());
    for (int j = 0; j < e; ++j) tr.in(r, d + j) = emb[size_t(j)];
  }

  const size_t L = net.layers.size();
  tr.z.resize(L);
  tr.h.resize(L);
  const Mat* prev = &tr.in;
  for (size_t l = 0; l < L; ++l) {
    tr.z[l].noalias() = (*prev) * net.layers[l].w.transpose();
    tr.z[l].rowwise() += net.layers[l].b.transpose();
    if (deltas && (*deltas)[l].present())
      tr.z[l].noalias() += ((*prev) * (*deltas)[l].b.transpose()) * (*deltas)[l].a.transpose();
    if (l + 1 < L) {
      tr.h[l] = tr.z[l].unaryExpr([](double v) { return silu(v); });
      prev = &tr.h[l];
    }
  }
  tr.out = tr.z.back();
  tr.residual = tr.out - (batch.eps - batch.x);
  tr.loss = tr.residual.squaredNorm() / double(B);
  if (!std::isfinite(tr.loss)) throw NumericError("flow loss is not finite");
  return tr;
}

}  // namespace detail

// Mean over the batch of the squared flow-matching residual.
inline double loss_fm(const VectorFieldNet& net, const AdaptationDeltas* deltas,
                      const FlowBatch& batch) {
  return detail::run_forward(net, deltas, batch).loss;
}

struct BaseGrads {
  std::vector<Mat> dw;
  std::vector<EVec> db;
};

// Gradients of the LoRA factors, aligned with net layers.
struct DeltaGrads {
  std::vector<Mat> da;
  std::vector<Mat> db;
};

namespace detail {

// Backward pass shared by the base and delta parameter sets. Fills whichever
// output pointers are non-null.
inline double run_backward(const VectorFieldNet& net, const AdaptationDeltas* deltas,
                           const FlowBatch& batch, BaseGrads* base, DeltaGrads* delta) {
  BatchTrace tr = run_forward(net, deltas, batch);
  const size_t L = net.layers.size();
  const double B = double(batch.t.size());

  if (base) {
    base->dw.assign(L, Mat());
    base->db.assign(L, EVec());
  }
  if (delta) {
    delta->da.assign(L, Mat());
    delta->db.assign(L, Mat());
  }

  Mat g = (2.0 / B) * tr.residual;  // dL/dz for the output layer
  for (size_t l = L; l-- > 0;) {
    const Mat& input = (l == 0) ? tr.in : tr.h[l - 1];
    if (base) {
      base->dw[l].noalias() = g.transpose() * input;
      base->db[l] = g.colwise().sum().transpose();
    }
    if (delta && deltas && (*deltas)[l].present()) {
      const auto& dl = (*deltas)[l];
      delta->da[l].noalias() = g.transpose() * (input * dl.b.transpose());
      delta->db[l].noalias() = (dl.a.transpose() * g.transpose()) * input;
    }
    if (l == 0) break;
    Mat gin = g * net.layers[l].w;
    if (deltas && (*deltas)[l].present())
      gin.noalias() += (g * (*deltas)[l].a) * (*deltas)[l].b;
    g = gin.array() * tr.z[l - 1].unaryExpr([](double v) { return silu_grad(v); }).array();
  }
  return tr.loss;
}

}  // namespace detail

inline double loss_fm_and_grad_base(const VectorFieldNet& net, const FlowBatch& batch,
                                    BaseGrads& grads) {
  return detail::run_backward(net, nullptr, batch, &grads, nullptr);
}

inline double loss_fm_and_grad_delta(const VectorFieldNet& net, const AdaptationDeltas& deltas,
                                     const FlowBatch& batch, DeltaGrads& grads) {
  return detail::run_backward(net, &deltas, batch, nullptr, &grads);
}

// Decoupled-weight-decay Adam over a fixed parameter layout.
class AdamW {
 public:
  struct View {
    double* value;
    const double* grad;
    size_t size;
  };

  AdamW(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

  void step(const std::vector<View>& views) {
    size_t total = 0;
    for (const auto& v : views) total += v.size;
    if (m_.empty()) {
      m_.assign(total, 0.0);
      u_.assign(total, 0.0);
    } else if (m_.size() != total) {
      throw DimensionError("AdamW: parameter layout changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    size_t off = 0;
    for (const auto& v : views) {
      for (size_t i = 0; i < v.size; ++i, ++off) {
        double g = v.grad[i];
        if (!std::isfinite(g)) throw TrainingError("AdamW: non-finite gradient");
        m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * g;
        u_[off] = beta2_ * u_[off] + (1.0 - beta2_) * g * g;
        double mh = m_[off] / bc1;
        double uh = u_[off] / bc2;
        v.value[i] -= lr_ * (mh / (std::sqrt(uh) + eps_) + wd_ * v.value[i]);
      }
    }
  }

 private:
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<double> m_, u_;
};

struct TrainConfig {
  int steps = 1500;
  int batch_size = 64;
  double lr = 1.5e-3;
  double weight_decay = 1e-4;
  double t_lo = kDefaultEta0;
  double t_hi = 1.0 - kDefaultEta1;
  uint64_t seed = 0;
};

struct TrainTrace {
  std::vector<double> loss;  // one entry per optimizer step
};

// Counter-addressed batch sampling: element e of step s is a pure function of
// (seed, s, e), so training is reproducible and order-independent.
inline FlowBatch sample_flow_batch(uint64_t seed, uint32_t step, const std::vector<Vec>& corpus,
                                   int dim, int batch_size, double t_lo, double t_hi) {
  PrngStream pick(seed, "batch-pick");
  PrngStream noise(seed, "batch-eps");
  FlowBatch b;
  b.t.resize(size_t(batch_size));
  b.x.resize(batch_size, dim);
  b.eps.resize(batch_size, dim);
  for (int e = 0; e < batch_size; ++e) {
    auto w = pick.words(step, uint32_t(e), 0);
    size_t idx = size_t(w[0]) % corpus.size();
    const Vec& x = corpus[idx];
    if (int(x.size()) != dim) throw DimensionError("corpus signal has wrong dimension");
    b.t[size_t(e)] = t_lo + (t_hi - t_lo) * PrngStream::to_uniform(w[1]);
    Vec eps = noise.normal_vector(step, uint32_t(e), size_t(dim));
    for (int i = 0; i < dim; ++i) {
      b.x(e, i) = x[size_t(i)];
      b.eps(e, i) = eps[size_t(i)];
    }
  }
  return b;
}

inline VectorFieldNet train_base(const std::vector<Vec>& corpus, const NetConfig& ncfg,
                                 const TrainConfig& tcfg, TrainTrace* trace = nullptr) {
  if (corpus.empty()) throw ConfigError("train_base: empty corpus");
  for (const Vec& x : corpus)
    if (int(x.size()) != ncfg.input_dim)
      throw DimensionError("train_base: corpus dimension != net input_dim");
  if (tcfg.steps < 0 || tcfg.batch_size < 1) throw ConfigError("train_base: bad step/batch counts");

  VectorFieldNet net = VectorFieldNet::init(ncfg);
  AdamW opt(tcfg.lr, tcfg.weight_decay);
  BaseGrads grads;
  for (int s = 0; s < tcfg.steps; ++s) {
    FlowBatch batch = sample_flow_batch(tcfg.seed, uint32_t(s), corpus, ncfg.input_dim,
                                        tcfg.batch_size, tcfg.t_lo, tcfg.t_hi);
    double loss;
    try {
      loss = loss_fm_and_grad_base(net, batch, grads);
    } catch (const NumericError&) {
      throw TrainingError("train_base: loss diverged at step " + std::to_string(s));
    }
    if (!std::isfinite(loss)) throw TrainingError("train_base: loss diverged at step " + std::to_string(s));
    std::vector<AdamW::View> views;
    for (size_t l = 0; l < net.layers.size(); ++l) {
      views.push_back({net.layers[l].w.data(), grads.dw[l].data(), size_t(net.layers[l].w.size())});
      views.push_back({net.layers[l].b.data(), grads.db[l].data(), size_t(net.layers[l].b.size())});
    }
    opt.step(views);
    if (trace) trace->loss.push_back(loss);
  }
  return net;
}

// Central-difference check of the base-parameter gradient on a fixed batch.
struct GradReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

inline double fd_rel_err(double analytic, double numeric) {
  double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-10);
  return std::abs(analytic - numeric) / denom;
}

inline GradReport grad_check_base(VectorFieldNet& net, const FlowBatch& batch, size_t probes,
                                  uint64_t seed) {
  BaseGrads grads;
  loss_fm_and_grad_base(net, batch, grads);
  SequenceRng rng(seed, "grad-check");
  GradReport rep;
  size_t nlayers = net.layers.size();
  for (size_t p = 0; p < probes; ++p) {
    size_t l = size_t(rng.below(nlayers));
    bool bias = rng.uniform() < 0.2 && net.layers[l].b.size() > 0;
    double* param;
    double analytic;
    if (bias) {
      size_t i = size_t(rng.below(uint64_t(net.layers[l].b.size())));
      param = net.layers[l].b.data() + i;
      analytic = grads.db[l][Eigen::Index(i)];
    } else {
      size_t i = size_t(rng.below(uint64_t(net.layers[l].w.size())));
      param = net.layers[l].w.data() + i;
      analytic = grads.dw[l].data()[i];
    }
    double h = 1e-5 * std::max(1.0, std::abs(*param));
    double saved = *param;
    *param = saved + h;
    double lp = loss_fm(net, nullptr, batch);
    *param = saved - h;
    double lm = loss_fm(net, nullptr, batch);
    *param = saved;
    double fd = (lp - lm) / (2.0 * h);
    rep.max_rel_err = std::max(rep.max_rel_err, fd_rel_err(analytic, fd));
    ++rep.checked;
  }
  return rep;
}

// Checkpoint format "VFNN": config block then parameters as little-endian f32
// in declaration order (per layer: w row-major, then b).
namespace ckpt {

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
    if (pos + 1 > s.size()) throw FormatError("checkpoint truncated");
    return uint8_t(s[pos++]);
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
};

}  // namespace ckpt

inline std::string serialize_checkpoint(const VectorFieldNet& net) {
  std::string s;
  s += "VFNN";
  ckpt::put_u32(s, 1);  // version
  ckpt::put_u32(s, uint32_t(net.config.input_dim));
  ckpt::put_u32(s, uint32_t(net.config.hidden_dims.size()));
  for (int h : net.config.hidden_dims) ckpt::put_u32(s, uint32_t(h));
  ckpt::put_u32(s, uint32_t(net.config.time_embed_dim));
  ckpt::put_u32(s, 0);  // activation id: silu
  ckpt::put_u64(s, net.config.seed);
  for (const auto& l : net.layers) {
    for (int r = 0; r < l.w.rows(); ++r)
      for (int c = 0; c < l.w.cols(); ++c) ckpt::put_f32(s, float(l.w(r, c)));
    for (int r = 0; r < l.b.size(); ++r) ckpt::put_f32(s, float(l.b[r]));
  }
  return s;
}

inline VectorFieldNet parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "VFNN") != 0)
    throw FormatError("checkpoint: bad magic, expected VFNN");
  ckpt::Reader rd{bytes, 4};
  uint32_t version = rd.u32();
  if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  NetConfig cfg;
  cfg.input_dim = int(rd.u32());
  uint32_t nh = rd.u32();
  if (nh == 0 || nh > 64) throw FormatError("checkpoint: implausible hidden layer count");
  cfg.hidden_dims.clear();
  for (uint32_t i = 0; i < nh; ++i) cfg.hidden_dims.push_back(int(rd.u32()));
  cfg.time_embed_dim = int(rd.u32());
  uint32_t act = rd.u32();
  if (act != 0) throw FormatError("checkpoint: unknown activation id");
  cfg.activation = "silu";
  cfg.seed = rd.u64();
  cfg.validate();

  VectorFieldNet net;
  net.config = cfg;
  for (auto [rows, cols] : cfg.layer_shapes()) {
    DenseLayer l;
    l.w.resize(rows, cols);
    l.b.resize(rows);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) l.w(r, c) = double(rd.f32());
    for (int r = 0; r < rows; ++r) l.b[r] = double(rd.f32());
    net.layers.push_back(std::move(l));
  }
  if (rd.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return net;
}

inline void save_checkpoint(const VectorFieldNet& net, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(net));
}

inline VectorFieldNet load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace vov
