// vovc: command-line front end for the one-vector flow codec.
//
// Subcommands: gen-corpus, train-base, encode, decode, eval. Every output
// file is byte-reproducible from its inputs and seeds; a .manifest.json
// sidecar records the provenance of each run.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "vov/codec.hpp"
#include "vov/eval.hpp"
#include "vov/manifest.hpp"
#include "vov/signal_io.hpp"

namespace fs = std::filesystem;
using namespace vov;

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

int thread_count() {
  if (const char* env = std::getenv("VOVC_THREADS")) {
    int n = std::atoi(env);
    if (n < 1) throw ConfigError("VOVC_THREADS must be a positive integer");
    return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

Signal load_signal_any(const std::string& path) {
  if (fs::path(path).extension() == ".pgm") return load_pgm(path);
  return load_signal(path);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const Csv& csv, const std::string& path) { write_file_atomic(path, csv.str()); }

// ---- gen-corpus ---------------------------------------------------------------

int run_gen_corpus(const std::string& out_dir, int count, int dim, uint64_t seed) {
  Stopwatch clock;
  fs::create_directories(out_dir);

  std::vector<std::string> names(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sig_%04d.vsig", i);
    names[size_t(i)] = buf;
  }

  // each signal depends only on (seed, index), so any thread layout
  // produces identical bytes
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  int workers = std::min(thread_count(), std::max(count, 1));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          Signal sig = synth_signal(dim, derive_seed(seed, uint64_t(i)));
          save_signal(sig, (fs::path(out_dir) / names[size_t(i)]).string());
        }
      } catch (...) {
        errors[size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  RunManifest m;
  m.command = "gen-corpus";
  m.seeds = {{"corpus_seed", seed}};
  for (const std::string& n : names) m.outputs.push_back(n);
  m.wall_clock_s = clock.seconds();
  write_manifest(m, (fs::path(out_dir) / "corpus").string());

  std::cout << "wrote " << count << " signals of side " << dim << " to " << out_dir << "\n";
  return 0;
}

// ---- train-base ---------------------------------------------------------------

std::vector<Vec> load_corpus(const std::string& dir, size_t& side_hint) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".vsig") files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .vsig signals in " + dir);

  std::vector<Vec> corpus;
  for (const std::string& f : files) {
    Signal sig = load_signal(f);
    if (!corpus.empty() && sig.size() != corpus.front().size())
      throw DimensionError("corpus signals disagree in size: " + f);
    side_hint = sig.size();
    corpus.push_back(std::move(sig.data));
  }
  return corpus;
}

int run_train_base(const std::string& corpus_dir, const std::string& config_path,
                   const std::string& out_path) {
  Stopwatch clock;
  CodecConfig cfg = load_config(config_path);
  size_t dim = 0;
  std::vector<Vec> corpus = load_corpus(corpus_dir, dim);

  NetConfig ncfg;
  ncfg.input_dim = int(dim);
  ncfg.hidden_dims = cfg.net_hidden;
  ncfg.time_embed_dim = cfg.net_time_embed;
  ncfg.seed = cfg.net_seed;

  TrainConfig tcfg;
  tcfg.steps = cfg.base_steps;
  tcfg.batch_size = cfg.base_batch;
  tcfg.lr = cfg.base_lr;
  tcfg.weight_decay = cfg.base_weight_decay;
  tcfg.t_lo = cfg.eta0;
  tcfg.t_hi = 1.0 - cfg.eta1;
  tcfg.seed = cfg.base_seed;

  TrainTrace trace;
  VectorFieldNet net = train_base(corpus, ncfg, tcfg, &trace);
  save_checkpoint(net, out_path);

  Csv loss;
  loss.columns = {"step", "loss"};
  for (size_t i = 0; i < trace.loss.size(); ++i)
    loss.rows.push_back({double(i), trace.loss[i]});
  write_csv(loss, out_path + ".loss.csv");

  RunManifest m;
  m.command = "train-base";
  m.config_digest = cfg.digest();
  m.seeds = {{"net_seed", cfg.net_seed}, {"base_seed", cfg.base_seed}};
  m.outputs = {fs::path(out_path).filename().string(),
               fs::path(out_path + ".loss.csv").filename().string()};
  m.wall_clock_s = clock.seconds();
  write_manifest(m, out_path);

  std::cout << "trained " << corpus.size() << " signals for " << tcfg.steps
            << " steps, final loss " << fmt17(trace.loss.back()) << "\n";
  return 0;
}

// ---- encode -------------------------------------------------------------------

int run_encode(const std::string& ckpt, const std::string& signal_path,
               const std::string& config_path, const std::string& out_path,
               const std::vector<std::string>& scale_args) {
  Stopwatch clock;
  CodecConfig cfg = load_config(config_path);
  VectorFieldNet net = load_checkpoint(ckpt);
  Signal sig = load_signal_any(signal_path);

  std::optional<ScaleOptions> scale;
  if (!scale_args.empty()) {
    if (scale_args.size() < 2) throw ConfigError("--scale needs STEPS and M");
    ScaleOptions sc;
    sc.steps = uint32_t(std::stoul(scale_args[0]));
    sc.m = uint32_t(std::stoul(scale_args[1]));
    sc.seed = scale_args.size() > 2 ? std::stoull(scale_args[2]) : 0;
    scale = sc;
  }

  EncodeResult res = encode(net, sig.data, cfg, scale);
  save_bitstream(res.stream, out_path);

  RunManifest m;
  m.command = "encode";
  m.config_digest = cfg.digest();
  m.seeds = {{"proj_seed", cfg.proj_seed},
             {"sampler_seed", cfg.sampler_seed},
             {"fit_seed", cfg.fit_seed}};
  if (scale) m.seeds.emplace_back("scale_seed", scale->seed);
  m.outputs = {fs::path(out_path).filename().string()};
  m.wall_clock_s = clock.seconds();
  write_manifest(m, out_path);

  std::cout << "payload_bits=" << res.bits.payload_bits << "\n"
            << "header_bits=" << res.bits.header_bits << "\n"
            << "scaling_index_bits=" << res.bits.scaling_index_bits << "\n"
            << "scaling_block_bits=" << res.bits.scaling_block_bits << "\n"
            << "total_bits=" << res.bits.total_bits << "\n"
            << "bits_per_dim=" << fmt17(res.bits.bits_per_dim(sig.size())) << "\n"
            << "psnr_db=" << fmt17(psnr(res.reconstruction, sig.data)) << "\n";
  return 0;
}

// ---- decode -------------------------------------------------------------------

int run_decode(const std::string& ckpt, const std::string& stream_path,
               const std::string& config_path, const std::string& out_path,
               const std::optional<double>& tau) {
  Stopwatch clock;
  CodecConfig cfg = load_config(config_path);
  VectorFieldNet net = load_checkpoint(ckpt);
  Bitstream bs = load_bitstream(stream_path);

  Vec recon = tau ? decode_early_stop(net, bs, cfg, *tau) : decode(net, bs, cfg);

  Signal out;
  out.dims = {uint32_t(recon.size())};  // streams carry no shape metadata
  out.data = std::move(recon);
  save_signal(out, out_path);

  RunManifest m;
  m.command = "decode";
  m.config_digest = cfg.digest();
  m.seeds = {{"sampler_seed", bs.sampler_seed}};
  m.outputs = {fs::path(out_path).filename().string()};
  m.wall_clock_s = clock.seconds();
  write_manifest(m, out_path);

  std::cout << "decoded " << out.data.size() << " samples\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string mode;
  std::string ckpt, stream_path, config_path, signal_path, out_path;
  double tau = -1.0;
  double t = 0.5, dt = 0.01, x = 0.7;
  uint32_t m = 64, trials = 1000;
  uint64_t seed = 0;
  std::vector<double> checkpoints = {0.75, 0.5, 0.25};
  size_t particles = 10000;
  int steps_per_segment = 40;
};

// the deterministic decoder's starting noise, shared by the sweep so its last
// row reproduces the decode output exactly
Vec decoder_x1(const Bitstream& bs, size_t dim) {
  PrngStream init(bs.sampler_seed, "ode-init");
  return init.normal_vector(0, 0, dim);
}

int run_eval(const EvalArgs& a) {
  Stopwatch clock;
  Csv csv;
  RunManifest m;
  m.command = "eval " + a.mode;

  if (a.mode == "sweep-tau" || a.mode == "bound") {
    CodecConfig cfg = load_config(a.config_path);
    VectorFieldNet net = load_checkpoint(a.ckpt);
    Bitstream bs = load_bitstream(a.stream_path);
    Signal sig = load_signal_any(a.signal_path);
    if (bs.config_digest != cfg.digest())
      throw ConfigError("config digest mismatch: decode with the exact config file used at "
                        "encode time");
    detail::DecodedVector dv = detail::rebuild_vector(net, cfg, bs);
    VectorField field = net.field(dv.deltas);
    Vec x1 = decoder_x1(bs, sig.size());
    m.config_digest = cfg.digest();
    m.seeds = {{"sampler_seed", bs.sampler_seed}};
    if (a.mode == "sweep-tau") {
      csv = dp_sweep(field, sig.data, x1, cfg.grid()).to_csv();
    } else {
      double tau = a.tau >= 0.0 ? a.tau : cfg.eta0;
      BoundReport rep = bound_check(field, sig.data, x1, tau, cfg.grid());
      csv.columns = {"tau", "measured", "bound", "l_hat", "e_integral", "e_tau"};
      csv.rows.push_back({tau, rep.measured, rep.bound, rep.l_hat, rep.e_integral, rep.e_tau});
    }
  } else if (a.mode == "is-check") {
    m.seeds = {{"seed", a.seed}};
    csv = is_kernel_check(a.t, a.dt, a.x, a.m, a.trials, a.seed).to_csv();
  } else if (a.mode == "marginal") {
    m.seeds = {{"seed", a.seed}};
    csv = marginal_check(a.x, a.checkpoints, a.particles, a.steps_per_segment, a.seed).to_csv();
  } else if (a.mode == "rate-curve") {
    CodecConfig cfg = load_config(a.config_path);
    VectorFieldNet net = load_checkpoint(a.ckpt);
    Signal sig = load_signal_any(a.signal_path);
    m.config_digest = cfg.digest();
    m.seeds = {{"fit_seed", cfg.fit_seed}};
    csv.columns = {"lambda", "payload_bits", "total_bits", "bits_per_dim", "psnr_db"};
    for (double lam : {0.5 * cfg.lambda, cfg.lambda, 2.0 * cfg.lambda}) {
      CodecConfig point = cfg;
      point.lambda = lam;
      EncodeResult res = encode(net, sig.data, point);
      csv.rows.push_back({lam, double(res.bits.payload_bits), double(res.bits.total_bits),
                          res.bits.bits_per_dim(sig.size()),
                          psnr(res.reconstruction, sig.data)});
    }
  } else {
    throw ConfigError("unknown eval mode: " + a.mode);
  }

  write_csv(csv, a.out_path);
  m.outputs = {fs::path(a.out_path).filename().string()};
  m.wall_clock_s = clock.seconds();
  write_manifest(m, a.out_path);
  std::cout << "wrote " << csv.rows.size() << " rows to " << a.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-vector flow codec"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "synthesize a corpus of test signals");
  std::string gen_out;
  int gen_count = 0, gen_dim = 16;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of signals")->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--dim", gen_dim, "signal side length");
  gen->add_option("--seed", gen_seed, "corpus seed");

  // train-base
  auto* train = app.add_subcommand("train-base", "train the shared base model on a corpus");
  std::string tr_corpus, tr_config, tr_out;
  train->add_option("--corpus", tr_corpus, "directory of .vsig signals")->required();
  train->add_option("--config", tr_config, "codec config file")->required();
  train->add_option("--out", tr_out, "checkpoint output path")->required();

  // encode
  auto* enc = app.add_subcommand("encode", "compress one signal against a checkpoint");
  std::string en_ckpt, en_signal, en_config, en_out;
  std::vector<std::string> en_scale;
  enc->add_option("--ckpt", en_ckpt, "base model checkpoint")->required();
  enc->add_option("--signal", en_signal, "signal file (.vsig or .pgm)")->required();
  enc->add_option("--config", en_config, "codec config file")->required();
  enc->add_option("--out", en_out, "bitstream output path")->required();
  enc->add_option("--scale", en_scale,
                  "guided stochastic decode: STEPS M [SEED]")->expected(2, 3);

  // decode
  auto* dec = app.add_subcommand("decode", "reconstruct a signal from a bitstream");
  std::string de_ckpt, de_stream, de_config, de_out;
  double de_tau = -1.0;
  dec->add_option("--ckpt", de_ckpt, "base model checkpoint")->required();
  dec->add_option("--bitstream", de_stream, "bitstream path")->required();
  dec->add_option("--config", de_config, "codec config file")->required();
  dec->add_option("--out", de_out, "reconstruction output path (.vsig)")->required();
  dec->add_option("--tau", de_tau, "stop the deterministic decode early at this grid time");

  // eval
  auto* ev = app.add_subcommand("eval", "numerical diagnostics, written as CSV");
  EvalArgs ea;
  ev->add_option("--mode", ea.mode, "sweep-tau | bound | is-check | marginal | rate-curve")
      ->required();
  ev->add_option("--ckpt", ea.ckpt, "base model checkpoint");
  ev->add_option("--bitstream", ea.stream_path, "bitstream path");
  ev->add_option("--config", ea.config_path, "codec config file");
  ev->add_option("--signal", ea.signal_path, "signal file");
  ev->add_option("--out", ea.out_path, "CSV output path")->required();
  ev->add_option("--tau", ea.tau, "stop time for bound mode");
  ev->add_option("--t", ea.t, "kernel time for is-check");
  ev->add_option("--dt", ea.dt, "kernel step for is-check");
  ev->add_option("--x", ea.x, "scalar signal value for is-check / marginal");
  ev->add_option("--m", ea.m, "candidate count for is-check");
  ev->add_option("--trials", ea.trials, "outer trials for is-check");
  ev->add_option("--seed", ea.seed, "oracle seed");
  ev->add_option("--checkpoints", ea.checkpoints, "marginal checkpoint times");
  ev->add_option("--particles", ea.particles, "marginal particle count");
  ev->add_option("--steps", ea.steps_per_segment, "marginal steps per segment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return run_gen_corpus(gen_out, gen_count, gen_dim, gen_seed);
    if (*train) return run_train_base(tr_corpus, tr_config, tr_out);
    if (*enc) return run_encode(en_ckpt, en_signal, en_config, en_out, en_scale);
    if (*dec)
      return run_decode(de_ckpt, de_stream, de_config, de_out,
                        de_tau >= 0.0 ? std::optional<double>(de_tau) : std::nullopt);
    if (*ev) return run_eval(ea);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
