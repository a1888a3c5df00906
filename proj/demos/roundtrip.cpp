// End-to-end demo: synthesize a small image, train a tiny base model, then
// compress and reconstruct the image through the one-vector codec.

#include <cstdio>

#include "vov/codec.hpp"
#include "vov/eval.hpp"
#include "vov/signal_io.hpp"

using namespace vov;

int main() {
  const int side = 12;
  Signal sig = synth_signal(side, 42);

  CodecConfig cfg;
  cfg.k = 256;
  cfg.rank = 3;
  cfg.net_hidden = {48, 48};
  cfg.net_time_embed = 8;
  cfg.stage1_steps = 1500;
  cfg.stage1_lr = 3e-3;
  cfg.stage2_steps = 600;
  cfg.grid_steps = 50;
  cfg.base_steps = 2000;

  NetConfig ncfg;
  ncfg.input_dim = side * side;
  ncfg.hidden_dims = cfg.net_hidden;
  ncfg.time_embed_dim = cfg.net_time_embed;
  ncfg.seed = cfg.net_seed;

  TrainConfig tcfg;
  tcfg.steps = cfg.base_steps;
  tcfg.seed = cfg.base_seed;

  std::vector<Vec> corpus;
  for (uint64_t i = 0; i < 4; ++i) corpus.push_back(synth_signal(side, 100 + i).data);
  std::printf("training base model on %zu signals...\n", corpus.size());
  VectorFieldNet net = train_base(corpus, ncfg, tcfg);

  std::printf("encoding...\n");
  EncodeResult res = encode(net, sig.data, cfg);
  std::printf("  total %llu bits (%.2f per sample), payload %llu, header %llu\n",
              (unsigned long long)res.bits.total_bits, res.bits.bits_per_dim(sig.size()),
              (unsigned long long)res.bits.payload_bits, (unsigned long long)res.bits.header_bits);
  std::printf("  deterministic decode PSNR: %.2f dB\n", psnr(res.reconstruction, sig.data));

  ScaleOptions sc;
  sc.steps = 50;
  sc.m = 64;
  EncodeResult guided = encode(net, sig.data, cfg, sc);
  std::printf("  guided decode (m=%u) PSNR: %.2f dB at %llu extra side-information bits\n", sc.m,
              psnr(guided.reconstruction, sig.data),
              (unsigned long long)guided.bits.scaling_index_bits);

  Vec again = decode(net, guided.stream, cfg);
  std::printf("  replay matches the encoder: %s\n",
              again == guided.reconstruction ? "yes" : "NO");
  return 0;
}
