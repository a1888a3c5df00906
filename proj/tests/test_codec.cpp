#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "vov/codec.hpp"

using namespace vov;
using Catch::Approx;

namespace {

// a small operating point that keeps encodes fast
CodecConfig small_config() {
  CodecConfig cfg;
  cfg.k = 64;
  cfg.rank = 1;
  cfg.grid_steps = 30;
  cfg.stage1_steps = 120;
  cfg.stage2_steps = 120;
  cfg.batch_size = 32;
  cfg.q_max = 32;
  cfg.net_hidden = {24, 24};
  cfg.net_time_embed = 4;
  return cfg;
}

VectorFieldNet small_net(const CodecConfig& cfg, int dim) {
  NetConfig ncfg;
  ncfg.input_dim = dim;
  ncfg.hidden_dims = cfg.net_hidden;
  ncfg.time_embed_dim = cfg.net_time_embed;
  ncfg.seed = cfg.net_seed;
  std::vector<Vec> corpus;
  PrngStream rng(cfg.base_seed, "corpus");
  for (uint32_t i = 0; i < 3; ++i) {
    Vec s = rng.normal_vector(i, 0, size_t(dim));
    for (double& c : s) c = 0.5 + 0.25 * c;
    corpus.push_back(std::move(s));
  }
  TrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 32;
  tc.seed = cfg.base_seed;
  return train_base(corpus, ncfg, tc);
}

Vec test_signal(int dim) {
  Vec x(static_cast<size_t>(dim));
  for (int i = 0; i < dim; ++i) x[size_t(i)] = 0.5 + 0.4 * std::sin(0.7 * double(i));
  return x;
}

}  // namespace

TEST_CASE("configs round-trip through text and digest only their content") {
  CodecConfig cfg = small_config();
  std::string text = cfg.to_text();
  CodecConfig back = CodecConfig::from_text(text);
  REQUIRE(back.to_text() == text);
  REQUIRE(back.digest() == cfg.digest());

  CodecConfig changed = cfg;
  changed.k = 128;
  REQUIRE(changed.digest() != cfg.digest());

  // sparse files keep defaults for everything they do not mention
  CodecConfig sparse = CodecConfig::from_text("k = 512\n# comment\n\nlambda = 0.01\n");
  REQUIRE(sparse.k == 512);
  REQUIRE(sparse.lambda == 0.01);
  REQUIRE(sparse.rank == CodecConfig{}.rank);

  REQUIRE_THROWS_AS(CodecConfig::from_text("unknown_key = 3\n"), ConfigError);
  REQUIRE_THROWS_AS(CodecConfig::from_text("k = 1\nk = 2\n"), ConfigError);
  REQUIRE_THROWS_AS(CodecConfig::from_text("k = abc\n"), ConfigError);
  REQUIRE_THROWS_AS(CodecConfig::from_text("k = 12junk\n"), ConfigError);
  REQUIRE_THROWS_AS(CodecConfig::from_text("k\n"), ConfigError);
  REQUIRE_THROWS_AS(CodecConfig::from_text("net_hidden = 24,,24\n"), ConfigError);

  CodecConfig bad = cfg;
  bad.k = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.net_hidden.clear();
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("bitstreams serialize and parse losslessly") {
  Bitstream b;
  b.config_digest = 0x0123456789ABCDEFull;
  b.proj_seed = 7;
  b.sampler_seed = 9;
  b.s = 0.03125f;
  for (size_t i = 0; i < 9; ++i) b.psi[i] = float(i) * 0.25f - 1.0f;
  b.symbol_count = 5;
  b.payload = std::string("\x01\x02\xFF\x00\x7F", 5);

  SECTION("without a scaling block") {
    std::string bytes = serialize_bitstream(b);
    REQUIRE(bytes.size() == 79 + b.payload.size());  // fixed header + flag + payload
    Bitstream p = parse_bitstream(bytes);
    REQUIRE(p.config_digest == b.config_digest);
    REQUIRE(p.proj_seed == b.proj_seed);
    REQUIRE(p.sampler_seed == b.sampler_seed);
    REQUIRE(p.s == b.s);
    REQUIRE(p.psi == b.psi);
    REQUIRE(p.symbol_count == b.symbol_count);
    REQUIRE(p.payload == b.payload);
    REQUIRE_FALSE(p.scaling.has_value());

    BitAccounting acc = accounting(b);
    REQUIRE(acc.total_bits == 8 * bytes.size());
    REQUIRE(acc.payload_bits == 40);
    REQUIRE(acc.header_bits == 632);
    REQUIRE(acc.scaling_index_bits == 0);
    REQUIRE(acc.scaling_block_bits == 0);
  }

  SECTION("with scaling blocks of awkward widths") {
    for (uint32_t m : {1u, 3u, 16u}) {
      Bitstream sb = b;
      ScalingTrace tr;
      tr.steps = 37;
      tr.m = m;
      tr.seed = 1234567;
      SequenceRng rng(m, "idx");
      tr.indices.resize(37);
      for (uint32_t& i : tr.indices) i = uint32_t(rng.below(m));
      sb.scaling = tr;

      std::string bytes = serialize_bitstream(sb);
      Bitstream p = parse_bitstream(bytes);
      REQUIRE(p.scaling.has_value());
      REQUIRE(p.scaling->steps == tr.steps);
      REQUIRE(p.scaling->m == tr.m);
      REQUIRE(p.scaling->seed == tr.seed);
      REQUIRE(p.scaling->indices == tr.indices);

      BitAccounting acc = accounting(sb);
      REQUIRE(acc.scaling_index_bits == 37 * ceil_log2(m));
      uint64_t padded = 8 * ((acc.scaling_index_bits + 7) / 8);
      REQUIRE(acc.scaling_block_bits == 128 + padded - acc.scaling_index_bits);
      REQUIRE(acc.total_bits ==
              acc.header_bits + acc.payload_bits + acc.scaling_index_bits + acc.scaling_block_bits);
    }
  }
}

TEST_CASE("malformed bitstreams raise format errors, never crash") {
  Bitstream b;
  b.symbol_count = 2;
  b.payload = "abcdef";
  ScalingTrace tr;
  tr.steps = 9;
  tr.m = 4;
  tr.seed = 3;
  tr.indices = {0, 1, 2, 3, 0, 1, 2, 3, 1};
  b.scaling = tr;
  std::string bytes = serialize_bitstream(b);

  REQUIRE_THROWS_AS(parse_bitstream("VOXB" + bytes.substr(4)), FormatError);
  REQUIRE_THROWS_AS(parse_bitstream(""), FormatError);

  std::string bad_version = bytes;
  bad_version[4] = 2;
  REQUIRE_THROWS_AS(parse_bitstream(bad_version), FormatError);

  for (size_t cut = 0; cut < bytes.size(); ++cut)
    REQUIRE_THROWS_AS(parse_bitstream(bytes.substr(0, cut)), FormatError);
  REQUIRE_THROWS_AS(parse_bitstream(bytes + "x"), FormatError);

  // an index outside [0, m) is rejected at parse time: m=3 packs two bits
  Bitstream idx = b;
  idx.scaling->m = 3;
  idx.scaling->indices.assign(9, 0);
  std::string ibytes = serialize_bitstream(idx);
  ibytes[ibytes.size() - 3] = char(0xC0);  // first packed index becomes 3
  REQUIRE_THROWS_AS(parse_bitstream(ibytes), FormatError);

  SequenceRng rng(21, "fuzz");
  for (int trial = 0; trial < 500; ++trial) {
    std::string junk(rng.below(200), '\0');
    for (char& c : junk) c = char(uint8_t(rng.below(256)));
    if (trial % 3 == 0 && junk.size() >= 4) junk.replace(0, 4, "VOVB");
    try {
      parse_bitstream(junk);
    } catch (const FormatError&) {
    }
  }
  SUCCEED("fuzz survived");
}

TEST_CASE("encode and decode agree bit for bit across process boundaries") {
  const int dim = 16;
  CodecConfig cfg = small_config();
  VectorFieldNet net = small_net(cfg, dim);
  Vec x = test_signal(dim);

  EncodeResult res = encode(net, x, cfg);
  REQUIRE(res.stream.symbol_count == uint32_t(cfg.k));
  REQUIRE(all_finite(res.reconstruction));

  // the reported reconstruction is exactly what decoding the stream gives
  Vec dec = decode(net, res.stream, cfg);
  REQUIRE(dec == res.reconstruction);

  // ... also after a serialize/parse round trip
  Bitstream reparsed = parse_bitstream(serialize_bitstream(res.stream));
  REQUIRE(decode(net, reparsed, cfg) == res.reconstruction);

  // ... and after a file round trip
  auto path = std::filesystem::temp_directory_path() / "vov_test_codec.vovb";
  save_bitstream(res.stream, path.string());
  Bitstream loaded = load_bitstream(path.string());
  REQUIRE(decode(net, loaded, cfg) == res.reconstruction);
  std::filesystem::remove(path);

  // encoding is deterministic end to end
  EncodeResult res2 = encode(net, x, cfg);
  REQUIRE(serialize_bitstream(res2.stream) == serialize_bitstream(res.stream));

  // traces surface for diagnostics
  REQUIRE(int(res.stage1.loss.size()) == cfg.stage1_steps);
  REQUIRE(int(res.stage2.loss.size()) == cfg.stage2_steps);
}

TEST_CASE("decoding under the wrong configuration is refused") {
  const int dim = 16;
  CodecConfig cfg = small_config();
  VectorFieldNet net = small_net(cfg, dim);
  EncodeResult res = encode(net, test_signal(dim), cfg);

  CodecConfig other = cfg;
  other.lambda = 2.0 * cfg.lambda;
  try {
    decode(net, res.stream, other);
    FAIL("digest mismatch must be rejected");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("decode with the exact config") != std::string::npos);
  }

  Bitstream tampered = res.stream;
  tampered.proj_seed = cfg.proj_seed + 1;
  REQUIRE_THROWS_AS(decode(net, tampered, cfg), IntegrityError);

  Bitstream short_count = res.stream;
  short_count.symbol_count = uint32_t(cfg.k - 1);
  REQUIRE_THROWS_AS(decode(net, short_count, cfg), IntegrityError);
}

TEST_CASE("an all-zero vector decodes along the unadapted base field") {
  const int dim = 16;
  CodecConfig cfg = small_config();
  VectorFieldNet net = small_net(cfg, dim);

  EntropyModel em = EntropyModel::init_default();
  Bitstream bs;
  bs.config_digest = cfg.digest();
  bs.proj_seed = cfg.proj_seed;
  bs.sampler_seed = cfg.sampler_seed;
  bs.s = 1.0f;
  for (size_t i = 0; i < 9; ++i) bs.psi[i] = float(em.psi[i]);
  EntropyModel em32;
  for (size_t i = 0; i < 9; ++i) em32.psi[i] = double(bs.psi[i]);
  bs.symbol_count = uint32_t(cfg.k);
  bs.payload = range_encode(Symbols(size_t(cfg.k), 0),
                            FrozenEntropyModel::freeze(em32, cfg.q_max));

  Vec via_codec = decode(net, bs, cfg);
  Vec via_base = detail::ode_decode(net.field(), size_t(dim), cfg.grid(), cfg.sampler_seed,
                                    cfg.eta0);
  REQUIRE(via_codec == via_base);
}

TEST_CASE("guided stochastic decoding rides along the bitstream") {
  const int dim = 16;
  CodecConfig cfg = small_config();
  VectorFieldNet net = small_net(cfg, dim);
  Vec x = test_signal(dim);

  ScaleOptions sc;
  sc.steps = 25;
  sc.m = 8;
  sc.seed = 5;
  EncodeResult res = encode(net, x, cfg, sc);
  REQUIRE(res.stream.scaling.has_value());
  REQUIRE(res.stream.scaling->indices.size() == 25);
  REQUIRE(res.bits.scaling_index_bits == 75);

  REQUIRE(decode(net, res.stream, cfg) == res.reconstruction);
  Bitstream reparsed = parse_bitstream(serialize_bitstream(res.stream));
  REQUIRE(decode(net, reparsed, cfg) == res.reconstruction);

  // the extra block shows up in the accounting and nowhere else
  EncodeResult plain = encode(net, x, cfg);
  REQUIRE(res.bits.total_bits > plain.bits.total_bits);
  REQUIRE_FALSE(plain.stream.scaling.has_value());
}

TEST_CASE("early-stopped decoding hits grid boundaries only") {
  const int dim = 16;
  CodecConfig cfg = small_config();
  VectorFieldNet net = small_net(cfg, dim);
  EncodeResult res = encode(net, test_signal(dim), cfg);

  Vec at_floor = decode_early_stop(net, res.stream, cfg, cfg.eta0);
  REQUIRE(at_floor == res.reconstruction);

  TimeGrid grid = cfg.grid();
  Vec mid = decode_early_stop(net, res.stream, cfg, grid.boundaries[grid.boundaries.size() / 2]);
  REQUIRE(all_finite(mid));
  REQUIRE(mid != res.reconstruction);

  REQUIRE_THROWS_AS(decode_early_stop(net, res.stream, cfg, 0.1234567), DomainError);
}

TEST_CASE("the fixed header stays a small share of a default-sized stream") {
  // a default-scale vector (k and lambda at their shipped values) must keep
  // the 79-byte header below five percent of the total
  const int dim = 256;
  CodecConfig cfg;
  cfg.k = 4096;
  cfg.rank = 4;
  cfg.net_hidden = {96, 96, 96};
  cfg.net_time_embed = 16;
  cfg.stage1_steps = 150;
  cfg.stage2_steps = 150;
  cfg.grid_steps = 30;

  NetConfig ncfg;
  ncfg.input_dim = dim;
  ncfg.hidden_dims = cfg.net_hidden;
  ncfg.time_embed_dim = cfg.net_time_embed;
  ncfg.seed = cfg.net_seed;
  VectorFieldNet net = VectorFieldNet::init(ncfg);

  Vec x(static_cast<size_t>(dim));
  for (int i = 0; i < dim; ++i) x[size_t(i)] = 0.5 + 0.3 * std::sin(0.11 * double(i));

  EncodeResult res = encode(net, x, cfg);
  double share = double(res.bits.header_bits) / double(res.bits.total_bits);
  INFO("header bits " << res.bits.header_bits << " of " << res.bits.total_bits);
  REQUIRE(res.bits.header_bits == 632);
  REQUIRE(share < 0.05);
}
