#include "doctest.h"

#include <stdexcept>
#include <vector>

#include "sd/decisions.hpp"
#include "sd/flops.hpp"
#include "sd/model.hpp"
#include "sd/rng.hpp"
#include "sd/tensor.hpp"
#include "support.hpp"

using namespace sd;
using namespace sd::test;

TEST_CASE("attention cost: pinned values under the 2-MAC convention") {
  CHECK(attention_flops(8, 8, 16) == 20480);
  CHECK(attention_flops(1, 1, 1) == 12);
  // 4·3·16² + 4·5·16² + 4·3·5·16 = 3072 + 5120 + 960.
  CHECK(attention_flops(3, 5, 16) == 9152);
  CHECK_THROWS_AS(attention_flops(0, 4, 8), std::invalid_argument);
}

TEST_CASE("feed-forward cost: pinned values") {
  CHECK(ffn_flops(8, 16, 64) == 32768);
  CHECK(ffn_flops(1, 1, 1) == 4);
  CHECK_THROWS_AS(ffn_flops(3, 0, 8), std::invalid_argument);
}

TEST_CASE("all-keep path reproduces the full budget, fraction one, nothing skipped") {
  const CostModel cost(tiny_config());
  const Decisions keep = Decisions::all_keep(6);
  const FlopsReport report = cost.path_flops(keep, 8, 6);
  CHECK(report.total == cost.full_total(8, 6));
  CHECK(report.fraction == 1.0);
  CHECK(report.skip_stats.att_pct == 0.0);
  CHECK(report.skip_stats.ffn_pct == 0.0);
  CHECK(report.skip_stats.token_pct == 0.0);

  // Independent arithmetic for the tiny config (e=16, d_ff=64, V=10, 2+2 layers).
  const uint64_t enc = 2 * (attention_flops(8, 8, 16) + ffn_flops(8, 16, 64));
  const uint64_t dec =
      2 * (attention_flops(6, 6, 16) + attention_flops(6, 8, 16) + ffn_flops(6, 16, 64));
  const uint64_t proj = 2ull * 6 * 16 * 10;
  CHECK(report.total == enc + dec + proj);
}

TEST_CASE("every open gate costs something: clearing any bit strictly lowers the total") {
  const CostModel cost(tiny_config());
  const Decisions keep = Decisions::all_keep(6);
  const uint64_t full = cost.path_flops(keep, 10, 7).total;
  for (int bit = 0; bit < 6; ++bit) {
    Decisions d = keep;
    d.sublayer_keep[static_cast<size_t>(bit)] = 0;
    CHECK(cost.path_flops(d, 10, 7).total < full);
  }
  // Every thinning strategy bites at n = 10.
  for (int s = 1; s < kNumTokenStrategies; ++s) {
    Decisions d = keep;
    d.token_strategy = s;
    const FlopsReport r = cost.path_flops(d, 10, 7);
    CHECK(r.total < full);
    CHECK(r.fraction > 0.0);
    CHECK(r.fraction < 1.0);
  }
}

TEST_CASE("skipped units report zero cost and the skip percentages add up") {
  const CostModel cost(tiny_config());
  Decisions d;
  d.sublayer_keep = {0, 1, 1, 0, 0, 1};  // enc2.att off, dec2.att off, dec1.ffn off
  d.token_strategy = 4;                  // drop every 4th token
  const FlopsReport r = cost.path_flops(d, 8, 6);
  CHECK(r.per_unit.at("enc2.att") == 0);
  CHECK(r.per_unit.at("dec2.att") == 0);
  CHECK(r.per_unit.at("dec1.ffn") == 0);
  CHECK(r.per_unit.at("enc1.att") == attention_flops(8, 8, 16));
  CHECK(r.per_unit.at("enc2.ffn") == ffn_flops(6, 16, 64));  // thinned to 6 survivors
  CHECK(r.per_unit.at("dec1.att") ==
        attention_flops(6, 6, 16) + attention_flops(6, 6, 16));  // cross reads 6 kept rows
  CHECK(r.per_unit.at("out_proj") == 2ull * 6 * 16 * 10);
  CHECK(r.skip_stats.att_pct == 50.0);    // 2 of 4 attention units
  CHECK(r.skip_stats.ffn_pct == 25.0);    // 1 of 4 FFN units
  CHECK(r.skip_stats.token_pct == 25.0);  // 2 of 8 tokens
}

TEST_CASE("longer inputs cost more, superlinearly for attention") {
  const CostModel cost(tiny_config());
  const Decisions keep = Decisions::all_keep(6);
  const uint64_t short_run = cost.full_total(4, 4);
  const uint64_t long_run = cost.full_total(8, 8);
  CHECK(long_run > 2 * short_run);  // quadratic score terms
  CHECK(cost.path_flops(keep, 4, 8).total > cost.path_flops(keep, 4, 4).total);
}

TEST_CASE("analytic counts equal the instrumented matmul counter, path by path") {
  const ModelConfig cfg = micro_config();
  Rng rng(600);
  const TransformerModel model(cfg, rng);
  const CostModel cost(cfg);
  const std::vector<int> src = {3, 4, 5, 6, 7, 3, 4};       // n_src = 7
  const std::vector<int> tgt_in = {kBosToken, 5, 6, 7};     // n_tgt = 4

  const std::vector<std::vector<uint8_t>> bit_patterns = {
      {1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0}, {1, 0, 1, 0, 1, 0}, {0, 1, 0, 1, 0, 1}};
  for (const auto& bits : bit_patterns) {
    for (int s = 0; s < kNumTokenStrategies; ++s) {
      Decisions d;
      d.sublayer_keep = bits;
      d.token_strategy = s;
      reset_mac_flops();
      const EncodedMemory mem = model.encoder_forward(src, d);
      model.decoder_forward(tgt_in, mem, d);
      CHECK(mac_flops() == cost.path_flops(d, 7, 4).total);
    }
  }
}

TEST_CASE("cost queries validate their arguments") {
  const CostModel cost(tiny_config());
  const Decisions keep = Decisions::all_keep(6);
  CHECK_THROWS_AS(cost.path_flops(keep, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(cost.path_flops(keep, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(cost.path_flops(Decisions::all_keep(5), 4, 4), std::invalid_argument);
}
