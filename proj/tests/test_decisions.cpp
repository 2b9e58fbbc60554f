#include "doctest.h"

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "sd/decisions.hpp"
#include "sd/rng.hpp"

using namespace sd;

TEST_CASE("token strategy table: frozen order and parameters") {
  const auto& table = token_strategy_table();
  REQUIRE(table.size() == 7);
  CHECK(table[0].kind == ThinKind::KeepAll);
  CHECK(table[1].kind == ThinKind::DropLast);
  CHECK(table[1].percent == 10);
  CHECK(table[2].percent == 20);
  CHECK(table[3].percent == 30);
  CHECK(table[4].kind == ThinKind::DropUniform);
  CHECK(table[4].percent == 25);
  CHECK(table[5].percent == 33);
  CHECK(table[6].percent == 50);
}

TEST_CASE("apply_token_strategy: worked examples") {
  CHECK(apply_token_strategy(10, 3) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});  // drop-last 30%
  CHECK(apply_token_strategy(10, 2) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(apply_token_strategy(6, 6) == std::vector<int>{0, 2, 4});               // every 2nd out
  CHECK(apply_token_strategy(9, 5) == std::vector<int>{0, 1, 3, 4, 6, 7});      // i%3==2 out
  CHECK(apply_token_strategy(8, 4) == std::vector<int>{0, 1, 2, 4, 5, 6});      // i%4==3 out
  for (int n = 1; n <= 12; ++n) {
    auto all = apply_token_strategy(n, 0);
    CHECK(static_cast<int>(all.size()) == n);
  }
}

TEST_CASE("apply_token_strategy: never empties the sequence") {
  // n=1 under drop-uniform-50 would drop index 0; the guard keeps it
  CHECK(apply_token_strategy(1, 6) == std::vector<int>{0});
  for (int s = 0; s < 7; ++s)
    for (int n = 1; n <= 16; ++n) {
      auto kept = apply_token_strategy(n, s);
      REQUIRE(!kept.empty());
      for (size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] > kept[i - 1]);
      CHECK(kept.back() < n);
    }
}

TEST_CASE("decision layout: index map and bounds") {
  DecisionLayout layout{3, 2};  // l_enc=3, l_dec=2
  CHECK(layout.d() == 2 * 2 + 2 * 2);
  CHECK(layout.enc_att(2) == 0);
  CHECK(layout.enc_att(3) == 1);
  CHECK(layout.enc_ffn(2) == 2);
  CHECK(layout.enc_ffn(3) == 3);
  CHECK(layout.dec_att(1) == 4);
  CHECK(layout.dec_att(2) == 5);
  CHECK(layout.dec_ffn(1) == 6);
  CHECK(layout.dec_ffn(2) == 7);
  CHECK_THROWS_AS(layout.enc_att(1), std::out_of_range);  // layer 1 is not gated
  CHECK_THROWS_AS(layout.dec_att(3), std::out_of_range);
}

TEST_CASE("enumeration: counts and determinism") {
  int count = 0;
  std::set<std::string> seen;
  for_each_decisions(3, 7, [&](const Decisions& d) {
    ++count;
    seen.insert(d.to_string());
  });
  CHECK(count == 56);
  CHECK(seen.size() == 56);  // each path exactly once

  count = 0;
  for_each_decisions(0, 1, [&](const Decisions&) { ++count; });
  CHECK(count == 1);

  CHECK(decision_space_size(6, 7) == 448);
  CHECK_THROWS_AS(for_each_decisions(kMaxEnumerationBits + 1, 7, [](const Decisions&) {}),
                  std::invalid_argument);
}

TEST_CASE("log_prob: analytic example and normalization over the space") {
  DecisionDistribution dist;
  dist.g = {0.5, 0.5};
  dist.h.assign(7, 1.0 / 7);
  Decisions d;
  d.sublayer_keep = {1, 0};
  d.token_strategy = 4;
  CHECK(log_prob(dist, d) ==
        doctest::Approx(std::log(0.25) + std::log(1.0 / 7)).epsilon(1e-13));

  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const int d_bits = 1 + static_cast<int>(rng.next_below(8));
    DecisionDistribution random_dist;
    for (int i = 0; i < d_bits; ++i) random_dist.g.push_back(rng.uniform(0.05, 0.95));
    double z = 0;
    for (int j = 0; j < 7; ++j) {
      random_dist.h.push_back(rng.uniform(0.1, 1.0));
      z += random_dist.h.back();
    }
    for (double& h : random_dist.h) h /= z;
    double total = 0;
    for_each_decisions(d_bits, 7,
                       [&](const Decisions& dd) { total += std::exp(log_prob(random_dist, dd)); });
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("log_prob: saturated keep probabilities collapse to the strategy term") {
  DecisionDistribution dist;
  dist.g = {1.0, 1.0, 1.0};
  dist.h = {0.25, 0.75};
  Decisions d = Decisions::all_keep(3);
  d.token_strategy = 1;
  // g clamps at 1-1e-6, so the bit section contributes ~3e-6 nats
  CHECK(log_prob(dist, d) == doctest::Approx(std::log(0.75)).epsilon(1e-5));
}

TEST_CASE("sampling matches the distribution empirically") {
  DecisionDistribution dist;
  dist.g = {0.3, 0.8};
  dist.h = {0.5, 0.2, 0.3};
  Rng rng(123);
  const int n = 100000;
  std::map<std::string, int> freq;
  for (int i = 0; i < n; ++i) ++freq[sample_decisions(dist, rng).to_string()];
  for_each_decisions(2, 3, [&](const Decisions& d) {
    const double p = std::exp(log_prob(dist, d));
    const double sigma = std::sqrt(p * (1 - p) * n);
    CHECK(std::abs(freq[d.to_string()] - p * n) <= 4 * sigma + 1);
  });
}

TEST_CASE("sampling: fixed seed reproduces the sequence") {
  DecisionDistribution dist = DecisionDistribution::uniform(5);
  Rng a(7), b(7);
  for (int i = 0; i < 50; ++i) CHECK(sample_decisions(dist, a) == sample_decisions(dist, b));
}

TEST_CASE("argmax: worked example, keep-side ties, and dominance") {
  DecisionDistribution dist;
  dist.g = {0.7, 0.2};
  dist.h = {0.1, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0};
  Decisions best = argmax_decisions(dist);
  CHECK(best.sublayer_keep == std::vector<uint8_t>{1, 0});
  CHECK(best.token_strategy == 1);

  DecisionDistribution tie = DecisionDistribution::uniform(3);
  Decisions kept = argmax_decisions(tie);
  CHECK(kept.sublayer_keep == std::vector<uint8_t>{1, 1, 1});  // 0.5 breaks toward keep
  CHECK(kept.token_strategy == 0);                             // uniform h -> lowest index

  Rng rng(29);
  DecisionDistribution rd;
  for (int i = 0; i < 8; ++i) rd.g.push_back(rng.uniform(0.05, 0.95));
  double z = 0;
  for (int j = 0; j < 7; ++j) {
    rd.h.push_back(rng.uniform(0.1, 1.0));
    z += rd.h.back();
  }
  for (double& h : rd.h) h /= z;
  const double top = log_prob(rd, argmax_decisions(rd));
  for_each_decisions(8, 7, [&](const Decisions& d) { CHECK(log_prob(rd, d) <= top + 1e-12); });
}

TEST_CASE("serialization: round trip and parse errors with position") {
  Decisions d;
  d.sublayer_keep = {1, 1, 0, 1, 0, 1};
  d.token_strategy = 3;
  CHECK(d.to_string() == "110101|3");
  CHECK(Decisions::parse("110101|3", 6) == d);

  Decisions empty_bits;
  empty_bits.token_strategy = 2;
  CHECK(empty_bits.to_string() == "|2");
  CHECK(Decisions::parse("|2", 0) == empty_bits);

  CHECK_THROWS_WITH_AS(Decisions::parse("11x101|3", 6), doctest::Contains("position 2"),
                       std::invalid_argument);
  CHECK_THROWS_AS(Decisions::parse("110101", 6), std::invalid_argument);   // no separator
  CHECK_THROWS_AS(Decisions::parse("1101|3", 6), std::invalid_argument);   // wrong bit count
  CHECK_THROWS_AS(Decisions::parse("110101|9", 6), std::invalid_argument); // strategy range
}

TEST_CASE("decision space masks: forcing semantics") {
  DecisionLayout layout{2, 2};  // D=6: [enc_att2, enc_ffn2, dec_att1..2, dec_ffn1..2]
  const DecisionSpaceMask enc = DecisionSpaceMask::encoder_only(layout);
  const DecisionSpaceMask dec = DecisionSpaceMask::decoder_only(layout);
  const DecisionSpaceMask tok = DecisionSpaceMask::token_only(layout);
  const DecisionSpaceMask full = DecisionSpaceMask::full(layout);

  CHECK(full.is_free_everywhere());
  CHECK(enc.free_bits == std::vector<uint8_t>{1, 1, 0, 0, 0, 0});
  CHECK(!enc.strategy_free);  // sublayer-only spaces pin the token rule to keep-all
  CHECK(dec.free_bits == std::vector<uint8_t>{0, 0, 1, 1, 1, 1});
  CHECK(!dec.strategy_free);
  CHECK(tok.free_bits == std::vector<uint8_t>{0, 0, 0, 0, 0, 0});
  CHECK(tok.strategy_free);

  Decisions d;
  d.sublayer_keep = {0, 0, 0, 0, 0, 0};
  d.token_strategy = 5;
  Decisions forced = d;
  dec.force(forced);
  CHECK(forced.sublayer_keep == std::vector<uint8_t>{1, 1, 0, 0, 0, 0});
  CHECK(forced.token_strategy == 0);
  forced = d;
  tok.force(forced);
  CHECK(forced.sublayer_keep == std::vector<uint8_t>{1, 1, 1, 1, 1, 1});
  CHECK(forced.token_strategy == 5);
}
