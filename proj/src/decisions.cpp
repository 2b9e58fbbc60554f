#include "sd/decisions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sd/rng.hpp"
#include "sd/tensor.hpp"

namespace sd {

namespace {

void check_layer(int layer, int lo, int hi, const char* what) {
  if (layer < lo || layer > hi)
    throw std::out_of_range(std::string(what) + ": layer " + std::to_string(layer) +
                            " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

void check_dist(const DecisionDistribution& dist) {
  if (dist.h.empty()) throw std::invalid_argument("decision distribution has no strategy head");
}

void check_match(const DecisionDistribution& dist, const Decisions& d) {
  if (d.sublayer_keep.size() != dist.g.size())
    throw std::invalid_argument("decisions carry " + std::to_string(d.sublayer_keep.size()) +
                                " bits, distribution has " + std::to_string(dist.g.size()));
  if (d.token_strategy < 0 || d.token_strategy >= static_cast<int>(dist.h.size()))
    throw std::invalid_argument("strategy index " + std::to_string(d.token_strategy) +
                                " outside distribution of " + std::to_string(dist.h.size()));
}

}  // namespace

const std::array<TokenStrategy, kNumTokenStrategies>& token_strategy_table() {
  static const std::array<TokenStrategy, kNumTokenStrategies> table = {{
      {ThinKind::KeepAll, 0},
      {ThinKind::DropLast, 10},
      {ThinKind::DropLast, 20},
      {ThinKind::DropLast, 30},
      {ThinKind::DropUniform, 25},
      {ThinKind::DropUniform, 33},
      {ThinKind::DropUniform, 50},
  }};
  return table;
}

std::vector<int> apply_token_strategy(int n, const TokenStrategy& strategy) {
  if (n < 1) throw std::invalid_argument("apply_token_strategy: n must be >= 1");
  std::vector<int> kept;
  switch (strategy.kind) {
    case ThinKind::KeepAll:
      kept.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) kept[static_cast<size_t>(i)] = i;
      break;
    case ThinKind::DropLast: {
      const int dropped = n * strategy.percent / 100;  // floor
      for (int i = 0; i < n - dropped; ++i) kept.push_back(i);
      break;
    }
    case ThinKind::DropUniform: {
      const int k = static_cast<int>(std::lround(100.0 / strategy.percent));
      for (int i = 0; i < n; ++i)
        if (i % k != k - 1) kept.push_back(i);
      break;
    }
  }
  if (kept.empty()) kept.push_back(0);  // never thin to nothing
  return kept;
}

std::vector<int> apply_token_strategy(int n, int strategy_index) {
  if (strategy_index < 0 || strategy_index >= kNumTokenStrategies)
    throw std::out_of_range("apply_token_strategy: strategy index " +
                            std::to_string(strategy_index) + " outside table of " +
                            std::to_string(kNumTokenStrategies));
  return apply_token_strategy(n, token_strategy_table()[static_cast<size_t>(strategy_index)]);
}

int DecisionLayout::enc_att(int layer) const {
  check_layer(layer, 2, l_enc, "enc_att");
  return layer - 2;
}

int DecisionLayout::enc_ffn(int layer) const {
  check_layer(layer, 2, l_enc, "enc_ffn");
  return (l_enc - 1) + (layer - 2);
}

int DecisionLayout::dec_att(int layer) const {
  check_layer(layer, 1, l_dec, "dec_att");
  return 2 * (l_enc - 1) + (layer - 1);
}

int DecisionLayout::dec_ffn(int layer) const {
  check_layer(layer, 1, l_dec, "dec_ffn");
  return 2 * (l_enc - 1) + l_dec + (layer - 1);
}

Decisions Decisions::all_keep(int d) {
  Decisions out;
  out.sublayer_keep.assign(static_cast<size_t>(d), 1);
  out.token_strategy = 0;
  return out;
}

std::string Decisions::to_string() const {
  std::string s;
  s.reserve(sublayer_keep.size() + 2);
  for (uint8_t b : sublayer_keep) s.push_back(b ? '1' : '0');
  s.push_back('|');
  s += std::to_string(token_strategy);
  return s;
}

Decisions Decisions::parse(const std::string& text, int expected_d) {
  Decisions out;
  size_t i = 0;
  for (; i < text.size() && text[i] != '|'; ++i) {
    if (text[i] != '0' && text[i] != '1')
      throw std::invalid_argument("decision string: invalid character '" + std::string(1, text[i]) +
                                  "' at position " + std::to_string(i) + " (want 0, 1 or |)");
    out.sublayer_keep.push_back(text[i] == '1');
  }
  if (i == text.size())
    throw std::invalid_argument("decision string: missing '|' separator at position " +
                                std::to_string(i));
  if (static_cast<int>(out.sublayer_keep.size()) != expected_d)
    throw std::invalid_argument("decision string: " + std::to_string(out.sublayer_keep.size()) +
                                " bits before position " + std::to_string(i) + ", expected " +
                                std::to_string(expected_d));
  const std::string tail = text.substr(i + 1);
  if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("decision string: strategy index at position " +
                                std::to_string(i + 1) + " is not a number");
  out.token_strategy = std::stoi(tail);
  if (out.token_strategy >= kNumTokenStrategies)
    throw std::invalid_argument("decision string: strategy " + std::to_string(out.token_strategy) +
                                " at position " + std::to_string(i + 1) + " outside table of " +
                                std::to_string(kNumTokenStrategies));
  return out;
}

DecisionDistribution DecisionDistribution::uniform(int d, int j) {
  DecisionDistribution dist;
  dist.g.assign(static_cast<size_t>(d), 0.5);
  dist.h.assign(static_cast<size_t>(j), 1.0 / j);
  return dist;
}

DecisionSpaceMask DecisionSpaceMask::full(const DecisionLayout& layout) {
  DecisionSpaceMask m;
  m.free_bits.assign(static_cast<size_t>(layout.d()), 1);
  m.strategy_free = true;
  return m;
}

DecisionSpaceMask DecisionSpaceMask::encoder_only(const DecisionLayout& layout) {
  DecisionSpaceMask m;
  m.free_bits.assign(static_cast<size_t>(layout.d()), 0);
  for (int l = 2; l <= layout.l_enc; ++l) {
    m.free_bits[static_cast<size_t>(layout.enc_att(l))] = 1;
    m.free_bits[static_cast<size_t>(layout.enc_ffn(l))] = 1;
  }
  m.strategy_free = false;
  return m;
}

DecisionSpaceMask DecisionSpaceMask::decoder_only(const DecisionLayout& layout) {
  DecisionSpaceMask m;
  m.free_bits.assign(static_cast<size_t>(layout.d()), 0);
  for (int l = 1; l <= layout.l_dec; ++l) {
    m.free_bits[static_cast<size_t>(layout.dec_att(l))] = 1;
    m.free_bits[static_cast<size_t>(layout.dec_ffn(l))] = 1;
  }
  m.strategy_free = false;
  return m;
}

DecisionSpaceMask DecisionSpaceMask::token_only(const DecisionLayout& layout) {
  DecisionSpaceMask m;
  m.free_bits.assign(static_cast<size_t>(layout.d()), 0);
  m.strategy_free = true;
  return m;
}

void DecisionSpaceMask::force(Decisions& d) const {
  if (d.sublayer_keep.size() != free_bits.size())
    throw std::invalid_argument("decision mask covers " + std::to_string(free_bits.size()) +
                                " bits, decisions carry " + std::to_string(d.sublayer_keep.size()));
  for (size_t i = 0; i < free_bits.size(); ++i)
    if (!free_bits[i]) d.sublayer_keep[i] = 1;
  if (!strategy_free) d.token_strategy = 0;
}

bool DecisionSpaceMask::is_free_everywhere() const {
  if (!strategy_free) return false;
  return std::all_of(free_bits.begin(), free_bits.end(), [](uint8_t b) { return b != 0; });
}

Decisions sample_decisions(const DecisionDistribution& dist, Rng& rng) {
  check_dist(dist);
  Decisions out;
  out.sublayer_keep.resize(dist.g.size());
  for (size_t i = 0; i < dist.g.size(); ++i)
    out.sublayer_keep[i] = rng.bernoulli(dist.g[i]) ? 1 : 0;
  // inverse-CDF draw keeps the RNG stream at one word per strategy
  double u = rng.next_double();
  int a = static_cast<int>(dist.h.size()) - 1;
  double acc = 0.0;
  for (size_t j = 0; j < dist.h.size(); ++j) {
    acc += dist.h[j];
    if (u < acc) {
      a = static_cast<int>(j);
      break;
    }
  }
  out.token_strategy = a;
  return out;
}

Decisions argmax_decisions(const DecisionDistribution& dist) {
  check_dist(dist);
  Decisions out;
  out.sublayer_keep.resize(dist.g.size());
  for (size_t i = 0; i < dist.g.size(); ++i) out.sublayer_keep[i] = dist.g[i] >= 0.5 ? 1 : 0;
  out.token_strategy = static_cast<int>(
      std::max_element(dist.h.begin(), dist.h.end()) - dist.h.begin());  // first max wins ties
  return out;
}

double log_prob(const DecisionDistribution& dist, const Decisions& d) {
  check_match(dist, d);
  double lp = 0.0;
  for (size_t i = 0; i < dist.g.size(); ++i) {
    const double g = std::clamp(dist.g[i], kProbEps, 1.0 - kProbEps);
    lp += d.sublayer_keep[i] ? std::log(g) : std::log(1.0 - g);
  }
  lp += std::log(std::clamp(dist.h[static_cast<size_t>(d.token_strategy)], kProbEps, 1.0));
  return lp;
}

double log_prob(const DecisionDistribution& dist, const Decisions& d,
                const DecisionSpaceMask& mask) {
  check_match(dist, d);
  if (mask.free_bits.size() != dist.g.size())
    throw std::invalid_argument("decision mask covers " + std::to_string(mask.free_bits.size()) +
                                " bits, distribution has " + std::to_string(dist.g.size()));
  double lp = 0.0;
  for (size_t i = 0; i < dist.g.size(); ++i) {
    if (!mask.free_bits[i]) continue;
    const double g = std::clamp(dist.g[i], kProbEps, 1.0 - kProbEps);
    lp += d.sublayer_keep[i] ? std::log(g) : std::log(1.0 - g);
  }
  if (mask.strategy_free)
    lp += std::log(std::clamp(dist.h[static_cast<size_t>(d.token_strategy)], kProbEps, 1.0));
  return lp;
}

int64_t decision_space_size(int d, int j) {
  if (d < 0 || d > kMaxEnumerationBits)
    throw std::invalid_argument("decision space with " + std::to_string(d) +
                                " bits exceeds the enumeration cap of " +
                                std::to_string(kMaxEnumerationBits));
  if (j < 1) throw std::invalid_argument("decision space needs at least one strategy");
  return (int64_t{1} << d) * j;
}

void for_each_decisions(int d, int j, const std::function<void(const Decisions&)>& fn) {
  decision_space_size(d, j);  // validates the bounds
  Decisions dec;
  dec.sublayer_keep.assign(static_cast<size_t>(d), 0);
  for (int64_t bits = 0; bits < (int64_t{1} << d); ++bits) {
    for (int i = 0; i < d; ++i)
      dec.sublayer_keep[static_cast<size_t>(i)] = (bits >> i) & 1 ? 1 : 0;
    for (int a = 0; a < j; ++a) {
      dec.token_strategy = a;
      fn(dec);
    }
  }
}

}  // namespace sd
