#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sd {

class Rng;

// Seven fixed token-thinning rules applied to the encoder sequence after
// layer 1. Index 0 keeps everything; indices are part of the on-disk and
// log format, so the table order is frozen.
enum class ThinKind { KeepAll, DropLast, DropUniform };

struct TokenStrategy {
  ThinKind kind;
  int percent;  // 0 for keep-all
};

inline constexpr int kNumTokenStrategies = 7;

const std::array<TokenStrategy, kNumTokenStrategies>& token_strategy_table();

// Surviving indices, strictly increasing. keep-all -> [0..n); drop-last-p
// drops the final floor(p·n/100) positions; drop-uniform-p with
// k = round(100/p) drops every i with i mod k == k−1. If a rule would drop
// every token, index 0 is kept instead.
std::vector<int> apply_token_strategy(int n, const TokenStrategy& strategy);
std::vector<int> apply_token_strategy(int n, int strategy_index);

// Index bookkeeping for the keep/skip bit vector. Encoder layer 1 always
// runs (its output feeds the policy), so bits cover encoder layers
// 2..L_enc and decoder layers 1..L_dec, attention block first:
//   [enc-att 2..L_enc | enc-ffn 2..L_enc | dec-att 1..L_dec | dec-ffn 1..L_dec]
// A decoder layer's self- and cross-attention share one bit.
struct DecisionLayout {
  int l_enc = 0;
  int l_dec = 0;

  int d() const { return 2 * (l_enc - 1) + 2 * l_dec; }
  int enc_att(int layer) const;  // layer in [2, l_enc]
  int enc_ffn(int layer) const;  // layer in [2, l_enc]
  int dec_att(int layer) const;  // layer in [1, l_dec]
  int dec_ffn(int layer) const;  // layer in [1, l_dec]
};

// One concrete inference path: keep bit per gated sublayer plus one
// token-strategy index.
struct Decisions {
  std::vector<uint8_t> sublayer_keep;  // 1 = execute, 0 = identity passthrough
  int token_strategy = 0;

  static Decisions all_keep(int d);

  bool operator==(const Decisions& other) const = default;

  // Compact text form, e.g. "110101|3"; empty bit section when d = 0 ("|3").
  std::string to_string() const;
  // Inverse of to_string; complains with the offending position on bad input.
  static Decisions parse(const std::string& text, int expected_d);
};

// Per-bit keep probabilities and the strategy distribution emitted by the
// policy network.
struct DecisionDistribution {
  std::vector<double> g;  // keep probability per sublayer bit
  std::vector<double> h;  // strategy probabilities, sum to 1

  static DecisionDistribution uniform(int d, int j = kNumTokenStrategies);
};

// Restricted decision spaces: components that are not free are forced to
// keep / keep-all after sampling, contribute nothing to log-probabilities,
// and receive no policy gradient. D never changes, so checkpoints remain
// shape-compatible across ablations.
struct DecisionSpaceMask {
  std::vector<uint8_t> free_bits;  // 1 = policy-controlled
  bool strategy_free = true;

  static DecisionSpaceMask full(const DecisionLayout& layout);
  static DecisionSpaceMask encoder_only(const DecisionLayout& layout);
  static DecisionSpaceMask decoder_only(const DecisionLayout& layout);
  static DecisionSpaceMask token_only(const DecisionLayout& layout);

  void force(Decisions& d) const;  // clamp non-free components
  bool is_free_everywhere() const;
};

Decisions sample_decisions(const DecisionDistribution& dist, Rng& rng);
// Keep bit = (g_i >= 0.5), strategy = argmax h with ties to the lowest index.
Decisions argmax_decisions(const DecisionDistribution& dist);

// Σ_i [s_i ln g_i + (1−s_i) ln(1−g_i)] + ln h_a with g, h clamped at 1e-6.
// The masked overload sums only free components.
double log_prob(const DecisionDistribution& dist, const Decisions& d);
double log_prob(const DecisionDistribution& dist, const Decisions& d,
                const DecisionSpaceMask& mask);

// Visits all 2^D·J paths in a fixed order (bits as a little-endian counter,
// strategy fastest). D is capped to keep the walk finite.
inline constexpr int kMaxEnumerationBits = 20;
void for_each_decisions(int d, int j, const std::function<void(const Decisions&)>& fn);
int64_t decision_space_size(int d, int j);

}  // namespace sd
