#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sd/decisions.hpp"
#include "sd/model.hpp"

namespace sd {

// One FLOP convention everywhere: a matrix product [m×k]·[k×n] costs 2·m·n·k
// (multiply + add); element-wise work, softmax and layer norm are free. The
// instrumented counter in the tensor core follows the same rule, so analytic
// counts must match measured counts exactly.

// Q,K,V,O projections plus scores and weighted sum across all heads:
// 4·n_q·e² + 4·n_kv·e² + 4·n_q·n_kv·e (head count cancels).
uint64_t attention_flops(int n_q, int n_kv, int e);
// Two linear maps e→d_ff→e: 4·n·e·d_ff.
uint64_t ffn_flops(int n, int e, int d_ff);

struct SkipStats {
  double att_pct = 0.0;    // % of attention units skipped (layer 1 counts in the base)
  double ffn_pct = 0.0;    // % of FFN units skipped
  double token_pct = 0.0;  // % of encoder tokens dropped
};

struct FlopsReport {
  uint64_t total = 0;
  std::map<std::string, uint64_t> per_unit;  // "enc1.att", "dec2.ffn", "out_proj", ...
  double fraction = 0.0;                     // total / all-keep keep-all total
  SkipStats skip_stats;
};

// Analytic cost of any path through a configured model, for the encoder
// input length n_src and decoder input length n_tgt actually fed to the
// network. Pure function; safe to share.
class CostModel {
 public:
  explicit CostModel(const ModelConfig& config);

  FlopsReport path_flops(const Decisions& decisions, int n_src, int n_tgt) const;
  uint64_t full_total(int n_src, int n_tgt) const;  // all-keep, keep-all
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
};

}  // namespace sd
