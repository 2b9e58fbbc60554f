#include "sd/flops.hpp"

#include <stdexcept>

namespace sd {

namespace {

uint64_t u(int x) { return static_cast<uint64_t>(x); }

void check_positive(int v, const char* what) {
  if (v < 1) throw std::invalid_argument(std::string(what) + " must be >= 1, got " + std::to_string(v));
}

}  // namespace

uint64_t attention_flops(int n_q, int n_kv, int e) {
  check_positive(n_q, "attention_flops: n_q");
  check_positive(n_kv, "attention_flops: n_kv");
  check_positive(e, "attention_flops: e");
  return 4 * u(n_q) * u(e) * u(e) + 4 * u(n_kv) * u(e) * u(e) + 4 * u(n_q) * u(n_kv) * u(e);
}

uint64_t ffn_flops(int n, int e, int d_ff) {
  check_positive(n, "ffn_flops: n");
  check_positive(e, "ffn_flops: e");
  check_positive(d_ff, "ffn_flops: d_ff");
  return 4 * u(n) * u(e) * u(d_ff);
}

CostModel::CostModel(const ModelConfig& config) : config_(config) { config_.validate(); }

FlopsReport CostModel::path_flops(const Decisions& decisions, int n_src, int n_tgt) const {
  check_positive(n_src, "path_flops: n_src");
  check_positive(n_tgt, "path_flops: n_tgt");
  const DecisionLayout layout = config_.layout();
  if (static_cast<int>(decisions.sublayer_keep.size()) != layout.d())
    throw std::invalid_argument("path_flops: decisions carry " +
                                std::to_string(decisions.sublayer_keep.size()) + " bits, model needs " +
                                std::to_string(layout.d()));
  const int e = config_.e, d_ff = config_.d_ff;

  FlopsReport report;
  int att_skipped = 0, ffn_skipped = 0;

  // encoder: layer 1 always runs at full length, then the survivors
  report.per_unit["enc1.att"] = attention_flops(n_src, n_src, e);
  report.per_unit["enc1.ffn"] = ffn_flops(n_src, e, d_ff);
  const int n_kept =
      static_cast<int>(apply_token_strategy(n_src, decisions.token_strategy).size());
  for (int l = 2; l <= config_.l_enc; ++l) {
    const bool att = decisions.sublayer_keep[static_cast<size_t>(layout.enc_att(l))];
    const bool ffn = decisions.sublayer_keep[static_cast<size_t>(layout.enc_ffn(l))];
    report.per_unit["enc" + std::to_string(l) + ".att"] =
        att ? attention_flops(n_kept, n_kept, e) : 0;
    report.per_unit["enc" + std::to_string(l) + ".ffn"] = ffn ? ffn_flops(n_kept, e, d_ff) : 0;
    att_skipped += att ? 0 : 1;
    ffn_skipped += ffn ? 0 : 1;
  }

  // decoder: self- and cross-attention live behind one gate per layer
  for (int l = 1; l <= config_.l_dec; ++l) {
    const bool att = decisions.sublayer_keep[static_cast<size_t>(layout.dec_att(l))];
    const bool ffn = decisions.sublayer_keep[static_cast<size_t>(layout.dec_ffn(l))];
    report.per_unit["dec" + std::to_string(l) + ".att"] =
        att ? attention_flops(n_tgt, n_tgt, e) + attention_flops(n_tgt, n_kept, e) : 0;
    report.per_unit["dec" + std::to_string(l) + ".ffn"] = ffn ? ffn_flops(n_tgt, e, d_ff) : 0;
    att_skipped += att ? 0 : 1;
    ffn_skipped += ffn ? 0 : 1;
  }

  // embedding lookups cost nothing under the matmul convention; the output
  // projection is the one unskippable matrix product outside the layers
  report.per_unit["out_proj"] = 2 * u(n_tgt) * u(e) * u(config_.vocab_size);

  for (const auto& [unit, flops] : report.per_unit) report.total += flops;
  report.fraction = static_cast<double>(report.total) / static_cast<double>(full_total(n_src, n_tgt));

  const int att_units = config_.l_enc + config_.l_dec;
  const int ffn_units = config_.l_enc + config_.l_dec;
  report.skip_stats.att_pct = 100.0 * att_skipped / att_units;
  report.skip_stats.ffn_pct = 100.0 * ffn_skipped / ffn_units;
  report.skip_stats.token_pct = 100.0 * (n_src - n_kept) / n_src;
  return report;
}

uint64_t CostModel::full_total(int n_src, int n_tgt) const {
  uint64_t total = 0;
  for (int l = 1; l <= config_.l_enc; ++l)
    total += attention_flops(n_src, n_src, config_.e) + ffn_flops(n_src, config_.e, config_.d_ff);
  for (int l = 1; l <= config_.l_dec; ++l)
    total += attention_flops(n_tgt, n_tgt, config_.e) + attention_flops(n_tgt, n_src, config_.e) +
             ffn_flops(n_tgt, config_.e, config_.d_ff);
  return total + 2 * u(n_tgt) * u(config_.e) * u(config_.vocab_size);
}

}  // namespace sd
