#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sd/decisions.hpp"
#include "sd/tensor.hpp"

namespace sd {

class Rng;

// Reserved token ids, shared between the model's sequence framing and the
// task generators.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kFirstSymbolToken = 3;

struct ModelConfig {
  int vocab_size = 16;
  int e = 32;      // embedding / model width
  int d_ff = 128;  // feed-forward inner width
  int l_enc = 2;
  int l_dec = 2;
  int n_heads = 4;
  int max_len = 64;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  DecisionLayout layout() const { return DecisionLayout{l_enc, l_dec}; }
  int64_t param_count() const;  // pure function of the config
};

// Result of one encoder pass: the (possibly thinned) memory the decoder
// attends to, plus the full-length layer-1 output that feeds the policy.
struct EncodedMemory {
  Tensor hidden;                 // [n_kept × e]
  std::vector<int> kept_indices; // original positions, strictly increasing
  Tensor first_layer_output;     // [n × e], before thinning
};

struct EncoderLayerParams {
  Tensor ln1_g, ln1_b;          // pre-attention norm
  Tensor wq, wk, wv, wo;        // [e×e] each
  Tensor ln2_g, ln2_b;          // pre-FFN norm
  Tensor w1, w2;                // [e×d_ff], [d_ff×e]
};

struct DecoderLayerParams {
  Tensor ln1_g, ln1_b;          // pre-self-attention norm
  Tensor sq, sk, sv, so;
  Tensor ln2_g, ln2_b;          // pre-cross-attention norm
  Tensor cq, ck, cv, co;
  Tensor ln3_g, ln3_b;          // pre-FFN norm
  Tensor w1, w2;
};

// Shared attention block used by both stacks; causal adds a lower-triangular
// mask to the scores. Projections carry no biases (the norms' affine terms
// cover the offsets).
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq,
                            const Tensor& wk, const Tensor& wv, const Tensor& wo, int n_heads,
                            bool causal);

// Pre-norm encoder-decoder transformer with per-input gating: every gated
// sublayer either executes inside its residual block or passes the stream
// through untouched, and the encoder token sequence can be thinned after
// layer 1. With every gate open the computation is exactly a plain
// transformer's.
class TransformerModel {
 public:
  TransformerModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  // All trainable tensors in a fixed order (embeddings, encoder layers,
  // decoder layers, output projection); shared handles, not copies.
  std::vector<Tensor> params();
  std::vector<Tensor> params() const;

  // Layer 1 in full, thinning, then gated layers 2..L_enc.
  EncodedMemory encoder_forward(const std::vector<int>& tokens, const Decisions& decisions) const;
  // Causal self-attention + cross-attention (one gate), gated FFN, logits.
  Tensor decoder_forward(const std::vector<int>& target_tokens, const EncodedMemory& memory,
                         const Decisions& decisions) const;
  // Layer-1 output alone, for the policy input; no gating is consulted.
  Tensor first_layer_output(const std::vector<int>& tokens) const;

  // Teacher-forced mean cross-entropy per target token. The raw pair is
  // framed as: encoder reads src+[eos], decoder reads [bos]+tgt and predicts
  // tgt+[eos].
  Tensor seq_loss(const std::vector<int>& src, const std::vector<int>& tgt,
                  const Decisions& decisions) const;
  // Deterministic argmax decoding until [eos] or max_steps tokens.
  std::vector<int> greedy_generate(const std::vector<int>& src, const Decisions& decisions,
                                   int max_steps) const;

 private:
  Tensor embed(const std::vector<int>& tokens) const;
  void check_decisions(const Decisions& decisions) const;

  ModelConfig config_;
  Tensor tok_emb_;  // [vocab_size × e]
  Tensor pos_emb_;  // [max_len × e]
  std::vector<EncoderLayerParams> enc_;
  std::vector<DecoderLayerParams> dec_;
  Tensor w_out_;    // [e × vocab_size]
};

}  // namespace sd
