#include "sd/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sd/rng.hpp"

namespace sd {

namespace {

void check_field(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("model config: " + message);
}

Tensor ffn_block(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  return matmul(relu(matmul(x, w1)), w2);
}

Tensor causal_mask(int n) {
  std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m[static_cast<size_t>(i) * n + j] = kNegInf;
  return Tensor::from({n, n}, std::move(m));
}

}  // namespace

void ModelConfig::validate() const {
  check_field(vocab_size >= 4, "vocab_size must be >= 4 (pad/bos/eos plus payload), got " +
                                   std::to_string(vocab_size));
  check_field(e >= 1, "e must be >= 1, got " + std::to_string(e));
  check_field(d_ff >= 1, "d_ff must be >= 1, got " + std::to_string(d_ff));
  check_field(l_enc >= 2, "l_enc must be >= 2 (layer 1 always runs and is not gated), got " +
                              std::to_string(l_enc));
  check_field(l_dec >= 1, "l_dec must be >= 1, got " + std::to_string(l_dec));
  check_field(n_heads >= 1, "n_heads must be >= 1, got " + std::to_string(n_heads));
  check_field(e % n_heads == 0, "e (" + std::to_string(e) + ") must be divisible by n_heads (" +
                                    std::to_string(n_heads) + ")");
  check_field(max_len >= 2, "max_len must be >= 2, got " + std::to_string(max_len));
}

int64_t ModelConfig::param_count() const {
  const int64_t ee = static_cast<int64_t>(e) * e;
  const int64_t eff = static_cast<int64_t>(e) * d_ff;
  const int64_t enc_layer = 4 * ee + 2 * eff + 4 * e;
  const int64_t dec_layer = 8 * ee + 2 * eff + 6 * e;
  return static_cast<int64_t>(vocab_size) * e + static_cast<int64_t>(max_len) * e +
         l_enc * enc_layer + l_dec * dec_layer + static_cast<int64_t>(e) * vocab_size;
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq,
                            const Tensor& wk, const Tensor& wv, const Tensor& wo, int n_heads,
                            bool causal) {
  const int e = wq.dim(0);
  const int dh = e / n_heads;
  Tensor q = matmul(q_in, wq);
  Tensor k = matmul(kv_in, wk);
  Tensor v = matmul(kv_in, wv);
  Tensor mask;
  if (causal) mask = causal_mask(q_in.dim(0));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = add(scores, mask);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return matmul(concat_cols(heads), wo);
}

TransformerModel::TransformerModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int e = config_.e, d_ff = config_.d_ff, v = config_.vocab_size;
  tok_emb_ = Tensor::fan_in_init({v, e}, e, rng);
  pos_emb_ = Tensor::fan_in_init({config_.max_len, e}, e, rng);
  enc_.resize(static_cast<size_t>(config_.l_enc));
  for (EncoderLayerParams& layer : enc_) {
    layer.ln1_g = Tensor::constant({e}, 1.0);
    layer.ln1_g.p->requires_grad = true;
    layer.ln1_b = Tensor::zeros({e}, true);
    layer.wq = Tensor::fan_in_init({e, e}, e, rng);
    layer.wk = Tensor::fan_in_init({e, e}, e, rng);
    layer.wv = Tensor::fan_in_init({e, e}, e, rng);
    layer.wo = Tensor::fan_in_init({e, e}, e, rng);
    layer.ln2_g = Tensor::constant({e}, 1.0);
    layer.ln2_g.p->requires_grad = true;
    layer.ln2_b = Tensor::zeros({e}, true);
    layer.w1 = Tensor::fan_in_init({e, d_ff}, e, rng);
    layer.w2 = Tensor::fan_in_init({d_ff, e}, d_ff, rng);
  }
  dec_.resize(static_cast<size_t>(config_.l_dec));
  for (DecoderLayerParams& layer : dec_) {
    layer.ln1_g = Tensor::constant({e}, 1.0);
    layer.ln1_g.p->requires_grad = true;
    layer.ln1_b = Tensor::zeros({e}, true);
    layer.sq = Tensor::fan_in_init({e, e}, e, rng);
    layer.sk = Tensor::fan_in_init({e, e}, e, rng);
    layer.sv = Tensor::fan_in_init({e, e}, e, rng);
    layer.so = Tensor::fan_in_init({e, e}, e, rng);
    layer.ln2_g = Tensor::constant({e}, 1.0);
    layer.ln2_g.p->requires_grad = true;
    layer.ln2_b = Tensor::zeros({e}, true);
    layer.cq = Tensor::fan_in_init({e, e}, e, rng);
    layer.ck = Tensor::fan_in_init({e, e}, e, rng);
    layer.cv = Tensor::fan_in_init({e, e}, e, rng);
    layer.co = Tensor::fan_in_init({e, e}, e, rng);
    layer.ln3_g = Tensor::constant({e}, 1.0);
    layer.ln3_g.p->requires_grad = true;
    layer.ln3_b = Tensor::zeros({e}, true);
    layer.w1 = Tensor::fan_in_init({e, d_ff}, e, rng);
    layer.w2 = Tensor::fan_in_init({d_ff, e}, d_ff, rng);
  }
  w_out_ = Tensor::fan_in_init({e, v}, e, rng);
  for (Tensor& p : params()) p.zero_grad();  // every parameter starts with a zero grad buffer
}

std::vector<Tensor> TransformerModel::params() {
  std::vector<Tensor> out;
  out.reserve(2 + 10 * enc_.size() + 16 * dec_.size() + 1);
  out.push_back(tok_emb_);
  out.push_back(pos_emb_);
  for (EncoderLayerParams& l : enc_) {
    out.push_back(l.ln1_g);
    out.push_back(l.ln1_b);
    out.push_back(l.wq);
    out.push_back(l.wk);
    out.push_back(l.wv);
    out.push_back(l.wo);
    out.push_back(l.ln2_g);
    out.push_back(l.ln2_b);
    out.push_back(l.w1);
    out.push_back(l.w2);
  }
  for (DecoderLayerParams& l : dec_) {
    out.push_back(l.ln1_g);
    out.push_back(l.ln1_b);
    out.push_back(l.sq);
    out.push_back(l.sk);
    out.push_back(l.sv);
    out.push_back(l.so);
    out.push_back(l.ln2_g);
    out.push_back(l.ln2_b);
    out.push_back(l.cq);
    out.push_back(l.ck);
    out.push_back(l.cv);
    out.push_back(l.co);
    out.push_back(l.ln3_g);
    out.push_back(l.ln3_b);
    out.push_back(l.w1);
    out.push_back(l.w2);
  }
  out.push_back(w_out_);
  return out;
}

std::vector<Tensor> TransformerModel::params() const {
  return const_cast<TransformerModel*>(this)->params();
}

Tensor TransformerModel::embed(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("model input: empty token sequence");
  if (static_cast<int>(tokens.size()) > config_.max_len)
    throw std::invalid_argument("model input: " + std::to_string(tokens.size()) +
                                " tokens exceed max_len " + std::to_string(config_.max_len));
  for (int t : tokens)
    if (t < 0 || t >= config_.vocab_size)
      throw std::invalid_argument("model input: token id " + std::to_string(t) +
                                  " outside vocab of " + std::to_string(config_.vocab_size));
  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
  return add(gather_rows(tok_emb_, tokens), gather_rows(pos_emb_, positions));
}

void TransformerModel::check_decisions(const Decisions& decisions) const {
  const int d = config_.layout().d();
  if (static_cast<int>(decisions.sublayer_keep.size()) != d)
    throw std::invalid_argument("decisions carry " + std::to_string(decisions.sublayer_keep.size()) +
                                " bits, model needs " + std::to_string(d));
  if (decisions.token_strategy < 0 || decisions.token_strategy >= kNumTokenStrategies)
    throw std::invalid_argument("decisions carry strategy " +
                                std::to_string(decisions.token_strategy) + ", table has " +
                                std::to_string(kNumTokenStrategies));
}

Tensor TransformerModel::first_layer_output(const std::vector<int>& tokens) const {
  const EncoderLayerParams& l1 = enc_[0];
  Tensor x = embed(tokens);
  Tensor u = layer_norm(x, l1.ln1_g, l1.ln1_b);
  x = add(x, multi_head_attention(u, u, l1.wq, l1.wk, l1.wv, l1.wo, config_.n_heads, false));
  u = layer_norm(x, l1.ln2_g, l1.ln2_b);
  x = add(x, ffn_block(u, l1.w1, l1.w2));
  return x;
}

EncodedMemory TransformerModel::encoder_forward(const std::vector<int>& tokens,
                                                const Decisions& decisions) const {
  check_decisions(decisions);
  const DecisionLayout layout = config_.layout();
  EncodedMemory mem;
  Tensor x = first_layer_output(tokens);
  mem.first_layer_output = x;
  mem.kept_indices = apply_token_strategy(static_cast<int>(tokens.size()), decisions.token_strategy);
  if (mem.kept_indices.size() != tokens.size()) x = gather_rows(x, mem.kept_indices);
  for (int l = 2; l <= config_.l_enc; ++l) {
    const EncoderLayerParams& p = enc_[static_cast<size_t>(l - 1)];
    if (decisions.sublayer_keep[static_cast<size_t>(layout.enc_att(l))]) {
      Tensor u = layer_norm(x, p.ln1_g, p.ln1_b);
      x = add(x, multi_head_attention(u, u, p.wq, p.wk, p.wv, p.wo, config_.n_heads, false));
    }
    if (decisions.sublayer_keep[static_cast<size_t>(layout.enc_ffn(l))]) {
      Tensor u = layer_norm(x, p.ln2_g, p.ln2_b);
      x = add(x, ffn_block(u, p.w1, p.w2));
    }
  }
  mem.hidden = x;
  return mem;
}

Tensor TransformerModel::decoder_forward(const std::vector<int>& target_tokens,
                                         const EncodedMemory& memory,
                                         const Decisions& decisions) const {
  check_decisions(decisions);
  const DecisionLayout layout = config_.layout();
  Tensor y = embed(target_tokens);
  for (int l = 1; l <= config_.l_dec; ++l) {
    const DecoderLayerParams& p = dec_[static_cast<size_t>(l - 1)];
    if (decisions.sublayer_keep[static_cast<size_t>(layout.dec_att(l))]) {
      Tensor u = layer_norm(y, p.ln1_g, p.ln1_b);
      y = add(y, multi_head_attention(u, u, p.sq, p.sk, p.sv, p.so, config_.n_heads, true));
      u = layer_norm(y, p.ln2_g, p.ln2_b);
      y = add(y, multi_head_attention(u, memory.hidden, p.cq, p.ck, p.cv, p.co, config_.n_heads,
                                      false));
    }
    if (decisions.sublayer_keep[static_cast<size_t>(layout.dec_ffn(l))]) {
      Tensor u = layer_norm(y, p.ln3_g, p.ln3_b);
      y = add(y, ffn_block(u, p.w1, p.w2));
    }
  }
  return matmul(y, w_out_);
}

Tensor TransformerModel::seq_loss(const std::vector<int>& src, const std::vector<int>& tgt,
                                  const Decisions& decisions) const {
  std::vector<int> enc_in = src;
  enc_in.push_back(kEosToken);
  std::vector<int> dec_in;
  dec_in.reserve(tgt.size() + 1);
  dec_in.push_back(kBosToken);
  dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
  std::vector<int> labels = tgt;
  labels.push_back(kEosToken);
  EncodedMemory mem = encoder_forward(enc_in, decisions);
  Tensor logits = decoder_forward(dec_in, mem, decisions);
  return cross_entropy(logits, labels, {});
}

std::vector<int> TransformerModel::greedy_generate(const std::vector<int>& src,
                                                   const Decisions& decisions,
                                                   int max_steps) const {
  if (max_steps < 1) throw std::invalid_argument("greedy_generate: max_steps must be >= 1");
  NoGrad no_grad;
  std::vector<int> enc_in = src;
  enc_in.push_back(kEosToken);
  EncodedMemory mem = encoder_forward(enc_in, decisions);
  std::vector<int> out;
  std::vector<int> dec_in = {kBosToken};
  while (static_cast<int>(out.size()) < max_steps &&
         static_cast<int>(dec_in.size()) < config_.max_len) {
    Tensor logits = decoder_forward(dec_in, mem, decisions);
    const double* last = logits.data() + static_cast<int64_t>(logits.dim(0) - 1) * logits.dim(1);
    int best = 0;
    for (int v = 1; v < config_.vocab_size; ++v)
      if (last[v] > last[best]) best = v;
    if (best == kEosToken) break;
    out.push_back(best);
    dec_in.push_back(best);
  }
  return out;
}

}  // namespace sd
