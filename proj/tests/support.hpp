#pragma once

// Shared helpers for the test suite: small configs, a central-difference
// gradient oracle, and a straight-line transformer reference (no gating
// code anywhere) for bit-identity checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "sd/model.hpp"
#include "sd/rng.hpp"
#include "sd/tensor.hpp"

namespace sd::test {

// The enumerable configuration: D = 6 decision bits, 2^6·7 = 448 paths.
inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.e = 16;
  cfg.d_ff = 64;
  cfg.l_enc = 2;
  cfg.l_dec = 2;
  cfg.n_heads = 2;
  cfg.max_len = 32;
  return cfg;
}

// Smaller still, for finite-difference sweeps over every coordinate.
inline ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.vocab_size = 8;
  cfg.e = 8;
  cfg.d_ff = 16;
  cfg.l_enc = 2;
  cfg.l_dec = 2;
  cfg.n_heads = 2;
  cfg.max_len = 16;
  return cfg;
}

// Central finite difference of a re-evaluated scalar with respect to one
// coordinate; `value` must rebuild its computation from current values.
inline double fd_derivative(const std::function<double()>& value, double* coord,
                            double eps = 1e-5) {
  const double saved = *coord;
  *coord = saved + eps;
  const double up = value();
  *coord = saved - eps;
  const double down = value();
  *coord = saved;
  return (up - down) / (2.0 * eps);
}

// Relative disagreement with a floor: coordinates whose true derivative sits
// below finite-difference resolution compare as equal.
inline double grad_rel_err(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-7) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

// Worst relative error between the grads already accumulated in `params` and
// finite differences of `value`. coords_per_tensor <= 0 sweeps every
// coordinate; otherwise that many are drawn per tensor via `pick`.
inline double max_fd_rel_err(std::vector<Tensor>& params, const std::function<double()>& value,
                             int coords_per_tensor = 0, Rng* pick = nullptr) {
  double worst = 0.0;
  for (Tensor& p : params) {
    const int64_t n = p.numel();
    std::vector<int64_t> coords;
    if (coords_per_tensor <= 0 || coords_per_tensor >= n) {
      coords.resize(static_cast<size_t>(n));
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      for (int i = 0; i < coords_per_tensor; ++i)
        coords.push_back(static_cast<int64_t>(pick->next_below(static_cast<uint64_t>(n))));
    }
    for (int64_t k : coords) {
      const double numeric = fd_derivative(value, p.data() + k);
      worst = std::max(worst, grad_rel_err(p.grad()[static_cast<size_t>(k)], numeric));
    }
  }
  return worst;
}

// Plain encoder-decoder forward written straight through the parameter list
// in its documented order — the reference never touches Decisions or any
// gating logic, so agreement with the all-keep path is meaningful.
inline Tensor plain_reference_loss(const std::vector<Tensor>& p, const ModelConfig& cfg,
                                   const std::vector<int>& src, const std::vector<int>& tgt) {
  std::vector<int> enc_in = src;
  enc_in.push_back(kEosToken);
  std::vector<int> dec_in = {kBosToken};
  dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
  std::vector<int> labels = tgt;
  labels.push_back(kEosToken);

  auto embed = [&](const std::vector<int>& tokens) {
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    return add(gather_rows(p[0], tokens), gather_rows(p[1], positions));
  };
  auto ffn = [](const Tensor& u, const Tensor& w1, const Tensor& w2) {
    return matmul(relu(matmul(u, w1)), w2);
  };

  size_t i = 2;
  Tensor x = embed(enc_in);
  for (int l = 0; l < cfg.l_enc; ++l, i += 10) {
    Tensor u = layer_norm(x, p[i], p[i + 1]);
    x = add(x, multi_head_attention(u, u, p[i + 2], p[i + 3], p[i + 4], p[i + 5], cfg.n_heads,
                                    false));
    u = layer_norm(x, p[i + 6], p[i + 7]);
    x = add(x, ffn(u, p[i + 8], p[i + 9]));
  }
  Tensor y = embed(dec_in);
  for (int l = 0; l < cfg.l_dec; ++l, i += 16) {
    Tensor u = layer_norm(y, p[i], p[i + 1]);
    y = add(y, multi_head_attention(u, u, p[i + 2], p[i + 3], p[i + 4], p[i + 5], cfg.n_heads,
                                    true));
    u = layer_norm(y, p[i + 6], p[i + 7]);
    y = add(y, multi_head_attention(u, x, p[i + 8], p[i + 9], p[i + 10], p[i + 11], cfg.n_heads,
                                    false));
    u = layer_norm(y, p[i + 12], p[i + 13]);
    y = add(y, ffn(u, p[i + 14], p[i + 15]));
  }
  return cross_entropy(matmul(y, p.back()), labels, {});
}

inline std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> out(static_cast<size_t>(n));
  for (int& t : out)
    t = kFirstSymbolToken +
        static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab - kFirstSymbolToken)));
  return out;
}

}  // namespace sd::test
