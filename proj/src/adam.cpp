#include "sd/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace sd {

int64_t param_count(const std::vector<Tensor>& params) {
  int64_t n = 0;
  for (const Tensor& p : params) n += p.numel();
  return n;
}

AdamMoments AdamMoments::for_params(const std::vector<Tensor>& params) {
  AdamMoments mom;
  mom.m.assign(static_cast<size_t>(param_count(params)), 0.0);
  mom.v.assign(static_cast<size_t>(param_count(params)), 0.0);
  return mom;
}

void adam_step(std::vector<Tensor>& params, AdamMoments& moments, double lr, int64_t t,
               double beta1, double beta2, double eps) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  const int64_t total = param_count(params);
  if (static_cast<int64_t>(moments.m.size()) != total ||
      static_cast<int64_t>(moments.v.size()) != total)
    throw std::invalid_argument("adam_step: moment buffers hold " +
                                std::to_string(moments.m.size()) + " entries, parameters hold " +
                                std::to_string(total));
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  int64_t off = 0;
  for (Tensor& p : params) {
    const std::vector<double>& g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) {
      double& m = moments.m[static_cast<size_t>(off + i)];
      double& v = moments.v[static_cast<size_t>(off + i)];
      m = beta1 * m + (1.0 - beta1) * g[static_cast<size_t>(i)];
      v = beta2 * v + (1.0 - beta2) * g[static_cast<size_t>(i)] * g[static_cast<size_t>(i)];
      p.data()[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
    off += p.numel();
  }
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  for (Tensor& p : params) {
    const std::vector<double>& g = p.grad();
    for (int64_t i = 0; i < p.numel(); ++i) p.data()[i] -= lr * g[static_cast<size_t>(i)];
  }
}

std::vector<double> flatten_values(const std::vector<Tensor>& params) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(param_count(params)));
  for (const Tensor& p : params) out.insert(out.end(), p.values().begin(), p.values().end());
  return out;
}

std::vector<double> flatten_grads(const std::vector<Tensor>& params) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(param_count(params)));
  for (const Tensor& p : params) {
    const std::vector<double>& g = p.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

void add_to_grads(std::vector<Tensor>& params, const std::vector<double>& flat, double scale) {
  if (static_cast<int64_t>(flat.size()) != param_count(params))
    throw std::invalid_argument("add_to_grads: flat vector length mismatch");
  size_t off = 0;
  for (Tensor& p : params) {
    std::vector<double>& g = p.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += scale * flat[off + i];
    off += g.size();
  }
}

void set_grads(std::vector<Tensor>& params, const std::vector<double>& flat) {
  if (static_cast<int64_t>(flat.size()) != param_count(params))
    throw std::invalid_argument("set_grads: flat vector length mismatch");
  size_t off = 0;
  for (Tensor& p : params) {
    std::vector<double>& g = p.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] = flat[off + i];
    off += g.size();
  }
}

}  // namespace sd
