#include "sd/lexico.hpp"

#include <algorithm>
#include <stdexcept>

namespace sd {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double lexico_lambda(const std::vector<double>& grad_f, const std::vector<double>& grad_q,
                     double phi) {
  if (grad_f.size() != grad_q.size())
    throw std::invalid_argument("lexico_lambda: gradient sizes disagree, " +
                                std::to_string(grad_f.size()) + " vs " +
                                std::to_string(grad_q.size()));
  const double qq = dot(grad_q, grad_q);
  if (qq == 0.0) return 0.0;
  return std::max((phi - dot(grad_f, grad_q)) / qq, 0.0);
}

LexicoDirection lexico_direction(const std::vector<double>& grad_comp,
                                 const std::vector<double>& grad_quality, double phi,
                                 bool swap_roles) {
  const std::vector<double>& f = swap_roles ? grad_quality : grad_comp;
  const std::vector<double>& q = swap_roles ? grad_comp : grad_quality;
  LexicoDirection out;
  out.lambda = lexico_lambda(f, q, phi);
  out.direction.resize(f.size());
  for (size_t i = 0; i < f.size(); ++i) out.direction[i] = f[i] + out.lambda * q[i];
  return out;
}

}  // namespace sd
