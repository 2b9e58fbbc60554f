#pragma once

#include <vector>

namespace sd {

// Dynamic multiplier for minimizing a secondary objective f subject to a
// constraint q ≤ c, with φ = q − c the current violation:
//   λ = max((φ − grad_f·grad_q) / ‖grad_q‖², 0)
// Stepping against e = grad_f + λ·grad_q then guarantees eᵀgrad_q ≥ φ, i.e.
// the constraint improves at least proportionally to its violation while f
// descends in the remaining slack. ‖grad_q‖ = 0 yields λ = 0 by convention.
double lexico_lambda(const std::vector<double>& grad_f, const std::vector<double>& grad_q,
                     double phi);

struct LexicoDirection {
  double lambda = 0.0;
  std::vector<double> direction;
};

// Update direction for the computation/quality pair. Default coupling treats
// quality-loss as the constraint and computation as the secondary objective:
// e = grad_comp + λ·grad_quality. swap_roles applies the multiplier the other
// way around (e = grad_quality + λ·grad_comp with the roles exchanged in the
// λ formula), kept for comparison runs.
LexicoDirection lexico_direction(const std::vector<double>& grad_comp,
                                 const std::vector<double>& grad_quality, double phi,
                                 bool swap_roles = false);

}  // namespace sd
