#pragma once

#include <vector>

#include "hyprl/poincare.hpp"

namespace hyprl::optim {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
};

// One Adam update in place; state buffers are lazily sized to match.
void adam_step(std::vector<double>& values, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg);

// Riemannian Adam for a point on the Poincare ball: the Euclidean gradient is
// converted with the inverse metric ((1 - c|p|^2)/2)^2, moments live in fixed
// tangent coordinates (no transport), and the update retracts via expmap_at
// followed by projection.
void radam_step(std::vector<double>& point, const std::vector<double>& grads, AdamState& state,
                const AdamConfig& cfg, const geo::BallConfig& ball);

// Rescales the gradient group in place when its joint L2 norm exceeds
// max_norm (no-op when max_norm <= 0). Returns the pre-clip norm.
double clip_global_norm(const std::vector<std::vector<double>*>& grads, double max_norm);

}  // namespace hyprl::optim
