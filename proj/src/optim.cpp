#include "hyprl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hyprl::optim {

namespace {

void ensure_state(AdamState& state, size_t n) {
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam state size does not match parameter size");
  }
}

// Computes the bias-corrected update direction (to be subtracted) into out.
void adam_direction(const std::vector<double>& grads, AdamState& state, const AdamConfig& cfg,
                    std::vector<double>& out) {
  ensure_state(state, grads.size());
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  out.resize(grads.size());
  for (size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    out[i] = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace

void adam_step(std::vector<double>& values, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (values.size() != grads.size()) {
    throw std::invalid_argument("adam_step: values/grads size mismatch");
  }
  std::vector<double> delta;
  adam_direction(grads, state, cfg, delta);
  for (size_t i = 0; i < values.size(); ++i) values[i] -= delta[i];
}

void radam_step(std::vector<double>& point, const std::vector<double>& grads, AdamState& state,
                const AdamConfig& cfg, const geo::BallConfig& ball) {
  if (point.size() != grads.size()) {
    throw std::invalid_argument("radam_step: point/grads size mismatch");
  }
  double sq = 0.0;
  for (double x : point) sq += x * x;
  const double scale = (1.0 - ball.c * sq) / 2.0;
  std::vector<double> rg(grads.size());
  for (size_t i = 0; i < grads.size(); ++i) rg[i] = grads[i] * scale * scale;

  std::vector<double> delta;
  adam_direction(rg, state, cfg, delta);
  for (double& d : delta) d = -d;
  point = geo::project_to_ball(geo::expmap_at(point, delta, ball), ball);
}

double clip_global_norm(const std::vector<std::vector<double>*>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) {
    for (double x : *g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : grads) {
      for (double& x : *g) x *= s;
    }
  }
  return norm;
}

}  // namespace hyprl::optim
