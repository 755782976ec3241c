#pragma once

#include <vector>

#include "hyprl/tensor.hpp"

namespace hyprl::geo {

// Poincare ball of curvature -c (c > 0); radius 1/sqrt(c). Points are kept
// strictly inside by rescaling anything past norm (1 - boundary_eps)/sqrt(c).
struct BallConfig {
  double c = 1.0;
  double boundary_eps = 1e-5;
};

using Vec = std::vector<double>;

double conformal_factor(const Vec& x, const BallConfig& ball);
Vec project_to_ball(Vec x, const BallConfig& ball);
Vec mobius_neg(Vec x);
Vec mobius_add(const Vec& x, const Vec& y, const BallConfig& ball);
Vec expmap0(const Vec& v, const BallConfig& ball);
Vec logmap0(const Vec& x, const BallConfig& ball);
Vec expmap_at(const Vec& p, const Vec& v, const BallConfig& ball);
double dist(const Vec& x, const Vec& y, const BallConfig& ball);

// Signed distance to the gyroplane through p with normal w, and the affine
// score used as a network logit. The sign convention scores 0 exactly on the
// decision boundary (sign of 0 counts as +).
double gyroplane_sdist(const Vec& x, const Vec& p, const Vec& w, const BallConfig& ball);
double gyroplane_affine(const Vec& x, const Vec& p, const Vec& w, const BallConfig& ball);

// Batched tape ops over [B,n] tensors (one point per row). All of them are
// differentiable; ball-valued outputs are clamped inside the boundary, with
// the clamp factor treated as a constant in the backward pass.
ad::Tensor row_project(const ad::Tensor& X, const BallConfig& ball);
ad::Tensor row_expmap0(const ad::Tensor& V, const BallConfig& ball);
ad::Tensor row_logmap0(const ad::Tensor& X, const BallConfig& ball);
ad::Tensor row_mobius_add(const ad::Tensor& X, const ad::Tensor& Y, const BallConfig& ball);
ad::Tensor row_dist(const ad::Tensor& X, const ad::Tensor& Y, const BallConfig& ball);
ad::Tensor gyroplane_sdist_rows(const ad::Tensor& X, const ad::Tensor& p, const ad::Tensor& w,
                                const BallConfig& ball);
ad::Tensor gyroplane_affine_rows(const ad::Tensor& X, const ad::Tensor& p, const ad::Tensor& w,
                                 const BallConfig& ball);

}  // namespace hyprl::geo
