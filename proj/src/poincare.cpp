#include "hyprl/poincare.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace hyprl::geo {

namespace {

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

void require_same_dim(const char* op, const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

double require_interior(const char* op, const Vec& x, double c) {
  double denom = 1.0 - c * dot(x, x);
  if (denom <= 0.0)
    throw std::domain_error(std::string(op) + ": point is on or outside the ball");
  return denom;
}

// tanh(z)/z and atanh(z)/z with series fallbacks near zero.
double tanhc_val(double z) { return std::abs(z) < 1e-8 ? 1.0 - z * z / 3.0 : std::tanh(z) / z; }
double atanhc_val(double z) { return std::abs(z) < 1e-8 ? 1.0 + z * z / 3.0 : std::atanh(z) / z; }

}  // namespace

double conformal_factor(const Vec& x, const BallConfig& ball) {
  return 2.0 / require_interior("conformal_factor", x, ball.c);
}

Vec project_to_ball(Vec x, const BallConfig& ball) {
  double max_norm = (1.0 - ball.boundary_eps) / std::sqrt(ball.c);
  double n = norm(x);
  if (n > max_norm) {
    double s = max_norm / n;
    for (double& v : x) v *= s;
  }
  return x;
}

Vec mobius_neg(Vec x) {
  for (double& v : x) v = -v;
  return x;
}

Vec mobius_add(const Vec& x, const Vec& y, const BallConfig& ball) {
  require_same_dim("mobius_add", x, y);
  double c = ball.c;
  double xy = dot(x, y), x2 = dot(x, x), y2 = dot(y, y);
  double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  double ax = (1.0 + 2.0 * c * xy + c * y2) / den;
  double ay = (1.0 - c * x2) / den;
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = ax * x[i] + ay * y[i];
  return project_to_ball(std::move(out), ball);
}

Vec expmap0(const Vec& v, const BallConfig& ball) {
  double rc = std::sqrt(ball.c);
  double f = tanhc_val(rc * norm(v));
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = f * v[i];
  return project_to_ball(std::move(out), ball);
}

Vec logmap0(const Vec& x, const BallConfig& ball) {
  require_interior("logmap0", x, ball.c);
  double rc = std::sqrt(ball.c);
  double f = atanhc_val(rc * norm(x));
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = f * x[i];
  return out;
}

Vec expmap_at(const Vec& p, const Vec& v, const BallConfig& ball) {
  require_same_dim("expmap_at", p, v);
  double lam = conformal_factor(p, ball);
  double rc = std::sqrt(ball.c);
  double f = 0.5 * lam * tanhc_val(0.5 * rc * lam * norm(v));
  Vec q(v.size());
  for (size_t i = 0; i < v.size(); ++i) q[i] = f * v[i];
  return mobius_add(p, q, ball);
}

double dist(const Vec& x, const Vec& y, const BallConfig& ball) {
  require_same_dim("dist", x, y);
  double c = ball.c;
  double dx = require_interior("dist", x, c);
  double dy = require_interior("dist", y, c);
  double d2 = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double diff = x[i] - y[i];
    d2 += diff * diff;
  }
  double arg = 1.0 + 2.0 * c * d2 / (dx * dy);
  if (arg < 1.0) arg = 1.0;
  return std::acosh(arg) / std::sqrt(c);
}

double gyroplane_sdist(const Vec& x, const Vec& p, const Vec& w, const BallConfig& ball) {
  require_same_dim("gyroplane_sdist", x, w);
  double wn = norm(w);
  if (wn == 0.0) throw std::invalid_argument("gyroplane_sdist: zero normal vector");
  Vec m = mobius_add(mobius_neg(p), x, ball);
  double c = ball.c;
  double denom = (1.0 - c * dot(m, m)) * wn;
  double rc = std::sqrt(c);
  // asinh is odd, so the sign of the inner product rides along for free and
  // boundary points score exactly 0.
  return std::asinh(2.0 * rc * dot(m, w) / denom) / rc;
}

double gyroplane_affine(const Vec& x, const Vec& p, const Vec& w, const BallConfig& ball) {
  double inside = require_interior("gyroplane_affine", p, ball.c);
  double wn = norm(w);
  if (wn == 0.0) throw std::invalid_argument("gyroplane_affine: zero normal vector");
  return 2.0 * wn / std::sqrt(inside) * gyroplane_sdist(x, p, w, ball);
}

namespace {

void require_rows(const char* op, const ad::Tensor& t) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected [B,n] tensor, got " +
                                ad::shape_str(t.shape()));
}

}  // namespace

ad::Tensor row_project(const ad::Tensor& X, const BallConfig& ball) {
  require_rows("row_project", X);
  int B = X.shape()[0], n = X.shape()[1];
  double max_norm = (1.0 - ball.boundary_eps) / std::sqrt(ball.c);
  const auto& xv = X.data();
  std::vector<double> out(xv.size());
  std::vector<double> factor(static_cast<size_t>(B), 1.0);
  bool any = false;
  for (int i = 0; i < B; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double v = xv[static_cast<size_t>(i) * n + j];
      s += v * v;
    }
    double nr = std::sqrt(s);
    if (nr > max_norm) {
      factor[i] = max_norm / nr;
      any = true;
    }
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = factor[i] * xv[static_cast<size_t>(i) * n + j];
  }
  if (!any && !X.on_tape()) return ad::Tensor({B, n}, std::move(out));
  ad::Tensor r({B, n}, std::move(out));
  if (!X.on_tape()) return r;
  int xn = X.node();
  ad::Tape* tp = X.tape();
  int id = tp->record(r.size(), [=](ad::Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& gx = t.grad_buf(xn, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < n; ++j) {
        size_t q = static_cast<size_t>(i) * n + j;
        gx[q] += factor[i] * (*g)[q];
      }
  });
  return tp->attach(std::move(r), id);
}

namespace {

// Shared implementation of the fused radial maps y = f(||x||) * x used by
// expmap0 (f = tanhc) and logmap0 (f = atanhc). Backward:
//   x_bar = s * (a * g + dconst * <x, g> * x)
// where a = f(z)/..., dconst collects the radial derivative and s is the
// boundary clamp factor (constant w.r.t. x).
ad::Tensor radial_map(const char* op, const ad::Tensor& X, const BallConfig& ball, bool expm) {
  require_rows(op, X);
  int B = X.shape()[0], n = X.shape()[1];
  double c = ball.c, rc = std::sqrt(ball.c);
  double max_norm = (1.0 - ball.boundary_eps) / rc;
  const auto& xv = X.data();
  std::vector<double> out(xv.size());
  std::vector<double> a(static_cast<size_t>(B)), dconst(static_cast<size_t>(B)),
      clampf(static_cast<size_t>(B), 1.0);
  for (int i = 0; i < B; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j] * row[j];
    double r = std::sqrt(s);
    double z = rc * r;
    if (expm) {
      if (z < 1e-8) {
        a[i] = 1.0 - z * z / 3.0;
        dconst[i] = -2.0 * c / 3.0;
      } else {
        double t = std::tanh(z);
        a[i] = t / z;
        dconst[i] = rc * (((1.0 - t * t) * z - t) / (z * z)) / r;
      }
    } else {
      if (z >= 1.0)
        throw std::domain_error(std::string(op) + ": point is on or outside the ball");
      if (z < 1e-8) {
        a[i] = 1.0 + z * z / 3.0;
        dconst[i] = 2.0 * c / 3.0;
      } else {
        double at = std::atanh(z);
        a[i] = at / z;
        dconst[i] = rc * ((z / (1.0 - z * z) - at) / (z * z)) / r;
      }
    }
    double on = a[i] * r;
    if (expm && on > max_norm) clampf[i] = max_norm / on;
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = clampf[i] * a[i] * row[j];
  }
  ad::Tensor res({B, n}, std::move(out));
  if (!X.on_tape()) return res;
  int xn = X.node();
  auto xd = X.storage();
  ad::Tape* tp = X.tape();
  int id = tp->record(res.size(), [=](ad::Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& gx = t.grad_buf(xn, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i) {
      const double* row = xd->data() + static_cast<size_t>(i) * n;
      const double* gr = g->data() + static_cast<size_t>(i) * n;
      double xg = 0.0;
      for (int j = 0; j < n; ++j) xg += row[j] * gr[j];
      double k = clampf[i] * dconst[i] * xg;
      double ka = clampf[i] * a[i];
      for (int j = 0; j < n; ++j)
        gx[static_cast<size_t>(i) * n + j] += ka * gr[j] + k * row[j];
    }
  });
  return tp->attach(std::move(res), id);
}

}  // namespace

ad::Tensor row_expmap0(const ad::Tensor& V, const BallConfig& ball) {
  return radial_map("row_expmap0", V, ball, true);
}

ad::Tensor row_logmap0(const ad::Tensor& X, const BallConfig& ball) {
  return radial_map("row_logmap0", X, ball, false);
}

ad::Tensor row_mobius_add(const ad::Tensor& X, const ad::Tensor& Y, const BallConfig& ball) {
  require_rows("row_mobius_add", X);
  if (X.shape() != Y.shape())
    throw std::invalid_argument("row_mobius_add: shape mismatch " + ad::shape_str(X.shape()) +
                                " vs " + ad::shape_str(Y.shape()));
  using namespace ad;
  double c = ball.c;
  Tensor xy = sum_rows(mul(X, Y));
  Tensor x2 = sum_rows(mul(X, X));
  Tensor y2 = sum_rows(mul(Y, Y));
  Tensor den = add_scalar(add(scale(xy, 2.0 * c), scale(mul(x2, y2), c * c)), 1.0);
  Tensor cx = add_scalar(add(scale(xy, 2.0 * c), scale(y2, c)), 1.0);
  Tensor cy = add_scalar(scale(x2, -c), 1.0);
  Tensor num = add(mul_rows(X, cx), mul_rows(Y, cy));
  Tensor raw = mul_rows(num, div(Tensor::full({X.shape()[0]}, 1.0), den));
  return row_project(raw, ball);
}

ad::Tensor row_dist(const ad::Tensor& X, const ad::Tensor& Y, const BallConfig& ball) {
  require_rows("row_dist", X);
  if (X.shape() != Y.shape())
    throw std::invalid_argument("row_dist: shape mismatch " + ad::shape_str(X.shape()) + " vs " +
                                ad::shape_str(Y.shape()));
  using namespace ad;
  double c = ball.c;
  Tensor diff = sub(X, Y);
  Tensor d2 = sum_rows(mul(diff, diff));
  Tensor dx = add_scalar(scale(sum_rows(mul(X, X)), -c), 1.0);
  Tensor dy = add_scalar(scale(sum_rows(mul(Y, Y)), -c), 1.0);
  Tensor arg = add_scalar(div(scale(d2, 2.0 * c), mul(dx, dy)), 1.0);
  Tensor safe = clamp(arg, 1.0, std::numeric_limits<double>::infinity());
  return scale(acosh(safe), 1.0 / std::sqrt(c));
}

ad::Tensor gyroplane_sdist_rows(const ad::Tensor& X, const ad::Tensor& p, const ad::Tensor& w,
                                const BallConfig& ball) {
  require_rows("gyroplane_sdist_rows", X);
  if (p.shape().size() != 1 || w.shape().size() != 1 || p.shape()[0] != X.shape()[1] ||
      w.shape()[0] != X.shape()[1])
    throw std::invalid_argument("gyroplane_sdist_rows: plane shapes " + ad::shape_str(p.shape()) +
                                "/" + ad::shape_str(w.shape()) + " do not match points " +
                                ad::shape_str(X.shape()));
  using namespace ad;
  int B = X.shape()[0];
  double c = ball.c, rc = std::sqrt(ball.c);
  Tensor m = row_mobius_add(tile_rows(neg(p), B), X, ball);
  Tensor u = sum_rows(mul(m, tile_rows(w, B)));
  Tensor m2 = sum_rows(mul(m, m));
  Tensor wn = l2_norm(w);
  Tensor denom = mul(add_scalar(scale(m2, -c), 1.0), wn);
  // reshape pins the [B] result shape even when B = 1 (where the size-1
  // row tensor would otherwise broadcast onto the rank-0 norm).
  return reshape(scale(asinh(div(scale(u, 2.0 * rc), denom)), 1.0 / rc), {B});
}

ad::Tensor gyroplane_affine_rows(const ad::Tensor& X, const ad::Tensor& p, const ad::Tensor& w,
                                 const BallConfig& ball) {
  using namespace ad;
  Tensor sd = gyroplane_sdist_rows(X, p, w, ball);
  Tensor inside = add_scalar(scale(sum(mul(p, p)), -ball.c), 1.0);
  Tensor pref = div(scale(l2_norm(w), 2.0), sqrt(inside));
  return reshape(mul(sd, pref), {X.shape()[0]});
}

}  // namespace hyprl::geo
