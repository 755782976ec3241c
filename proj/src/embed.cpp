#include "hyprl/embed.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hyprl/envs.hpp"
#include "hyprl/optim.hpp"
#include "hyprl/rng.hpp"
#include "hyprl/tensor.hpp"

namespace hyprl::embed {

using ad::Tensor;

namespace {

constexpr uint64_t kTagEmbed = 0x656d6264;  // "embd"

geo::Vec row_of(const std::vector<double>& flat, int i, int dim) {
  return geo::Vec(flat.begin() + static_cast<size_t>(i) * dim,
                  flat.begin() + static_cast<size_t>(i + 1) * dim);
}

double euclid_dist(const geo::Vec& a, const geo::Vec& b) {
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

Geometry geometry_from_name(const std::string& name) {
  if (name == "euclidean") return Geometry::Euclid;
  if (name == "hyperbolic") return Geometry::Hyperbolic;
  throw std::invalid_argument("unknown geometry \"" + name +
                              "\" (expected euclidean or hyperbolic)");
}

const char* geometry_name(Geometry g) {
  return g == Geometry::Euclid ? "euclidean" : "hyperbolic";
}

hyp::DistanceMatrix embed_target_metric(int branching, int depth) {
  if (branching == 1) {
    if (depth < 1) throw std::invalid_argument("tree spec needs depth >= 1");
    const int n = depth + 1;
    if (n > 4096) throw std::invalid_argument("tree exceeds the 4096-node budget");
    hyp::DistanceMatrix D;
    D.n = n;
    D.d.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) D.d[static_cast<size_t>(i) * n + j] = std::abs(i - j);
    return D;
  }
  return envs::tree_metric({branching, depth});
}

DistortionStats distortion(const std::vector<double>& coords, int n, int dim,
                           const hyp::DistanceMatrix& target, Geometry geometry,
                           const geo::BallConfig& ball) {
  if (target.n != n) throw std::invalid_argument("distortion: target size does not match n");
  if (coords.size() != static_cast<size_t>(n) * dim)
    throw std::invalid_argument("distortion: coords size does not match n x dim");
  DistortionStats out;
  int64_t pairs = 0;
  for (int i = 0; i < n; ++i) {
    const geo::Vec xi = row_of(coords, i, dim);
    for (int j = i + 1; j < n; ++j) {
      const geo::Vec xj = row_of(coords, j, dim);
      const double de = geometry == Geometry::Hyperbolic ? geo::dist(xi, xj, ball)
                                                         : euclid_dist(xi, xj);
      const double r = de / target.at(i, j);
      const double m = r > 0.0 ? std::max(r, 1.0 / r) : std::numeric_limits<double>::infinity();
      out.mean += m;
      out.worst = std::max(out.worst, m);
      ++pairs;
    }
  }
  if (pairs > 0) out.mean /= static_cast<double>(pairs);
  return out;
}

EmbedResult embed_tree(const EmbedConfig& cfg) {
  if (cfg.dim < 1) throw std::invalid_argument("embed: dim must be >= 1");
  if (cfg.steps < 0) throw std::invalid_argument("embed: steps must be >= 0");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("embed: lr must be positive");
  if (!(cfg.curvature > 0.0)) throw std::invalid_argument("embed: curvature must be positive");

  const hyp::DistanceMatrix D = embed_target_metric(cfg.branching, cfg.depth);
  const int n = D.n;
  const int dim = cfg.dim;
  const bool hyper = cfg.geometry == Geometry::Hyperbolic;
  const geo::BallConfig ball{cfg.curvature, 1e-5};

  std::vector<int> pi, pj;
  std::vector<double> inv_t;
  pi.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      pi.push_back(i);
      pj.push_back(j);
      inv_t.push_back(1.0 / D.at(i, j));
    }
  const int P = static_cast<int>(pi.size());
  const Tensor inv_tt({P}, std::vector<double>(inv_t));

  Rng rng(mix_seed(cfg.seed, kTagEmbed));
  const double init = hyper ? 0.1 / std::sqrt(cfg.curvature) : 0.1;
  std::vector<double> X(static_cast<size_t>(n) * dim);
  for (auto& v : X) v = rng.uniform(-init, init);
  if (hyper) {
    for (int i = 0; i < n; ++i) {
      const geo::Vec p = geo::project_to_ball(row_of(X, i, dim), ball);
      std::copy(p.begin(), p.end(), X.begin() + static_cast<size_t>(i) * dim);
    }
  }

  std::vector<optim::AdamState> states(static_cast<size_t>(n));
  optim::AdamConfig acfg;
  acfg.lr = cfg.lr;

  for (int step = 0; step < cfg.steps && P > 0; ++step) {
    // Burn-in: anneal target distances from 10% to full scale over the first
    // half of the run. Small early targets keep points near the origin while
    // the branch layout sorts itself out; expanding afterwards avoids the
    // tangled, boundary-pinned configurations a cold start falls into.
    const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 1.0;
    const double alpha = std::min(1.0, 0.1 + 0.9 * (frac / 0.5));
    ad::Tape tape;
    Tensor Xt = tape.leaf({n, dim}, X);
    Tensor xi = gather_rows(Xt, pi);
    Tensor xj = gather_rows(Xt, pj);
    Tensor d;
    if (hyper) {
      d = geo::row_dist(xi, xj, ball);
    } else {
      Tensor diff = ad::sub(xi, xj);
      d = ad::sqrt(ad::clamp(ad::sum_rows(ad::mul(diff, diff)), 1e-18,
                             std::numeric_limits<double>::infinity()));
    }
    Tensor err = ad::add_scalar(ad::scale(ad::mul(d, inv_tt), 1.0 / alpha), -1.0);
    tape.backward(ad::mean(ad::mul(err, err)));
    const std::vector<double> g = tape.grad(Xt);
    for (int i = 0; i < n; ++i) {
      geo::Vec p = row_of(X, i, dim);
      const geo::Vec gi = row_of(g, i, dim);
      if (hyper) {
        optim::radam_step(p, gi, states[static_cast<size_t>(i)], acfg, ball);
      } else {
        optim::adam_step(p, gi, states[static_cast<size_t>(i)], acfg);
      }
      std::copy(p.begin(), p.end(), X.begin() + static_cast<size_t>(i) * dim);
    }
  }

  EmbedResult out;
  out.n = n;
  out.dim = dim;
  out.coords = X;
  out.distortion = distortion(X, n, dim, D, cfg.geometry, ball);
  double obj = 0.0;
  for (int p = 0; p < P; ++p) {
    const double de = hyper ? geo::dist(row_of(X, pi[p], dim), row_of(X, pj[p], dim), ball)
                            : euclid_dist(row_of(X, pi[p], dim), row_of(X, pj[p], dim));
    const double e = de * inv_t[static_cast<size_t>(p)] - 1.0;
    obj += e * e;
  }
  out.objective = P > 0 ? obj / P : 0.0;
  return out;
}

}  // namespace hyprl::embed
