#include "hyprl/hyperbolicity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hyprl/rng.hpp"

namespace hyprl::hyp {

namespace {

void check_triangle(const DistanceMatrix& D) {
  for (int i = 0; i < D.n; ++i) {
    for (int j = i + 1; j < D.n; ++j) {
      const double dij = D.at(i, j);
      for (int k = 0; k < D.n; ++k) {
        if (dij > D.at(i, k) + D.at(k, j) + 1e-9) {
          throw std::invalid_argument("distance matrix violates the triangle inequality at (" +
                                      std::to_string(i) + "," + std::to_string(j) + "," +
                                      std::to_string(k) + ")");
        }
      }
    }
  }
}

double euclid_dist(const geo::Vec& a, const geo::Vec& b) {
  double sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

}  // namespace

DistanceMatrix pairwise_dist(const std::vector<geo::Vec>& pts, Metric metric,
                             const geo::BallConfig& ball) {
  if (pts.empty()) throw std::invalid_argument("pairwise_dist: need at least one point");
  const size_t dim = pts[0].size();
  for (const auto& p : pts) {
    if (p.size() != dim) throw std::invalid_argument("pairwise_dist: inconsistent dimensions");
    if (metric == Metric::Poincare) geo::conformal_factor(p, ball);  // rejects exterior points
  }
  DistanceMatrix D;
  D.n = static_cast<int>(pts.size());
  D.d.assign(static_cast<size_t>(D.n) * D.n, 0.0);
  for (int i = 0; i < D.n; ++i) {
    for (int j = i + 1; j < D.n; ++j) {
      const double v = metric == Metric::Euclid ? euclid_dist(pts[i], pts[j])
                                                : geo::dist(pts[i], pts[j], ball);
      D.d[static_cast<size_t>(i) * D.n + j] = v;
      D.d[static_cast<size_t>(j) * D.n + i] = v;
    }
  }
  check_triangle(D);
  return D;
}

DistanceMatrix matrix_from_data(int n, std::vector<double> data) {
  if (n < 1 || data.size() != static_cast<size_t>(n) * n) {
    throw std::invalid_argument("matrix_from_data: data is not n*n");
  }
  DistanceMatrix D;
  D.n = n;
  D.d = std::move(data);
  for (int i = 0; i < n; ++i) {
    if (std::abs(D.at(i, i)) > 1e-12) {
      throw std::invalid_argument("matrix_from_data: non-zero diagonal at " + std::to_string(i));
    }
    for (int j = 0; j < n; ++j) {
      if (D.at(i, j) < 0.0) throw std::invalid_argument("matrix_from_data: negative distance");
      if (std::abs(D.at(i, j) - D.at(j, i)) > 1e-12) {
        throw std::invalid_argument("matrix_from_data: asymmetric at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      }
    }
  }
  check_triangle(D);
  return D;
}

double gromov_product(const DistanceMatrix& D, int i, int j, int r) {
  if (i < 0 || j < 0 || r < 0 || i >= D.n || j >= D.n || r >= D.n) {
    throw std::out_of_range("gromov_product: index out of range");
  }
  return 0.5 * (D.at(i, r) + D.at(j, r) - D.at(i, j));
}

double delta_fourpoint(const DistanceMatrix& D) {
  if (D.n <= 3) return 0.0;
  double best = 0.0;
  for (int i = 0; i < D.n; ++i) {
    for (int j = i + 1; j < D.n; ++j) {
      for (int k = j + 1; k < D.n; ++k) {
        for (int l = k + 1; l < D.n; ++l) {
          double s1 = D.at(i, j) + D.at(k, l);
          double s2 = D.at(i, k) + D.at(j, l);
          double s3 = D.at(i, l) + D.at(j, k);
          if (s1 < s2) std::swap(s1, s2);
          if (s2 < s3) std::swap(s2, s3);
          if (s1 < s2) std::swap(s1, s2);
          best = std::max(best, (s1 - s2) / 2.0);
        }
      }
    }
  }
  return best;
}

double delta_maxmin(const DistanceMatrix& D, int base) {
  if (base < 0 || base >= D.n) throw std::out_of_range("delta_maxmin: base out of range");
  const int n = D.n;
  std::vector<double> A(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      A[static_cast<size_t>(i) * n + j] = gromov_product(D, i, j, base);
    }
  }
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double prod = 0.0;  // (A (x) A)[i][j]
      for (int k = 0; k < n; ++k) {
        prod = std::max(prod,
                        std::min(A[static_cast<size_t>(i) * n + k], A[static_cast<size_t>(k) * n + j]));
      }
      best = std::max(best, prod - A[static_cast<size_t>(i) * n + j]);
    }
  }
  return best;
}

HyperbolicityReport delta_rel_report(const DistanceMatrix& D, int sample_size, uint64_t seed) {
  const int m = std::min(sample_size, D.n);
  if (m < 2) throw std::invalid_argument("delta_rel: need at least 2 points after sampling");

  std::vector<int> idx(static_cast<size_t>(D.n));
  std::iota(idx.begin(), idx.end(), 0);
  if (m < D.n) {
    Rng rng(mix_seed(seed, 0x64656c7461ull));
    for (int i = 0; i < m; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(D.n - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(m));
  }

  DistanceMatrix S;
  S.n = m;
  S.d.assign(static_cast<size_t>(m) * m, 0.0);
  double diam = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double v = D.at(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      S.d[static_cast<size_t>(i) * m + j] = v;
      diam = std::max(diam, v);
    }
  }

  HyperbolicityReport rep;
  rep.base_index = idx[0];
  rep.sample_size = m;
  rep.diameter = diam;
  if (diam < 1e-12) {
    rep.degenerate = true;
    return rep;  // delta and delta_rel stay 0
  }
  rep.delta = delta_maxmin(S, 0);
  rep.delta_rel = 2.0 * rep.delta / diam;
  return rep;
}

HyperbolicityReport delta_rel(const std::vector<geo::Vec>& pts, Metric metric, int sample_size,
                              uint64_t seed, const geo::BallConfig& ball) {
  return delta_rel_report(pairwise_dist(pts, metric, ball), sample_size, seed);
}

}  // namespace hyprl::hyp
