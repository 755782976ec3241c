#pragma once

#include <cstdint>
#include <vector>

#include "hyprl/poincare.hpp"

namespace hyprl::hyp {

enum class Metric { Euclid, Poincare };

// Symmetric non-negative distance matrix with zero diagonal.
struct DistanceMatrix {
  int n = 0;
  std::vector<double> d;  // row-major n*n
  double at(int i, int j) const { return d[static_cast<size_t>(i) * n + j]; }
};

// Exact pairwise distances between points under the chosen metric. Validates
// the triangle inequality (1e-9 slack) on construction; the poincare metric
// rejects points outside the ball.
DistanceMatrix pairwise_dist(const std::vector<geo::Vec>& pts, Metric metric,
                             const geo::BallConfig& ball = {});

// Wraps raw data as a DistanceMatrix after checking symmetry (1e-12), a zero
// diagonal, non-negativity and the triangle inequality (1e-9). O(n^3) — meant
// for loaded inputs of moderate size, not bulk generated matrices.
DistanceMatrix matrix_from_data(int n, std::vector<double> data);

// (i|j)_r = (d(i,r) + d(j,r) - d(i,j)) / 2.
double gromov_product(const DistanceMatrix& D, int i, int j, int r);

// Four-point condition over all quadruples: max of (S1 - S2)/2 where
// S1 >= S2 >= S3 are the three pairings of pairwise-distance sums. O(n^4);
// returns 0 for n <= 3.
double delta_fourpoint(const DistanceMatrix& D);

// Fixed-base form: delta = max((A (x) A) - A) with A[i][j] = (i|j)_base and
// (A (x) A)[i][j] = max_k min(A[i][k], A[k][j]). Equals the four-point
// maximum restricted to quadruples containing the base. O(n^3).
double delta_maxmin(const DistanceMatrix& D, int base);

struct HyperbolicityReport {
  double delta = 0.0;
  double diameter = 0.0;
  double delta_rel = 0.0;  // 2*delta/diameter, 0 when degenerate
  int base_index = 0;      // index into the original point set
  int sample_size = 0;
  bool degenerate = false;  // diameter below 1e-12
};

// Subsamples min(sample_size, n) points without replacement (deterministic in
// seed), uses the first sampled point as the max-min base and reports
// delta_rel = 2*delta/diameter over the sample.
HyperbolicityReport delta_rel_report(const DistanceMatrix& D, int sample_size, uint64_t seed);

HyperbolicityReport delta_rel(const std::vector<geo::Vec>& pts, Metric metric, int sample_size,
                              uint64_t seed, const geo::BallConfig& ball = {});

}  // namespace hyprl::hyp
