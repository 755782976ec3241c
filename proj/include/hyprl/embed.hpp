#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyprl/hyperbolicity.hpp"

namespace hyprl::embed {

enum class Geometry { Euclid, Hyperbolic };

// Accepts "euclidean" or "hyperbolic"; anything else throws.
Geometry geometry_from_name(const std::string& name);
const char* geometry_name(Geometry g);

struct EmbedConfig {
  int branching = 2;
  int depth = 5;
  int dim = 2;
  Geometry geometry = Geometry::Hyperbolic;
  int steps = 3000;
  double lr = 5e-2;
  double curvature = 1.0;  // hyperbolic geometry only
  uint64_t seed = 0;
};

struct DistortionStats {
  double mean = 0.0;   // mean over pairs of max(r, 1/r), r = d_emb / d_src
  double worst = 0.0;  // max over pairs
};

struct EmbedResult {
  int n = 0;
  int dim = 0;
  std::vector<double> coords;  // row-major n x dim final coordinates
  DistortionStats distortion;
  double objective = 0.0;  // final mean squared relative distance error
};

// Target metric for the embedding benchmark: a perfect b-ary tree for
// branching >= 2, or a unit-edge path of depth+1 nodes for branching == 1
// (the b -> 1 limit of the node-count formula; depth 1 gives a single edge).
hyp::DistanceMatrix embed_target_metric(int branching, int depth);

// Embeds the tree metric by minimizing the mean squared relative distance
// error over all node pairs, with Adam in Euclidean space and Riemannian
// Adam on the Poincare ball. Target distances are annealed from 10% to full
// scale over the first half of the steps (burn-in), which keeps the layout
// organized while it expands.
EmbedResult embed_tree(const EmbedConfig& cfg);

// Multiplicative distortion of coordinates against a target metric.
DistortionStats distortion(const std::vector<double>& coords, int n, int dim,
                           const hyp::DistanceMatrix& target, Geometry geometry,
                           const geo::BallConfig& ball = {});

}  // namespace hyprl::embed
