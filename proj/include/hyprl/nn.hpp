#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hyprl/poincare.hpp"
#include "hyprl/tensor.hpp"

namespace hyprl::nn {

// Output-head variants. The euclid pair are flat baselines; the rest map the
// latent onto the Poincare ball and score with gyroplane layers.
enum class HeadKind { Euclid, EuclidSN, Naive, Clipped, Srym, SrymNoSN, SrymNoRescale };

HeadKind head_from_string(const std::string& s);
std::string head_to_string(HeadKind k);
bool head_uses_ball(HeadKind k);
bool head_uses_sn(HeadKind k);
bool head_rescales(HeadKind k);
bool head_clips_unit(HeadKind k);
bool head_init_small(HeadKind k);
const std::vector<std::string>& head_names();

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  bool ball = false;     // lives on the Poincare ball (riemannian updates)
  bool encoder = false;  // part of the euclidean encoder (probe tap group)
};

struct ParamStore {
  std::vector<Param> params;
  int add(Param p);
  Param& at(size_t i) { return params[i]; }
  const Param& at(size_t i) const { return params[i]; }
  const Param& by_name(const std::string& name) const;
  Param& by_name(const std::string& name);
  int64_t total_size() const;
};

// Power-iteration estimate of the top singular value of a row-major
// [out_dim, in_dim] matrix. `u` (length out_dim) persists across calls and is
// updated in place; each iteration runs v <- norm(W^T u), u <- norm(W v).
// Returns sigma = u^T W v, floored at 1e-12.
double sn_power_iter(const std::vector<double>& W, int out_dim, int in_dim,
                     std::vector<double>& u, int iters);

// Plain single-vector versions of the stabilized latent->ball maps.
geo::Vec srym_forward(const geo::Vec& x_e, const geo::BallConfig& ball);
geo::Vec clipped_forward(const geo::Vec& x_e, const geo::BallConfig& ball);

struct NetConfig {
  int obs_dim = 0;
  int n_outputs = 0;  // action logits (+1 value column for actor-critic use)
  int latent_dim = 32;
  std::vector<int> hidden = {128, 128};
  HeadKind head = HeadKind::Srym;
  geo::BallConfig ball{};
  double init_small_factor = 0.01;
  int sn_iters = 1;
  uint64_t seed = 0;
};

// MLP encoder (obs -> hidden... -> latent, ReLU between layers) followed by
// the selected head. Parameters live in a ParamStore; every forward rebuilds
// the graph on the caller's tape with one leaf per parameter.
class Net {
 public:
  explicit Net(const NetConfig& cfg);

  struct Fwd {
    ad::Tensor latent;               // [B, latent_dim], the pre-map tap point
    ad::Tensor outputs;              // [B, n_outputs]
    std::vector<ad::Tensor> leaves;  // aligned with params().params
  };

  // obs is row-major [batch, obs_dim]. train=true advances the persistent
  // power-iteration vectors; eval leaves all state untouched.
  Fwd forward(ad::Tape& tape, const std::vector<double>& obs, int batch, bool train);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const NetConfig& config() const { return cfg_; }

  int sn_layers() const { return static_cast<int>(sn_u_.size()); }
  std::vector<std::vector<double>>& sn_u() { return sn_u_; }
  const std::vector<std::vector<double>>& sn_u() const { return sn_u_; }
  std::vector<std::vector<double>>& sn_v() { return sn_v_; }
  const std::vector<std::vector<double>>& sn_v() const { return sn_v_; }

  // Copies parameter values and normalization state from a same-shape net.
  void copy_values_from(const Net& other);

 private:
  NetConfig cfg_;
  ParamStore store_;
  std::vector<int> enc_w_;  // param indices of encoder weight matrices
  std::vector<std::vector<double>> sn_u_, sn_v_;  // per encoder layer
};

}  // namespace hyprl::nn
