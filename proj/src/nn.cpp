#include "hyprl/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hyprl/rng.hpp"

namespace hyprl::nn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void normalize_or_keep(std::vector<double>& x) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double n = std::sqrt(sq);
  if (n < 1e-30) return;
  for (double& v : x) v /= n;
}

// v <- norm(W^T u), u <- norm(W v), repeated `iters` times. W is row-major
// [out, in]; u has length out, v length in.
void power_iterate(const std::vector<double>& W, int out_dim, int in_dim, std::vector<double>& u,
                   std::vector<double>& v, int iters) {
  v.assign(static_cast<size_t>(in_dim), 0.0);
  for (int it = 0; it < iters; ++it) {
    for (int j = 0; j < in_dim; ++j) {
      double s = 0.0;
      for (int i = 0; i < out_dim; ++i) s += W[static_cast<size_t>(i) * in_dim + j] * u[i];
      v[j] = s;
    }
    normalize_or_keep(v);
    for (int i = 0; i < out_dim; ++i) {
      double s = 0.0;
      for (int j = 0; j < in_dim; ++j) s += W[static_cast<size_t>(i) * in_dim + j] * v[j];
      u[i] = s;
    }
    normalize_or_keep(u);
  }
}

}  // namespace

HeadKind head_from_string(const std::string& s) {
  if (s == "euclid") return HeadKind::Euclid;
  if (s == "euclid-sn") return HeadKind::EuclidSN;
  if (s == "naive") return HeadKind::Naive;
  if (s == "clipped") return HeadKind::Clipped;
  if (s == "srym") return HeadKind::Srym;
  if (s == "srym-no-sn") return HeadKind::SrymNoSN;
  if (s == "srym-no-rescale") return HeadKind::SrymNoRescale;
  throw std::invalid_argument("unknown head '" + s +
                              "' (expected euclid, euclid-sn, naive, clipped, srym, srym-no-sn, "
                              "srym-no-rescale)");
}

std::string head_to_string(HeadKind k) {
  switch (k) {
    case HeadKind::Euclid: return "euclid";
    case HeadKind::EuclidSN: return "euclid-sn";
    case HeadKind::Naive: return "naive";
    case HeadKind::Clipped: return "clipped";
    case HeadKind::Srym: return "srym";
    case HeadKind::SrymNoSN: return "srym-no-sn";
    case HeadKind::SrymNoRescale: return "srym-no-rescale";
  }
  throw std::logic_error("unreachable head kind");
}

const std::vector<std::string>& head_names() {
  static const std::vector<std::string> names{"euclid",      "euclid-sn", "naive",          "clipped",
                                              "srym",        "srym-no-sn", "srym-no-rescale"};
  return names;
}

bool head_uses_ball(HeadKind k) { return k != HeadKind::Euclid && k != HeadKind::EuclidSN; }

bool head_uses_sn(HeadKind k) {
  return k == HeadKind::EuclidSN || k == HeadKind::Srym || k == HeadKind::SrymNoRescale;
}

bool head_rescales(HeadKind k) { return k == HeadKind::Srym || k == HeadKind::SrymNoSN; }

bool head_clips_unit(HeadKind k) { return k == HeadKind::Clipped; }

bool head_init_small(HeadKind k) { return k == HeadKind::Naive || k == HeadKind::Clipped; }

int ParamStore::add(Param p) {
  params.push_back(std::move(p));
  return static_cast<int>(params.size()) - 1;
}

const Param& ParamStore::by_name(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

Param& ParamStore::by_name(const std::string& name) {
  return const_cast<Param&>(static_cast<const ParamStore*>(this)->by_name(name));
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& p : params) n += static_cast<int64_t>(p.value.size());
  return n;
}

double sn_power_iter(const std::vector<double>& W, int out_dim, int in_dim,
                     std::vector<double>& u, int iters) {
  if (out_dim <= 0 || in_dim <= 0 ||
      W.size() != static_cast<size_t>(out_dim) * static_cast<size_t>(in_dim)) {
    throw std::invalid_argument("sn_power_iter: bad matrix dimensions");
  }
  if (u.size() != static_cast<size_t>(out_dim)) {
    throw std::invalid_argument("sn_power_iter: u must have length out_dim");
  }
  if (iters < 1) throw std::invalid_argument("sn_power_iter: iters must be >= 1");
  std::vector<double> v;
  power_iterate(W, out_dim, in_dim, u, v, iters);
  double sigma = 0.0;
  for (int i = 0; i < out_dim; ++i) {
    double s = 0.0;
    for (int j = 0; j < in_dim; ++j) s += W[static_cast<size_t>(i) * in_dim + j] * v[j];
    sigma += u[i] * s;
  }
  return std::max(sigma, 1e-12);
}

geo::Vec srym_forward(const geo::Vec& x_e, const geo::BallConfig& ball) {
  geo::Vec x = x_e;
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (double& v : x) v *= s;
  return geo::expmap0(x, ball);
}

geo::Vec clipped_forward(const geo::Vec& x_e, const geo::BallConfig& ball) {
  geo::Vec x = x_e;
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double r = std::sqrt(sq);
  if (r > 1.0) {
    for (double& v : x) v /= r;
  }
  return geo::expmap0(x, ball);
}

Net::Net(const NetConfig& cfg) : cfg_(cfg) {
  if (cfg.obs_dim <= 0 || cfg.n_outputs <= 0 || cfg.latent_dim <= 0) {
    throw std::invalid_argument("net config requires positive obs_dim/n_outputs/latent_dim");
  }
  Rng rng(mix_seed(cfg.seed, 0x6e65745full));

  std::vector<int> outs = cfg.hidden;
  outs.push_back(cfg.latent_dim);
  int in = cfg.obs_dim;
  for (size_t li = 0; li < outs.size(); ++li) {
    const int out = outs[li];
    const bool last = li + 1 == outs.size();
    const double std_w = last ? std::sqrt(1.0 / in) : std::sqrt(2.0 / in);
    Param W;
    W.name = "enc" + std::to_string(li) + ".W";
    W.shape = {out, in};
    W.value.resize(static_cast<size_t>(out) * in);
    for (double& x : W.value) x = rng.normal() * std_w;
    W.encoder = true;
    enc_w_.push_back(store_.add(std::move(W)));
    Param b;
    b.name = "enc" + std::to_string(li) + ".b";
    b.shape = {out};
    b.value.assign(static_cast<size_t>(out), 0.0);
    b.encoder = true;
    store_.add(std::move(b));
    in = out;
  }

  const double std_h = std::sqrt(1.0 / cfg.latent_dim);
  if (head_uses_ball(cfg.head)) {
    for (int k = 0; k < cfg.n_outputs; ++k) {
      Param p;
      p.name = "head.p" + std::to_string(k);
      p.shape = {cfg.latent_dim};
      p.value.assign(static_cast<size_t>(cfg.latent_dim), 0.0);
      p.ball = true;
      store_.add(std::move(p));
      Param w;
      w.name = "head.w" + std::to_string(k);
      w.shape = {cfg.latent_dim};
      w.value.resize(static_cast<size_t>(cfg.latent_dim));
      for (double& x : w.value) x = rng.normal() * std_h;
      store_.add(std::move(w));
    }
  } else {
    Param W;
    W.name = "head.W";
    W.shape = {cfg.n_outputs, cfg.latent_dim};
    W.value.resize(static_cast<size_t>(cfg.n_outputs) * cfg.latent_dim);
    for (double& x : W.value) x = rng.normal() * std_h;
    store_.add(std::move(W));
    Param b;
    b.name = "head.b";
    b.shape = {cfg.n_outputs};
    b.value.assign(static_cast<size_t>(cfg.n_outputs), 0.0);
    store_.add(std::move(b));
  }

  if (head_init_small(cfg.head)) {
    // Shrink the last two linear maps (latent projection and gyroplane
    // normals) so the net starts near the ball origin.
    for (double& x : store_.at(enc_w_.back()).value) x *= cfg.init_small_factor;
    for (auto& p : store_.params) {
      if (p.name.rfind("head.w", 0) == 0) {
        for (double& x : p.value) x *= cfg.init_small_factor;
      }
    }
  }

  if (head_uses_sn(cfg.head)) {
    for (int wi : enc_w_) {
      const auto& W = store_.at(wi);
      const int out = W.shape[0], inn = W.shape[1];
      std::vector<double> u(static_cast<size_t>(out));
      for (double& x : u) x = rng.normal();
      normalize_or_keep(u);
      // One half-iteration so eval-before-train sees a sane v.
      std::vector<double> v(static_cast<size_t>(inn), 0.0);
      for (int j = 0; j < inn; ++j) {
        double s = 0.0;
        for (int i = 0; i < out; ++i) s += W.value[static_cast<size_t>(i) * inn + j] * u[i];
        v[j] = s;
      }
      normalize_or_keep(v);
      sn_u_.push_back(std::move(u));
      sn_v_.push_back(std::move(v));
    }
  }
}

Net::Fwd Net::forward(ad::Tape& tape, const std::vector<double>& obs, int batch, bool train) {
  if (batch <= 0 || obs.size() != static_cast<size_t>(batch) * cfg_.obs_dim) {
    throw std::invalid_argument("forward: obs must be row-major [batch, obs_dim]");
  }
  Fwd out;
  out.leaves.reserve(store_.params.size());
  for (const auto& p : store_.params) out.leaves.push_back(tape.leaf(p.shape, p.value));

  ad::Tensor h(std::vector<int>{batch, cfg_.obs_dim}, obs);
  const bool use_sn = head_uses_sn(cfg_.head);
  for (size_t li = 0; li < enc_w_.size(); ++li) {
    const int wi = enc_w_[li];
    const auto& shape = store_.at(wi).shape;
    const int odim = shape[0], idim = shape[1];
    ad::Tensor W = out.leaves[wi];
    if (use_sn) {
      auto& u = sn_u_[li];
      auto& v = sn_v_[li];
      if (train) power_iterate(store_.at(wi).value, odim, idim, u, v, cfg_.sn_iters);
      // sigma = u^T W v built in-graph with u, v as constants, so the
      // normalization itself contributes to the weight gradient.
      ad::Tensor u_row(std::vector<int>{1, odim}, u);
      ad::Tensor v_col(std::vector<int>{idim, 1}, v);
      ad::Tensor sigma = ad::clamp(ad::matmul(ad::matmul(u_row, W), v_col), 1e-12, kInf);
      W = ad::div(W, sigma);
    }
    ad::Tensor lin = ad::add_rowvec(ad::matmul(h, ad::transpose(W)), out.leaves[wi + 1]);
    h = (li + 1 < enc_w_.size()) ? ad::relu(lin) : lin;
  }
  out.latent = h;

  if (!head_uses_ball(cfg_.head)) {
    const auto& W = out.leaves[store_.params.size() - 2];
    const auto& b = out.leaves[store_.params.size() - 1];
    out.outputs = ad::add_rowvec(ad::matmul(h, ad::transpose(W)), b);
    return out;
  }

  ad::Tensor x = h;
  if (head_rescales(cfg_.head)) {
    x = ad::scale(x, 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim)));
  }
  if (head_clips_unit(cfg_.head)) {
    ad::Tensor sq = ad::sum_rows(ad::mul(x, x));
    ad::Tensor rn = ad::sqrt(ad::clamp(sq, 1e-24, kInf));
    ad::Tensor one = ad::Tensor::full({batch}, 1.0);
    ad::Tensor factor = ad::minimum(one, ad::div(one, rn));
    x = ad::mul_rows(x, factor);
  }
  ad::Tensor X = geo::row_expmap0(x, cfg_.ball);
  std::vector<ad::Tensor> cols;
  cols.reserve(static_cast<size_t>(cfg_.n_outputs));
  const size_t head_base = store_.params.size() - 2 * static_cast<size_t>(cfg_.n_outputs);
  for (int k = 0; k < cfg_.n_outputs; ++k) {
    const auto& p = out.leaves[head_base + 2 * static_cast<size_t>(k)];
    const auto& w = out.leaves[head_base + 2 * static_cast<size_t>(k) + 1];
    cols.push_back(geo::gyroplane_affine_rows(X, p, w, cfg_.ball));
  }
  out.outputs = ad::stack_cols(cols);
  return out;
}

void Net::copy_values_from(const Net& other) {
  if (other.store_.params.size() != store_.params.size()) {
    throw std::invalid_argument("copy_values_from: parameter count mismatch");
  }
  for (size_t i = 0; i < store_.params.size(); ++i) {
    auto& dst = store_.params[i];
    const auto& src = other.store_.params[i];
    if (dst.name != src.name || dst.shape != src.shape) {
      throw std::invalid_argument("copy_values_from: parameter layout mismatch at " + dst.name);
    }
    dst.value = src.value;
  }
  sn_u_ = other.sn_u_;
  sn_v_ = other.sn_v_;
}

}  // namespace hyprl::nn
