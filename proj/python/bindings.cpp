#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hyprl/embed.hpp"
#include "hyprl/envs.hpp"
#include "hyprl/hyperbolicity.hpp"
#include "hyprl/nn.hpp"
#include "hyprl/poincare.hpp"
#include "hyprl/rl.hpp"

namespace py = pybind11;

using namespace hyprl;

namespace {

hyp::Metric metric_from_name(const std::string& s) {
  if (s == "euclid" || s == "euclidean") return hyp::Metric::Euclid;
  if (s == "poincare") return hyp::Metric::Poincare;
  throw std::invalid_argument("unknown metric \"" + s + "\" (expected euclid or poincare)");
}

hyp::DistanceMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
  int n = static_cast<int>(rows.size());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(n) * n);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != n) {
      throw std::invalid_argument("distance matrix must be square");
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return hyp::matrix_from_data(n, std::move(flat));
}

std::vector<std::vector<double>> matrix_to_rows(const hyp::DistanceMatrix& D) {
  std::vector<std::vector<double>> rows(D.n);
  for (int i = 0; i < D.n; ++i) {
    rows[i].assign(D.d.begin() + static_cast<size_t>(i) * D.n,
                   D.d.begin() + static_cast<size_t>(i + 1) * D.n);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "hyprl: hyperbolic representation toolkit for deep RL";

  py::register_exception<rl::DivergenceError>(m, "DivergenceError");

  // --- geometry -------------------------------------------------------------
  py::class_<geo::BallConfig>(m, "BallConfig",
                              "Poincare ball of curvature -c; points stay strictly inside.")
      .def(py::init<>())
      .def(py::init([](double c, double boundary_eps) {
             return geo::BallConfig{c, boundary_eps};
           }),
           py::arg("c") = 1.0, py::arg("boundary_eps") = 1e-5)
      .def_readwrite("c", &geo::BallConfig::c)
      .def_readwrite("boundary_eps", &geo::BallConfig::boundary_eps)
      .def("__repr__", [](const geo::BallConfig& b) {
        return "BallConfig(c=" + std::to_string(b.c) +
               ", boundary_eps=" + std::to_string(b.boundary_eps) + ")";
      });

  m.def("dist", &geo::dist, py::arg("x"), py::arg("y"), py::arg("ball") = geo::BallConfig{},
        "Geodesic distance between two ball points.");
  m.def("mobius_add", &geo::mobius_add, py::arg("x"), py::arg("y"),
        py::arg("ball") = geo::BallConfig{}, "Mobius addition x (+) y on the ball.");
  m.def("expmap0", &geo::expmap0, py::arg("v"), py::arg("ball") = geo::BallConfig{},
        "Exponential map of a tangent vector at the origin.");
  m.def("logmap0", &geo::logmap0, py::arg("x"), py::arg("ball") = geo::BallConfig{},
        "Logarithm map of a ball point back to the origin tangent space.");
  m.def("expmap_at", &geo::expmap_at, py::arg("p"), py::arg("v"),
        py::arg("ball") = geo::BallConfig{}, "Exponential map of tangent v at base point p.");
  m.def("project_to_ball", &geo::project_to_ball, py::arg("x"),
        py::arg("ball") = geo::BallConfig{}, "Rescale x inside the open ball if necessary.");
  m.def("conformal_factor", &geo::conformal_factor, py::arg("x"),
        py::arg("ball") = geo::BallConfig{}, "Conformal factor lambda_x = 2 / (1 - c|x|^2).");
  m.def("gyroplane_sdist", &geo::gyroplane_sdist, py::arg("x"), py::arg("p"), py::arg("w"),
        py::arg("ball") = geo::BallConfig{},
        "Signed distance from x to the gyroplane through p with normal w.");
  m.def("gyroplane_affine", &geo::gyroplane_affine, py::arg("x"), py::arg("p"), py::arg("w"),
        py::arg("ball") = geo::BallConfig{},
        "Gyroplane affine score used as a network logit.");

  // --- hyperbolicity ----------------------------------------------------------
  py::class_<hyp::HyperbolicityReport>(m, "HyperbolicityReport")
      .def_readonly("delta", &hyp::HyperbolicityReport::delta)
      .def_readonly("diameter", &hyp::HyperbolicityReport::diameter)
      .def_readonly("delta_rel", &hyp::HyperbolicityReport::delta_rel)
      .def_readonly("base_index", &hyp::HyperbolicityReport::base_index)
      .def_readonly("sample_size", &hyp::HyperbolicityReport::sample_size)
      .def_readonly("degenerate", &hyp::HyperbolicityReport::degenerate)
      .def("__repr__", [](const hyp::HyperbolicityReport& r) {
        return "HyperbolicityReport(delta=" + std::to_string(r.delta) +
               ", diameter=" + std::to_string(r.diameter) +
               ", delta_rel=" + std::to_string(r.delta_rel) + ")";
      });

  m.def(
      "delta_rel",
      [](const std::vector<geo::Vec>& pts, const std::string& metric, int sample_size,
         uint64_t seed, const geo::BallConfig& ball) {
        int s = sample_size <= 0 ? static_cast<int>(pts.size()) : sample_size;
        return hyp::delta_rel(pts, metric_from_name(metric), s, seed, ball);
      },
      py::arg("points"), py::arg("metric") = "euclid", py::arg("sample_size") = 0,
      py::arg("seed") = 0, py::arg("ball") = geo::BallConfig{},
      "Relative delta-hyperbolicity report for a point set (sample_size <= 0 uses all points).");
  m.def(
      "delta_rel_matrix",
      [](const std::vector<std::vector<double>>& rows, int sample_size, uint64_t seed) {
        hyp::DistanceMatrix D = matrix_from_rows(rows);
        int s = sample_size <= 0 ? D.n : sample_size;
        return hyp::delta_rel_report(D, s, seed);
      },
      py::arg("matrix"), py::arg("sample_size") = 0, py::arg("seed") = 0,
      "Relative delta-hyperbolicity report for a square distance matrix.");
  m.def(
      "delta_fourpoint",
      [](const std::vector<std::vector<double>>& rows) {
        return hyp::delta_fourpoint(matrix_from_rows(rows));
      },
      py::arg("matrix"), "Exact four-point delta over all quadruples (O(n^4)).");
  m.def(
      "tree_metric",
      [](int branching, int depth) {
        return matrix_to_rows(envs::tree_metric(envs::TreeSpec{branching, depth}));
      },
      py::arg("branching") = 2, py::arg("depth") = 3,
      "Shortest-path distance matrix of a perfect b-ary tree with unit edges.");

  // --- environment ------------------------------------------------------------
  py::class_<envs::GridConfig>(m, "GridConfig")
      .def(py::init<>())
      .def_readwrite("size", &envs::GridConfig::size)
      .def_readwrite("wall_prob", &envs::GridConfig::wall_prob)
      .def_readwrite("n_hazards", &envs::GridConfig::n_hazards)
      .def_readwrite("n_collectibles", &envs::GridConfig::n_collectibles)
      .def_readwrite("max_steps", &envs::GridConfig::max_steps);

  py::class_<envs::ProcGridEnv>(m, "ProcGridEnv",
                                "Procedurally generated gridworld; layouts are a pure function "
                                "of the seed. Actions: 0 up, 1 down, 2 left, 3 right.")
      .def_static("generate", &envs::ProcGridEnv::generate, py::arg("seed"),
                  py::arg("cfg") = envs::GridConfig{})
      .def_static("empty_room", &envs::ProcGridEnv::empty_room, py::arg("size"),
                  py::arg("max_steps") = 64)
      .def("observation", &envs::ProcGridEnv::observation)
      .def(
          "step",
          [](envs::ProcGridEnv& e, int action) {
            auto r = e.step(action);
            return std::make_tuple(std::move(r.obs), r.reward, r.done);
          },
          py::arg("action"), "Advance one step; returns (obs, reward, done).")
      .def("reset", &envs::ProcGridEnv::reset)
      .def_property_readonly("done", &envs::ProcGridEnv::done)
      .def_property_readonly("steps", &envs::ProcGridEnv::steps)
      .def_property_readonly("episode_return", &envs::ProcGridEnv::episode_return)
      .def_property_readonly("seed", &envs::ProcGridEnv::seed)
      .def_property_readonly("obs_dim", &envs::ProcGridEnv::obs_dim)
      .def_static("n_actions", &envs::ProcGridEnv::n_actions)
      .def("render", &envs::ProcGridEnv::render);

  // --- tree embedding -----------------------------------------------------------
  py::class_<embed::EmbedResult>(m, "EmbedResult")
      .def_readonly("n", &embed::EmbedResult::n)
      .def_readonly("dim", &embed::EmbedResult::dim)
      .def_readonly("coords", &embed::EmbedResult::coords)
      .def_property_readonly(
          "mean_distortion",
          [](const embed::EmbedResult& r) { return r.distortion.mean; })
      .def_property_readonly(
          "worst_distortion",
          [](const embed::EmbedResult& r) { return r.distortion.worst; })
      .def_readonly("objective", &embed::EmbedResult::objective)
      .def("points",
           [](const embed::EmbedResult& r) {
             std::vector<std::vector<double>> out(r.n);
             for (int i = 0; i < r.n; ++i) {
               out[i].assign(r.coords.begin() + static_cast<size_t>(i) * r.dim,
                             r.coords.begin() + static_cast<size_t>(i + 1) * r.dim);
             }
             return out;
           })
      .def("__repr__", [](const embed::EmbedResult& r) {
        return "EmbedResult(n=" + std::to_string(r.n) + ", dim=" + std::to_string(r.dim) +
               ", mean_distortion=" + std::to_string(r.distortion.mean) + ")";
      });

  m.def(
      "embed_tree",
      [](int branching, int depth, int dim, const std::string& geometry, int steps, double lr,
         double curvature, uint64_t seed) {
        embed::EmbedConfig cfg;
        cfg.branching = branching;
        cfg.depth = depth;
        cfg.dim = dim;
        cfg.geometry = embed::geometry_from_name(geometry);
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.curvature = curvature;
        cfg.seed = seed;
        return embed::embed_tree(cfg);
      },
      py::arg("branching") = 2, py::arg("depth") = 5, py::arg("dim") = 2,
      py::arg("geometry") = "hyperbolic", py::arg("steps") = 3000, py::arg("lr") = 5e-2,
      py::arg("curvature") = 1.0, py::arg("seed") = 0,
      py::call_guard<py::gil_scoped_release>(),
      "Optimize a tree embedding; geometry is \"hyperbolic\" or \"euclidean\".");

  // --- training ---------------------------------------------------------------
  py::class_<rl::PPOConfig>(m, "PPOConfig")
      .def(py::init<>())
      .def_readwrite("clip_eps", &rl::PPOConfig::clip_eps)
      .def_readwrite("entropy_coef", &rl::PPOConfig::entropy_coef)
      .def_readwrite("value_coef", &rl::PPOConfig::value_coef)
      .def_readwrite("gae_lambda", &rl::PPOConfig::gae_lambda)
      .def_readwrite("epochs", &rl::PPOConfig::epochs)
      .def_readwrite("minibatch", &rl::PPOConfig::minibatch);

  py::class_<rl::DQNConfig>(m, "DQNConfig")
      .def(py::init<>())
      .def_readwrite("batch", &rl::DQNConfig::batch)
      .def_readwrite("n_step", &rl::DQNConfig::n_step)
      .def_readwrite("capacity", &rl::DQNConfig::capacity)
      .def_readwrite("target_sync_every", &rl::DQNConfig::target_sync_every)
      .def_readwrite("grad_steps", &rl::DQNConfig::grad_steps)
      .def_readwrite("eps_start", &rl::DQNConfig::eps_start)
      .def_readwrite("eps_end", &rl::DQNConfig::eps_end)
      .def_readwrite("eps_anneal_frac", &rl::DQNConfig::eps_anneal_frac);

  py::class_<rl::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "head", [](const rl::TrainConfig& c) { return nn::head_to_string(c.head); },
          [](rl::TrainConfig& c, const std::string& s) { c.head = nn::head_from_string(s); })
      .def_readwrite("latent_dim", &rl::TrainConfig::latent_dim)
      .def_readwrite("hidden", &rl::TrainConfig::hidden)
      .def_readwrite("curvature", &rl::TrainConfig::curvature)
      .def_readwrite("lr", &rl::TrainConfig::lr)
      .def_readwrite("gamma", &rl::TrainConfig::gamma)
      .def_readwrite("grad_clip", &rl::TrainConfig::grad_clip)
      .def_readwrite("n_envs", &rl::TrainConfig::n_envs)
      .def_readwrite("rollout_len", &rl::TrainConfig::rollout_len)
      .def_readwrite("updates", &rl::TrainConfig::updates)
      .def_readwrite("train_levels", &rl::TrainConfig::train_levels)
      .def_readwrite("test_levels", &rl::TrainConfig::test_levels)
      .def_readwrite("eval_every", &rl::TrainConfig::eval_every)
      .def_readwrite("eval_episodes", &rl::TrainConfig::eval_episodes)
      .def_readwrite("delta_every", &rl::TrainConfig::delta_every)
      .def_readwrite("delta_samples", &rl::TrainConfig::delta_samples)
      .def_readwrite("probe_samples", &rl::TrainConfig::probe_samples)
      .def_readwrite("seed", &rl::TrainConfig::seed)
      .def_readwrite("record_timing", &rl::TrainConfig::record_timing)
      .def_readwrite("grid", &rl::TrainConfig::grid)
      .def_readwrite("ppo", &rl::TrainConfig::ppo)
      .def_readwrite("dqn", &rl::TrainConfig::dqn);

  py::class_<rl::TrainResult>(m, "TrainResult")
      .def_readonly("final_train_return", &rl::TrainResult::final_train_return)
      .def_readonly("final_test_return", &rl::TrainResult::final_test_return)
      .def_readonly("env_steps", &rl::TrainResult::env_steps)
      .def("__repr__", [](const rl::TrainResult& r) {
        return "TrainResult(final_train_return=" + std::to_string(r.final_train_return) +
               ", final_test_return=" + std::to_string(r.final_test_return) +
               ", env_steps=" + std::to_string(r.env_steps) + ")";
      });

  py::class_<rl::MetricsRecord>(m, "MetricsRecord")
      .def_readonly("update", &rl::MetricsRecord::update)
      .def_readonly("env_steps", &rl::MetricsRecord::env_steps)
      .def_readonly("split", &rl::MetricsRecord::split)
      .def_readonly("mean_return", &rl::MetricsRecord::mean_return)
      .def_readonly("entropy", &rl::MetricsRecord::entropy)
      .def_readonly("grad_latent_mag", &rl::MetricsRecord::grad_latent_mag)
      .def_readonly("grad_latent_var", &rl::MetricsRecord::grad_latent_var)
      .def_readonly("grad_encoder_mag", &rl::MetricsRecord::grad_encoder_mag)
      .def_readonly("grad_encoder_var", &rl::MetricsRecord::grad_encoder_var)
      .def_readonly("delta_rel", &rl::MetricsRecord::delta_rel)
      .def_readonly("wall_ms", &rl::MetricsRecord::wall_ms)
      .def("__repr__",
           [](const rl::MetricsRecord& r) { return rl::MetricsWriter::to_json_line(r); });

  m.def(
      "train_ppo",
      [](const rl::TrainConfig& cfg) {
        rl::MetricsWriter w("");
        rl::TrainResult res = rl::train_ppo(cfg, w);
        return std::make_pair(res, w.records());
      },
      py::arg("cfg"), py::call_guard<py::gil_scoped_release>(),
      "Train PPO; returns (TrainResult, list of MetricsRecord).");
  m.def(
      "train_dqn",
      [](const rl::TrainConfig& cfg) {
        rl::MetricsWriter w("");
        rl::TrainResult res = rl::train_dqn(cfg, w);
        return std::make_pair(res, w.records());
      },
      py::arg("cfg"), py::call_guard<py::gil_scoped_release>(),
      "Train DQN; returns (TrainResult, list of MetricsRecord).");

  m.def("head_names", [] { return nn::head_names(); },
        "Names of every available output head.");
}
