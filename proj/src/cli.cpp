#include "hyprl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "hyprl/embed.hpp"
#include "hyprl/hyperbolicity.hpp"
#include "hyprl/rl.hpp"
#include "json.hpp"

namespace hyprl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr int kExitError = 1, kExitConfig = 2, kExitDiverged = 3;

// Configuration problems the user can fix; mapped to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// value parsing

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& s) {
  size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected an integer, got \"" + s + "\"");
  }
  if (pos != s.size()) throw std::invalid_argument("expected an integer, got \"" + s + "\"");
  return v;
}

int parse_int(const std::string& s) { return static_cast<int>(parse_ll(s)); }

uint64_t parse_u64(const std::string& s) {
  const std::string t = trim(s);
  size_t pos = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(t, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a non-negative integer, got \"" + s + "\"");
  }
  if (pos != t.size() || t.empty() || t[0] == '-')
    throw std::invalid_argument("expected a non-negative integer, got \"" + s + "\"");
  return v;
}

double parse_double(const std::string& s) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got \"" + s + "\"");
  }
  if (pos != s.size()) throw std::invalid_argument("expected a number, got \"" + s + "\"");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected true/false, got \"" + s + "\"");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t comma = s.find(',', start);
    const std::string item = trim(s.substr(start, comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_int(item));
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// config registry: one definition per key drives the flag, the config-file
// parser and the --help text, so names/defaults can never drift apart.

class Registry {
 public:
  void bind_fn(const std::string& name, const std::string& desc, std::string def,
               std::function<void(const std::string&)> apply) {
    defs_.push_back({name, desc, std::move(def), std::move(apply), false});
  }
  void bind_int(const std::string& name, int* slot, const std::string& desc) {
    bind_fn(name, desc, std::to_string(*slot), [slot](const std::string& v) { *slot = parse_int(v); });
  }
  void bind_double(const std::string& name, double* slot, const std::string& desc) {
    bind_fn(name, desc, fmt_double(*slot), [slot](const std::string& v) { *slot = parse_double(v); });
  }
  void bind_u64(const std::string& name, uint64_t* slot, const std::string& desc) {
    bind_fn(name, desc, std::to_string(*slot), [slot](const std::string& v) { *slot = parse_u64(v); });
  }
  void bind_string(const std::string& name, std::string* slot, const std::string& desc) {
    bind_fn(name, desc, *slot, [slot](const std::string& v) { *slot = v; });
  }
  void bind_bool(const std::string& name, bool* slot, const std::string& desc) {
    defs_.push_back({name, desc, *slot ? "true" : "false",
                     [slot](const std::string& v) { *slot = parse_bool(v); }, true});
  }
  void bind_int_list(const std::string& name, std::vector<int>* slot, const std::string& desc) {
    bind_fn(name, desc, join_ints(*slot),
            [slot](const std::string& v) { *slot = parse_int_list(v); });
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path_, "key=value config file; flags override file values");
    for (auto& d : defs_) {
      if (d.is_flag) {
        auto& slot = flag_bools_[d.name];
        opts_[d.name] = cmd->add_flag("--" + d.name, slot, d.desc)->default_str(d.def);
      } else {
        auto& slot = flag_vals_[d.name];
        opts_[d.name] = cmd->add_option("--" + d.name, slot, d.desc)->default_str(d.def);
      }
    }
  }

  // Defaults were baked into the bound structs; layer the file, then flags,
  // then the HYPRL_SEED fallback for an unset `seed`.
  void finalize() {
    if (!config_path_.empty()) apply_file(config_path_);
    for (const auto& d : defs_) {
      if (opts_.at(d.name)->count() == 0) continue;
      const std::string v = d.is_flag ? (flag_bools_.at(d.name) ? "true" : "false")
                                      : flag_vals_.at(d.name);
      apply_one(d, v, "flag --" + d.name);
      set_.insert(d.name);
    }
    if (!set_.count("seed")) {
      if (const char* env = std::getenv("HYPRL_SEED"); env != nullptr && *env != '\0') {
        for (const auto& d : defs_)
          if (d.name == "seed") apply_one(d, env, "HYPRL_SEED");
      }
    }
  }

 private:
  struct Def {
    std::string name, desc, def;
    std::function<void(const std::string&)> apply;
    bool is_flag = false;
  };

  void apply_one(const Def& d, const std::string& v, const std::string& where) {
    try {
      d.apply(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(d.name + " (" + where + "): " + e.what());
    }
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      const Def* def = nullptr;
      for (const auto& d : defs_)
        if (d.name == key) def = &d;
      if (def == nullptr)
        throw ConfigError("unknown config key \"" + key + "\" (" + path + ":" +
                          std::to_string(lineno) + ")");
      apply_one(*def, val, path + ":" + std::to_string(lineno));
      set_.insert(key);
    }
  }

  std::vector<Def> defs_;
  std::map<std::string, std::string> flag_vals_;
  std::map<std::string, bool> flag_bools_;
  std::map<std::string, CLI::Option*> opts_;
  std::set<std::string> set_;
  std::string config_path_;
};

// ---------------------------------------------------------------------------
// shared helpers

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(acc / static_cast<double>(xs.size()));
  return out;
}

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

ordered_json json_mean_std(const MeanStd& ms) {
  return ordered_json{{"mean", ms.mean}, {"std", ms.std}};
}

void run_parallel(int n, int parallel, const std::function<void(int)>& job) {
  int workers = parallel > 0 ? parallel : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::min(std::max(workers, 1), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::string path_in(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write \"" + path + "\"");
  out << j.dump(2) << "\n";
}

void print_json(const ordered_json& j) { std::printf("%s\n", j.dump(2).c_str()); }

// Rows of doubles from a headerless CSV; ragged or malformed rows name the
// 1-based row number.
std::vector<std::vector<double>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input \"" + path + "\"");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    size_t start = 0;
    while (start <= line.size()) {
      const size_t comma = line.find(',', start);
      const std::string cell = trim(line.substr(start, comma - start));
      try {
        row.push_back(parse_double(cell));
      } catch (const std::invalid_argument&) {
        throw ConfigError(path + ": row " + std::to_string(lineno) + ": bad number \"" + cell +
                          "\"");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError(path + ": row " + std::to_string(lineno) + " has " +
                        std::to_string(row.size()) + " columns, expected " +
                        std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path + ": input has no rows");
  return rows;
}

void write_csv(const std::string& path, const std::vector<double>& data, int n, int w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write \"" + path + "\"");
  char buf[64];
  for (int i = 0; i < n; ++i) {
    std::string line;
    for (int j = 0; j < w; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data[static_cast<size_t>(i) * w + j]);
      line += (j ? "," : "") + std::string(buf);
    }
    out << line << "\n";
    out.flush();
  }
}

// ---------------------------------------------------------------------------
// train / compare / grad-probe share the experiment configuration

struct ExperimentCli {
  rl::TrainConfig tc;
  std::string out = ".";
  int seeds = 1;
  int parallel = 0;
  std::string head_str = "srym";
  std::string heads_str;  // compare / grad-probe
};

std::string head_list_help() {
  std::string s;
  for (const auto& h : nn::head_names()) s += (s.empty() ? "" : "|") + h;
  return s;
}

void bind_net_keys(Registry& reg, ExperimentCli& x) {
  reg.bind_int("latent-dim", &x.tc.latent_dim, "latent representation width");
  reg.bind_int_list("hidden", &x.tc.hidden, "comma-separated encoder hidden widths");
  reg.bind_double("curvature", &x.tc.curvature, "ball curvature magnitude c (> 0)");
}

void bind_grid_keys(Registry& reg, ExperimentCli& x) {
  reg.bind_int("grid-size", &x.tc.grid.size, "gridworld side length");
  reg.bind_double("wall-prob", &x.tc.grid.wall_prob, "wall density in generated levels");
  reg.bind_int("hazards", &x.tc.grid.n_hazards, "hazard count per level");
  reg.bind_int("collectibles", &x.tc.grid.n_collectibles, "collectible count per level");
  reg.bind_int("max-steps", &x.tc.grid.max_steps, "episode step cap");
}

void bind_run_keys(Registry& reg, ExperimentCli& x) {
  reg.bind_u64("seed", &x.tc.seed, "base rng seed (HYPRL_SEED when unset)");
  reg.bind_string("out", &x.out, "output directory");
  reg.bind_int("parallel", &x.parallel, "max concurrent runs (0 = hardware threads)");
}

void bind_ppo_keys(Registry& reg, ExperimentCli& x) {
  reg.bind_double("clip-eps", &x.tc.ppo.clip_eps, "surrogate clip range");
  reg.bind_double("entropy-coef", &x.tc.ppo.entropy_coef, "entropy bonus coefficient");
  reg.bind_double("value-coef", &x.tc.ppo.value_coef, "value loss coefficient");
  reg.bind_double("gae-lambda", &x.tc.ppo.gae_lambda, "GAE lambda");
  reg.bind_int("epochs", &x.tc.ppo.epochs, "optimization epochs per rollout");
  reg.bind_int("minibatch", &x.tc.ppo.minibatch, "minibatch size");
}

void bind_train_keys(Registry& reg, ExperimentCli& x) {
  reg.bind_fn("head", "output head: " + head_list_help(), x.head_str,
              [&x](const std::string& v) {
                x.tc.head = nn::head_from_string(v);
                x.head_str = v;
              });
  bind_net_keys(reg, x);
  reg.bind_double("lr", &x.tc.lr, "learning rate");
  reg.bind_double("gamma", &x.tc.gamma, "discount factor");
  reg.bind_double("grad-clip", &x.tc.grad_clip, "global grad-norm clip (<= 0 disables)");
  reg.bind_int("n-envs", &x.tc.n_envs, "parallel environments");
  reg.bind_int("rollout-len", &x.tc.rollout_len, "env steps per env per update");
  reg.bind_int("updates", &x.tc.updates, "training updates");
  reg.bind_int("train-levels", &x.tc.train_levels, "train level seeds 0..n-1");
  reg.bind_int("test-levels", &x.tc.test_levels, "test level seeds 1000..1000+n-1");
  reg.bind_int("eval-every", &x.tc.eval_every, "updates between test evals (0 disables)");
  reg.bind_int("eval-episodes", &x.tc.eval_episodes, "episodes per periodic test eval");
  reg.bind_int("delta-every", &x.tc.delta_every, "updates between delta_rel probes (0 disables)");
  reg.bind_int("delta-samples", &x.tc.delta_samples, "latent sample cap per delta_rel probe");
  reg.bind_int("probe-samples", &x.tc.probe_samples, "samples per gradient probe (0 disables)");
  reg.bind_bool("timing", &x.tc.record_timing,
                "record wall-clock ms (off keeps reruns byte-identical)");
  bind_grid_keys(reg, x);
  bind_ppo_keys(reg, x);
  reg.bind_int("batch", &x.tc.dqn.batch, "dqn replay batch size");
  reg.bind_int("n-step", &x.tc.dqn.n_step, "dqn n-step horizon");
  reg.bind_int("capacity", &x.tc.dqn.capacity, "dqn replay capacity");
  reg.bind_int("target-sync-every", &x.tc.dqn.target_sync_every, "updates between target syncs");
  reg.bind_int("grad-steps", &x.tc.dqn.grad_steps, "dqn gradient steps per update");
  reg.bind_double("eps-start", &x.tc.dqn.eps_start, "dqn initial exploration rate");
  reg.bind_double("eps-end", &x.tc.dqn.eps_end, "dqn final exploration rate");
  reg.bind_double("eps-anneal-frac", &x.tc.dqn.eps_anneal_frac,
                  "fraction of env steps spent annealing eps");
  reg.bind_int("seeds", &x.seeds, "independent runs at seed, seed+1, ...");
  bind_run_keys(reg, x);
}

void check_kind(const std::string& kind) {
  if (kind != "ppo" && kind != "dqn")
    throw ConfigError("unknown algorithm \"" + kind + "\" (expected ppo or dqn)");
}

rl::TrainResult run_one(const std::string& kind, rl::TrainConfig cfg, rl::MetricsWriter& w) {
  return kind == "ppo" ? rl::train_ppo(cfg, w) : rl::train_dqn(cfg, w);
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& kind, ExperimentCli& x) {
  check_kind(kind);
  if (x.seeds < 1) throw ConfigError("seeds must be >= 1");
  fs::create_directories(x.out);

  struct Run {
    uint64_t seed = 0;
    rl::TrainResult res;
    std::string file;
  };
  std::vector<Run> runs(static_cast<size_t>(x.seeds));
  run_parallel(x.seeds, x.parallel, [&](int i) {
    rl::TrainConfig c = x.tc;
    c.seed = x.tc.seed + static_cast<uint64_t>(i);
    const std::string fname = "metrics_seed" + std::to_string(c.seed) + ".jsonl";
    rl::MetricsWriter w(path_in(x.out, fname));
    runs[static_cast<size_t>(i)] = {c.seed, run_one(kind, c, w), fname};
  });

  std::vector<double> tr, te, gap;
  for (const auto& r : runs) {
    tr.push_back(r.res.final_train_return);
    te.push_back(r.res.final_test_return);
    gap.push_back(r.res.final_train_return - r.res.final_test_return);
  }

  ordered_json agg;
  agg["command"] = "train";
  agg["algo"] = kind;
  agg["head"] = nn::head_to_string(x.tc.head);
  agg["latent_dim"] = x.tc.latent_dim;
  agg["updates"] = x.tc.updates;
  agg["train_levels"] = x.tc.train_levels;
  agg["test_levels"] = x.tc.test_levels;
  agg["base_seed"] = x.tc.seed;
  agg["seeds"] = x.seeds;
  agg["runs"] = ordered_json::array();
  for (const auto& r : runs)
    agg["runs"].push_back(ordered_json{{"seed", r.seed},
                                       {"final_train_return", r.res.final_train_return},
                                       {"final_test_return", r.res.final_test_return},
                                       {"env_steps", r.res.env_steps},
                                       {"metrics_file", r.file}});
  agg["final_train_return"] = json_mean_std(mean_std(tr));
  agg["final_test_return"] = json_mean_std(mean_std(te));
  agg["generalization_gap"] = json_mean_std(mean_std(gap));
  write_json(path_in(x.out, "train_aggregate.json"), agg);

  std::printf("%-10s %14s %14s %12s\n", "seed", "train_return", "test_return", "env_steps");
  for (const auto& r : runs)
    std::printf("%-10llu %14.4f %14.4f %12ld\n", static_cast<unsigned long long>(r.seed),
                r.res.final_train_return, r.res.final_test_return, r.res.env_steps);
  const auto mtr = mean_std(tr), mte = mean_std(te);
  std::printf("%-10s %7.4f+/-%.4f %7.4f+/-%.4f\n", "mean", mtr.mean, mtr.std, mte.mean, mte.std);
  std::printf("wrote %s\n", path_in(x.out, "train_aggregate.json").c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// compare

int cmd_compare(const std::string& kind, ExperimentCli& x) {
  check_kind(kind);
  if (x.seeds < 1) throw ConfigError("seeds must be >= 1");
  const auto heads = split_list(x.heads_str);
  if (heads.size() < 2) throw ConfigError("compare needs at least 2 heads, got " +
                                          std::to_string(heads.size()));
  std::set<std::string> seen;
  for (const auto& h : heads) {
    (void)nn::head_from_string(h);  // throws on unknown names
    if (!seen.insert(h).second) throw ConfigError("duplicate head \"" + h + "\"");
  }
  fs::create_directories(x.out);

  const int H = static_cast<int>(heads.size()), S = x.seeds;
  struct Run {
    rl::TrainResult res;
    std::vector<rl::MetricsRecord> recs;
  };
  std::vector<std::vector<Run>> per_head(static_cast<size_t>(H),
                                         std::vector<Run>(static_cast<size_t>(S)));
  run_parallel(H * S, x.parallel, [&](int j) {
    const int h = j / S, s = j % S;
    rl::TrainConfig c = x.tc;
    c.head = nn::head_from_string(heads[static_cast<size_t>(h)]);
    c.seed = x.tc.seed + static_cast<uint64_t>(s);
    const std::string fname =
        "metrics_" + heads[static_cast<size_t>(h)] + "_seed" + std::to_string(c.seed) + ".jsonl";
    rl::MetricsWriter w(path_in(x.out, fname));
    auto& run = per_head[static_cast<size_t>(h)][static_cast<size_t>(s)];
    run.res = run_one(kind, c, w);
    run.recs = w.records();
  });

  ordered_json agg;
  agg["command"] = "compare";
  agg["algo"] = kind;
  agg["base_seed"] = x.tc.seed;
  agg["seeds"] = S;
  agg["updates"] = x.tc.updates;
  agg["heads"] = ordered_json::object();
  for (int h = 0; h < H; ++h) {
    const auto& runs = per_head[static_cast<size_t>(h)];
    std::vector<double> tr, te, gap, lmag, lvar, emag, evar;
    for (const auto& r : runs) {
      tr.push_back(r.res.final_train_return);
      te.push_back(r.res.final_test_return);
      gap.push_back(r.res.final_train_return - r.res.final_test_return);
      std::vector<double> lm, lv, em, ev;
      for (const auto& rec : r.recs) {
        if (rec.split != "train") continue;
        lm.push_back(rec.grad_latent_mag);
        lv.push_back(rec.grad_latent_var);
        em.push_back(rec.grad_encoder_mag);
        ev.push_back(rec.grad_encoder_var);
      }
      lmag.push_back(median(lm));
      lvar.push_back(median(lv));
      emag.push_back(median(em));
      evar.push_back(median(ev));
    }
    ordered_json hj;
    hj["final_train_return"] = json_mean_std(mean_std(tr));
    hj["final_test_return"] = json_mean_std(mean_std(te));
    hj["generalization_gap"] = json_mean_std(mean_std(gap));
    hj["grad_latent_mag"] = json_mean_std(mean_std(lmag));
    hj["grad_latent_var"] = json_mean_std(mean_std(lvar));
    hj["grad_encoder_mag"] = json_mean_std(mean_std(emag));
    hj["grad_encoder_var"] = json_mean_std(mean_std(evar));
    hj["delta_rel"] = ordered_json::array();
    if (x.tc.delta_every > 0) {
      for (long u = 1; u <= x.tc.updates; u += x.tc.delta_every) {
        double acc = 0.0;
        int cnt = 0;
        for (const auto& r : runs)
          for (const auto& rec : r.recs)
            if (rec.split == "train" && rec.update == u) {
              acc += rec.delta_rel;
              ++cnt;
            }
        if (cnt > 0) hj["delta_rel"].push_back(ordered_json::array({u, acc / cnt}));
      }
    }
    agg["heads"][heads[static_cast<size_t>(h)]] = std::move(hj);
  }
  write_json(path_in(x.out, "compare_aggregate.json"), agg);

  std::printf("%-18s %16s %16s %10s\n", "head", "train_return", "test_return", "gap");
  for (int h = 0; h < H; ++h) {
    const auto& hj = agg["heads"][heads[static_cast<size_t>(h)]];
    std::printf("%-18s %8.4f+/-%.4f %8.4f+/-%.4f %10.4f\n", heads[static_cast<size_t>(h)].c_str(),
                hj["final_train_return"]["mean"].get<double>(),
                hj["final_train_return"]["std"].get<double>(),
                hj["final_test_return"]["mean"].get<double>(),
                hj["final_test_return"]["std"].get<double>(),
                hj["generalization_gap"]["mean"].get<double>());
  }
  std::printf("wrote %s\n", path_in(x.out, "compare_aggregate.json").c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// grad-probe: per-head gradient statistics on one frozen random-action batch

int cmd_grad_probe(ExperimentCli& x, int samples) {
  const auto heads = split_list(x.heads_str);
  if (heads.empty()) throw ConfigError("grad-probe needs at least 1 head");
  for (const auto& h : heads) (void)nn::head_from_string(h);
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (x.tc.n_envs < 1) throw ConfigError("n-envs must be >= 1");
  if (x.tc.train_levels < 1) throw ConfigError("train-levels must be >= 1");
  fs::create_directories(x.out);

  const int k = x.tc.n_envs;
  const int T = (samples + k - 1) / k;
  const int B = T * k;
  const int A = envs::ProcGridEnv::n_actions();

  std::vector<uint64_t> levels(static_cast<size_t>(x.tc.train_levels));
  for (size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<uint64_t>(i);
  rl::VecEnv vec(k, levels, mix_seed(x.tc.seed, 0x70656e76ULL), x.tc.grid);
  const int obs_dim = vec.obs_dim();

  // random-action rollout: identical observations for every head
  std::vector<double> obs(static_cast<size_t>(B) * obs_dim);
  std::vector<int> actions(static_cast<size_t>(B));
  std::vector<double> rewards(static_cast<size_t>(B));
  std::vector<uint8_t> dones(static_cast<size_t>(B));
  std::vector<double> final_obs;
  Rng act_rng(mix_seed(x.tc.seed, 0x70616374ULL));
  std::vector<int> acts(static_cast<size_t>(k));
  for (int t = 0; t < T; ++t) {
    std::copy(vec.obs().begin(), vec.obs().end(),
              obs.begin() + static_cast<size_t>(t) * k * obs_dim);
    for (int e = 0; e < k; ++e) {
      acts[static_cast<size_t>(e)] = act_rng.uniform_int(A);
      actions[static_cast<size_t>(t) * k + e] = acts[static_cast<size_t>(e)];
    }
    auto so = vec.step(acts);
    for (int e = 0; e < k; ++e) {
      rewards[static_cast<size_t>(t) * k + e] = so.rewards[static_cast<size_t>(e)];
      dones[static_cast<size_t>(t) * k + e] = so.dones[static_cast<size_t>(e)];
    }
  }
  final_obs = vec.obs();

  ordered_json report;
  report["command"] = "grad-probe";
  report["loss"] = "ppo-surrogate";
  report["samples"] = samples;
  report["batch"] = B;
  report["latent_dim"] = x.tc.latent_dim;
  report["seed"] = x.tc.seed;
  report["heads"] = ordered_json::object();

  for (const auto& hname : heads) {
    nn::NetConfig ncfg;
    ncfg.obs_dim = obs_dim;
    ncfg.n_outputs = A + 1;
    ncfg.latent_dim = x.tc.latent_dim;
    ncfg.hidden = x.tc.hidden;
    ncfg.head = nn::head_from_string(hname);
    ncfg.ball.c = x.tc.curvature;
    ncfg.seed = mix_seed(x.tc.seed, 0x6e6574ULL);
    nn::Net net(ncfg);

    // the net's own values and action log-probs on the frozen batch
    std::vector<double> values(static_cast<size_t>(B)), logp(static_cast<size_t>(B));
    std::vector<double> boot(static_cast<size_t>(k));
    {
      ad::Tape tape;
      auto fwd = net.forward(tape, obs, B, /*train=*/false);
      const auto& out = fwd.outputs.data();
      for (int i = 0; i < B; ++i) {
        const double* row = out.data() + static_cast<size_t>(i) * (A + 1);
        double mx = row[0];
        for (int a = 1; a < A; ++a) mx = std::max(mx, row[a]);
        double lse = 0.0;
        for (int a = 0; a < A; ++a) lse += std::exp(row[a] - mx);
        logp[static_cast<size_t>(i)] = row[actions[static_cast<size_t>(i)]] - mx - std::log(lse);
        values[static_cast<size_t>(i)] = row[A];
      }
    }
    {
      ad::Tape tape;
      auto fwd = net.forward(tape, final_obs, k, /*train=*/false);
      for (int e = 0; e < k; ++e)
        boot[static_cast<size_t>(e)] = fwd.outputs.at(static_cast<size_t>(e) * (A + 1) + A);
    }

    std::vector<double> adv(static_cast<size_t>(B)), ret(static_cast<size_t>(B));
    {
      std::vector<double> r(static_cast<size_t>(T)), v(static_cast<size_t>(T)), ea, er;
      std::vector<uint8_t> d(static_cast<size_t>(T));
      for (int e = 0; e < k; ++e) {
        for (int t = 0; t < T; ++t) {
          r[static_cast<size_t>(t)] = rewards[static_cast<size_t>(t) * k + e];
          v[static_cast<size_t>(t)] = values[static_cast<size_t>(t) * k + e];
          d[static_cast<size_t>(t)] = dones[static_cast<size_t>(t) * k + e];
        }
        rl::gae(r, v, d, boot[static_cast<size_t>(e)], x.tc.gamma, x.tc.ppo.gae_lambda, ea, er);
        for (int t = 0; t < T; ++t) {
          adv[static_cast<size_t>(t) * k + e] = ea[static_cast<size_t>(t)];
          ret[static_cast<size_t>(t) * k + e] = er[static_cast<size_t>(t)];
        }
      }
    }
    const std::vector<double> adv_n = rl::normalize_advantages(adv);

    const auto stats = rl::grad_probe(
        net, obs, obs_dim, samples, [&](ad::Tape&, nn::Net::Fwd& fwd, int i) {
          return rl::ppo_loss(fwd.outputs, {actions[static_cast<size_t>(i)]},
                              {logp[static_cast<size_t>(i)]}, {adv_n[static_cast<size_t>(i)]},
                              {ret[static_cast<size_t>(i)]}, x.tc.ppo)
              .total;
        });

    double loss = 0.0;
    {
      ad::Tape tape;
      auto fwd = net.forward(tape, obs, B, /*train=*/false);
      loss = rl::ppo_loss(fwd.outputs, actions, logp, adv_n, ret, x.tc.ppo).total.item();
    }

    report["heads"][hname] = ordered_json{{"loss", loss},
                                          {"latent_mag", stats.latent_mag},
                                          {"latent_var", stats.latent_var},
                                          {"encoder_mag", stats.encoder_mag},
                                          {"encoder_var", stats.encoder_var}};
  }

  write_json(path_in(x.out, "grad_probe.json"), report);
  print_json(report);
  return 0;
}

// ---------------------------------------------------------------------------
// measure-delta

int cmd_measure_delta(const std::string& input, bool matrix, const std::string& metric_str,
                      double curvature, int sample_size, uint64_t seed, const std::string& out) {
  if (sample_size < 0) throw ConfigError("sample-size must be >= 0 (0 = all points)");
  const auto rows = read_csv(input);
  const int n = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  const int sample = sample_size == 0 ? n : sample_size;

  hyp::HyperbolicityReport rep;
  if (matrix) {
    if (w != n)
      throw ConfigError(input + ": distance matrix must be square, got " + std::to_string(n) +
                        " rows x " + std::to_string(w) + " columns");
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(n) * n);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    hyp::DistanceMatrix D;
    try {
      D = hyp::matrix_from_data(n, std::move(flat));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(input + ": " + e.what());
    }
    rep = hyp::delta_rel_report(D, sample, seed);
  } else {
    hyp::Metric metric;
    if (metric_str == "euclid") {
      metric = hyp::Metric::Euclid;
    } else if (metric_str == "poincare") {
      metric = hyp::Metric::Poincare;
    } else {
      throw ConfigError("unknown metric \"" + metric_str + "\" (expected euclid or poincare)");
    }
    std::vector<geo::Vec> pts(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pts[static_cast<size_t>(i)] = rows[static_cast<size_t>(i)];
    geo::BallConfig ball;
    ball.c = curvature;
    try {
      rep = hyp::delta_rel(pts, metric, sample, seed, ball);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(input + ": " + e.what());
    }
  }

  ordered_json j;
  j["command"] = "measure-delta";
  j["input"] = input;
  j["mode"] = matrix ? "matrix" : "points";
  if (!matrix) j["metric"] = metric_str;
  j["n"] = n;
  j["sample_size"] = rep.sample_size;
  j["delta"] = rep.delta;
  j["diameter"] = rep.diameter;
  j["delta_rel"] = rep.delta_rel;
  j["base_index"] = rep.base_index;
  j["degenerate"] = rep.degenerate;

  fs::create_directories(out);
  write_json(path_in(out, "delta_report.json"), j);
  print_json(j);
  return 0;
}

// ---------------------------------------------------------------------------
// embed-tree

int cmd_embed_tree(const embed::EmbedConfig& ec, const std::string& geometry_str,
                   const std::string& out) {
  embed::EmbedConfig cfg = ec;
  cfg.geometry = embed::geometry_from_name(geometry_str);
  try {
    const auto res = embed::embed_tree(cfg);
    fs::create_directories(out);
    write_csv(path_in(out, "embedding.csv"), res.coords, res.n, res.dim);

    ordered_json j;
    j["command"] = "embed-tree";
    j["branching"] = cfg.branching;
    j["depth"] = cfg.depth;
    j["dim"] = cfg.dim;
    j["geometry"] = embed::geometry_name(cfg.geometry);
    j["steps"] = cfg.steps;
    j["lr"] = cfg.lr;
    j["curvature"] = cfg.curvature;
    j["seed"] = cfg.seed;
    j["n"] = res.n;
    j["mean_distortion"] = res.distortion.mean;
    j["worst_distortion"] = res.distortion.worst;
    j["objective"] = res.objective;
    j["embedding_file"] = "embedding.csv";
    write_json(path_in(out, "embed_report.json"), j);
    print_json(j);
    return 0;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"hyprl: hyperbolic representation toolkit for deep RL"};
  app.name("hyprl");
  app.require_subcommand(1);

  // train
  auto* tr = app.add_subcommand("train", "train PPO or DQN, writing JSONL metrics per seed");
  std::string tr_kind;
  tr->add_option("kind", tr_kind, "algorithm: ppo|dqn")->required();
  ExperimentCli tr_x;
  Registry tr_reg;
  bind_train_keys(tr_reg, tr_x);
  tr_reg.attach(tr);

  // compare
  auto* cp = app.add_subcommand(
      "compare", "matched-seed runs of several heads; per-head aggregate statistics");
  std::string cp_kind = "ppo";
  cp->add_option("kind", cp_kind, "algorithm: ppo|dqn (default ppo)");
  ExperimentCli cp_x;
  Registry cp_reg;
  cp_reg.bind_string("heads", &cp_x.heads_str,
                     "comma-separated heads (at least 2): " + head_list_help());
  bind_train_keys(cp_reg, cp_x);
  cp_reg.attach(cp);

  // grad-probe
  auto* gp = app.add_subcommand(
      "grad-probe", "per-head gradient magnitude/variance on one frozen random-action batch");
  ExperimentCli gp_x;
  {
    std::string all;
    for (const auto& h : nn::head_names()) all += (all.empty() ? "" : ",") + h;
    gp_x.heads_str = all;
  }
  int gp_samples = 64;
  Registry gp_reg;
  gp_reg.bind_string("heads", &gp_x.heads_str, "comma-separated heads: " + head_list_help());
  gp_reg.bind_int("samples", &gp_samples, "single-sample probes to run");
  bind_net_keys(gp_reg, gp_x);
  gp_reg.bind_double("gamma", &gp_x.tc.gamma, "discount factor");
  gp_reg.bind_int("n-envs", &gp_x.tc.n_envs, "parallel environments");
  gp_reg.bind_int("train-levels", &gp_x.tc.train_levels, "train level seeds 0..n-1");
  bind_grid_keys(gp_reg, gp_x);
  bind_ppo_keys(gp_reg, gp_x);
  bind_run_keys(gp_reg, gp_x);
  gp_reg.attach(gp);

  // measure-delta
  auto* md = app.add_subcommand("measure-delta",
                                "delta-hyperbolicity report for a point CSV or distance matrix");
  std::string md_input;
  md->add_option("input", md_input, "headerless CSV: one point per row (or a square matrix)")
      ->required();
  bool md_matrix = false;
  std::string md_metric = "euclid";
  double md_curvature = 1.0;
  int md_sample = 0;
  uint64_t md_seed = 0;
  std::string md_out = ".";
  Registry md_reg;
  md_reg.bind_bool("matrix", &md_matrix, "input is a distance matrix, not points");
  md_reg.bind_fn("metric", "point metric: euclid|poincare", md_metric,
                 [&md_metric](const std::string& v) { md_metric = v; });
  md_reg.bind_double("curvature", &md_curvature, "ball curvature for the poincare metric");
  md_reg.bind_int("sample-size", &md_sample, "points to subsample (0 = all)");
  md_reg.bind_u64("seed", &md_seed, "subsample seed (HYPRL_SEED when unset)");
  md_reg.bind_string("out", &md_out, "output directory");
  md_reg.attach(md);

  // embed-tree
  auto* et = app.add_subcommand("embed-tree",
                                "optimize a tree embedding and report its distortion");
  embed::EmbedConfig et_cfg;
  std::string et_geometry = "hyperbolic";
  std::string et_out = ".";
  Registry et_reg;
  et_reg.bind_int("branching", &et_cfg.branching, "tree branching factor (1 = unit-edge path)");
  et_reg.bind_int("depth", &et_cfg.depth, "tree depth");
  et_reg.bind_int("dim", &et_cfg.dim, "embedding dimension");
  et_reg.bind_fn("geometry", "embedding geometry: euclidean|hyperbolic", et_geometry,
                 [&et_geometry](const std::string& v) { et_geometry = v; });
  et_reg.bind_int("steps", &et_cfg.steps, "optimization steps");
  et_reg.bind_double("lr", &et_cfg.lr, "learning rate");
  et_reg.bind_double("curvature", &et_cfg.curvature, "ball curvature (hyperbolic geometry)");
  et_reg.bind_u64("seed", &et_cfg.seed, "init seed (HYPRL_SEED when unset)");
  et_reg.bind_string("out", &et_out, "output directory");
  et_reg.attach(et);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (app.got_subcommand(tr)) {
    tr_reg.finalize();
    return cmd_train(tr_kind, tr_x);
  }
  if (app.got_subcommand(cp)) {
    cp_reg.finalize();
    return cmd_compare(cp_kind, cp_x);
  }
  if (app.got_subcommand(gp)) {
    gp_reg.finalize();
    return cmd_grad_probe(gp_x, gp_samples);
  }
  if (app.got_subcommand(md)) {
    md_reg.finalize();
    return cmd_measure_delta(md_input, md_matrix, md_metric, md_curvature, md_sample, md_seed,
                             md_out);
  }
  if (app.got_subcommand(et)) {
    et_reg.finalize();
    return cmd_embed_tree(et_cfg, et_geometry, et_out);
  }
  return kExitError;  // unreachable with require_subcommand(1)
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  try {
    return dispatch(argc, argv);
  } catch (const rl::DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
}

}  // namespace hyprl::cli
