#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "arpex/ar_process.hpp"
#include "arpex/csv.hpp"
#include "arpex/policy.hpp"
#include "arpex/random.hpp"
#include "arpex/square_env.hpp"
#include "arpex/trainer.hpp"

namespace arpex {

// Process realization export (x_t against the step index).
inline void write_noise_csv(const std::string& path, const ArModel& model,
                            long steps, std::uint64_t seed) {
  ProcessState state(model);
  Rng rng(seed);
  auto out = open_csv(path, "t,x");
  for (long t = 0; t < steps; ++t)
    out << t << ',' << csv_num(state.step(rng.normal())) << '\n';
}

// Autocorrelation export for lags 0..max_lag.
inline void write_acf_csv(const std::string& path, const ArModel& model,
                          int max_lag) {
  const AcfTable table = acf(model, max_lag);
  auto out = open_csv(path, "lag,rho");
  for (int lag = 0; lag <= table.max_lag; ++lag)
    out << lag << ',' << csv_num(table.rho[lag]) << '\n';
}

// Policy selector for the experiment harness: "gaussian" or "arp:<p>:<alpha>",
// optionally suffixed with "@<sigma_scale>" (e.g. "gaussian@10").
struct PolicySpec {
  enum class Kind { gaussian, arp };
  Kind kind = Kind::gaussian;
  int order = 3;
  double alpha = 0.8;
  double sigma_scale = 1.0;

  bool is_gaussian() const { return kind == Kind::gaussian; }

  static PolicySpec parse(const std::string& text) {
    PolicySpec spec;
    std::string body = text;
    const auto at = body.find('@');
    if (at != std::string::npos) {
      spec.sigma_scale = std::stod(body.substr(at + 1));
      body.erase(at);
    }
    if (body == "gaussian") {
      spec.kind = Kind::gaussian;
      return spec;
    }
    if (body.rfind("arp:", 0) == 0) {
      std::stringstream ss(body.substr(4));
      std::string p_str, a_str;
      if (std::getline(ss, p_str, ':') && std::getline(ss, a_str)) {
        spec.kind = Kind::arp;
        spec.order = std::stoi(p_str);
        spec.alpha = std::stod(a_str);
        if (spec.order < 1 || !(spec.alpha >= 0.0 && spec.alpha < 1.0))
          throw std::invalid_argument("policy spec out of range: " + text);
        return spec;
      }
    }
    throw std::invalid_argument(
        "bad policy spec '" + text + "' (want gaussian or arp:<p>:<alpha>)");
  }

  std::string name() const {
    std::ostringstream oss;
    if (is_gaussian())
      oss << "gaussian";
    else
      oss << "arp:" << order << ":" << csv_num(alpha);
    if (sigma_scale != 1.0) oss << "@" << csv_num(sigma_scale);
    return oss.str();
  }
};

// Runs indexed jobs on up to `threads` workers. Each job owns its RNG and
// environment, so results do not depend on the schedule.
inline void parallel_cells(int jobs, int threads,
                           const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int i = 0; i < jobs; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline PolicyHead exploration_head(const PolicySpec& spec,
                                   const std::vector<int>& hidden) {
  PolicyHead head =
      PolicyHead::zero(SquareEnv::kObsDim, SquareEnv::kActionDim, hidden);
  head.set_sigma_scale(spec.sigma_scale);
  return head;
}

namespace detail {

struct CellEpisodes {
  std::vector<double> durations;      // per episode, simulated seconds
  std::vector<std::uint8_t> reached;  // goal (1) vs timeout (0)
  double total_seconds = 0.0;
};

template <class Policy>
CellEpisodes run_episodes(const Policy& policy, HistoryWrapper& env,
                          double budget_seconds, Rng& rng) {
  CellEpisodes out;
  while (out.total_seconds < budget_seconds) {
    env.reset(rng);
    StepResult r;
    do {
      auto s = policy.sample(env.state(), rng);
      r = env.step(s.action, s.residual);
    } while (!r.done);
    const double dur = env.env().elapsed();
    out.durations.push_back(dur);
    out.reached.push_back(r.timeout ? 0 : 1);
    out.total_seconds += dur;
  }
  return out;
}

inline CellEpisodes run_exploration_cell(double rate_hz,
                                         const PolicySpec& spec,
                                         double budget_seconds,
                                         std::uint64_t seed,
                                         const std::vector<int>& hidden) {
  PolicyHead head = exploration_head(spec, hidden);
  Rng rng(seed);
  if (spec.is_gaussian()) {
    HistoryWrapper env(SquareEnv(rate_hz), 0);
    GaussianPolicy policy(head);
    return run_episodes(policy, env, budget_seconds, rng);
  }
  HistoryWrapper env(SquareEnv(rate_hz), spec.order);
  ArPolicy policy(head, ArModel::binomial(spec.order, spec.alpha));
  return run_episodes(policy, env, budget_seconds, rng);
}

}  // namespace detail

struct ExplorationReport {
  double rate_hz = 0.0;
  PolicySpec spec;
  double budget_seconds = 0.0;     // per seed
  double total_sim_seconds = 0.0;  // across seeds
  std::int64_t episodes = 0;
  std::int64_t episodes_completed = 0;  // goal-terminated
  double mean_time = 0.0;               // timeouts contribute the episode cap
  double median_time = 0.0;
  bool censored = false;  // no episode reached the goal within the budget
  std::vector<std::uint64_t> seeds;
};

// Random-agent exploration benchmark: zero mean nets, unit sigma. Every
// (rate, spec, seed) cell runs episodes back-to-back for budget_seconds; an
// episode's time-to-target is its simulated duration (capped episodes count
// at the cap). Cells are independent and run in parallel.
inline std::vector<ExplorationReport> run_exploration(
    const std::vector<double>& rates, const std::vector<PolicySpec>& specs,
    double budget_seconds, const std::vector<std::uint64_t>& seeds,
    int threads = static_cast<int>(std::thread::hardware_concurrency()),
    const std::vector<int>& hidden = {64, 64}) {
  struct Cell {
    int rate_idx, spec_idx, seed_idx;
  };
  std::vector<Cell> cells;
  for (int r = 0; r < static_cast<int>(rates.size()); ++r)
    for (int s = 0; s < static_cast<int>(specs.size()); ++s)
      for (int k = 0; k < static_cast<int>(seeds.size()); ++k)
        cells.push_back({r, s, k});

  std::vector<detail::CellEpisodes> results(cells.size());
  parallel_cells(static_cast<int>(cells.size()), threads, [&](int i) {
    const Cell& c = cells[i];
    results[i] = detail::run_exploration_cell(
        rates[c.rate_idx], specs[c.spec_idx], budget_seconds,
        seeds[c.seed_idx], hidden);
  });

  std::vector<ExplorationReport> reports;
  for (int r = 0; r < static_cast<int>(rates.size()); ++r) {
    for (int s = 0; s < static_cast<int>(specs.size()); ++s) {
      ExplorationReport rep;
      rep.rate_hz = rates[r];
      rep.spec = specs[s];
      rep.budget_seconds = budget_seconds;
      rep.seeds = seeds;
      std::vector<double> durations;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].rate_idx != r || cells[i].spec_idx != s) continue;
        const auto& cell = results[i];
        rep.total_sim_seconds += cell.total_seconds;
        rep.episodes += static_cast<std::int64_t>(cell.durations.size());
        for (std::size_t e = 0; e < cell.durations.size(); ++e) {
          durations.push_back(cell.durations[e]);
          rep.episodes_completed += cell.reached[e];
        }
      }
      rep.censored = rep.episodes_completed == 0;
      if (rep.censored) {
        rep.mean_time = budget_seconds;
        rep.median_time = budget_seconds;
      } else {
        rep.mean_time =
            std::accumulate(durations.begin(), durations.end(), 0.0) /
            static_cast<double>(durations.size());
        std::sort(durations.begin(), durations.end());
        const std::size_t n = durations.size();
        rep.median_time = n % 2 == 1
                              ? durations[n / 2]
                              : 0.5 * (durations[n / 2 - 1] + durations[n / 2]);
      }
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

inline void write_exploration_csv(const std::string& path,
                                  const std::vector<ExplorationReport>& reports) {
  auto out = open_csv(path,
                      "rate_hz,spec,budget_s,total_sim_s,episodes,completed,"
                      "mean_time_s,median_time_s,censored,seeds");
  for (const auto& r : reports) {
    out << csv_num(r.rate_hz) << ',' << r.spec.name() << ','
        << csv_num(r.budget_seconds) << ',' << csv_num(r.total_sim_seconds)
        << ',' << r.episodes << ',' << r.episodes_completed << ','
        << csv_num(r.mean_time) << ',' << csv_num(r.median_time) << ','
        << (r.censored ? 1 : 0) << ',';
    for (std::size_t i = 0; i < r.seeds.size(); ++i)
      out << (i ? ";" : "") << r.seeds[i];
    out << '\n';
  }
}

struct TrajectoryRow {
  int run = 0;
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

// Fixed-duration exploration rollouts without termination (the environment
// runs pure kinematics). Run r uses the seed stream mix(seed, r).
inline std::vector<TrajectoryRow> run_trajectories(
    double rate_hz, const PolicySpec& spec, double duration_seconds, int runs,
    std::uint64_t seed, const std::vector<int>& hidden = {64, 64}) {
  std::vector<TrajectoryRow> rows;
  const auto steps = static_cast<std::int64_t>(
      std::llround(duration_seconds * rate_hz));
  PolicyHead head = exploration_head(spec, hidden);
  for (int run = 0; run < runs; ++run) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(run)));
    HistoryWrapper env(SquareEnv(rate_hz, /*terminating=*/false),
                       spec.is_gaussian() ? 0 : spec.order);
    env.reset(rng);
    rows.push_back({run, 0.0, env.env().pos()(0), env.env().pos()(1)});
    auto step_policy = [&](const auto& policy) {
      for (std::int64_t i = 0; i < steps; ++i) {
        auto s = policy.sample(env.state(), rng);
        env.step(s.action, s.residual);
        rows.push_back({run, env.env().elapsed(), env.env().pos()(0),
                        env.env().pos()(1)});
      }
    };
    if (spec.is_gaussian()) {
      step_policy(GaussianPolicy(head));
    } else {
      step_policy(ArPolicy(head, ArModel::binomial(spec.order, spec.alpha)));
    }
  }
  return rows;
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<TrajectoryRow>& rows) {
  auto out = open_csv(path, "run,t,x,y");
  for (const auto& r : rows)
    out << r.run << ',' << csv_num(r.t) << ',' << csv_num(r.x) << ','
        << csv_num(r.y) << '\n';
}

// Axis-aligned bounding-box area of one run's trajectory.
inline double bounding_box_area(const std::vector<TrajectoryRow>& rows,
                                int run) {
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  bool first = true;
  for (const auto& r : rows) {
    if (r.run != run) continue;
    if (first) {
      min_x = max_x = r.x;
      min_y = max_y = r.y;
      first = false;
    } else {
      min_x = std::min(min_x, r.x);
      max_x = std::max(max_x, r.x);
      min_y = std::min(min_y, r.y);
      max_y = std::max(max_y, r.y);
    }
  }
  return (max_x - min_x) * (max_y - min_y);
}

struct LearningRun {
  std::uint64_t seed = 0;
  std::vector<TrainDiagnostics> rows;  // one per batch
  VectorXd final_policy_params;
  VectorXd final_value_params;
};

struct LearningResult {
  double rate_hz = 0.0;
  PolicySpec spec;
  std::vector<LearningRun> runs;
};

namespace detail {

template <class Policy>
void train_run(PolicyHead& head, const Policy& policy, Mlp& value_net,
               HistoryWrapper& env, const TrainConfig& cfg, std::uint64_t seed,
               double total_sim_seconds, LearningRun& out) {
  PpoTrainer trainer(head, policy, value_net, env, cfg, mix_seed(seed, 0x7e5));
  while (trainer.sim_seconds() < total_sim_seconds)
    out.rows.push_back(trainer.iterate());
  out.final_policy_params = head.get_params();
  out.final_value_params = value_net.params();
}

}  // namespace detail

// Full PPO training per (rate, spec, seed) cell; cells run in parallel.
// Network initialization and the environment stream derive from the cell
// seed, so a Gaussian run and an arp:<p>:0 run share identical networks and
// draws.
inline LearningResult run_learning(
    double rate_hz, const PolicySpec& spec, double total_sim_seconds,
    const std::vector<std::uint64_t>& seeds, const TrainConfig& base_config,
    int threads = static_cast<int>(std::thread::hardware_concurrency())) {
  LearningResult result;
  result.rate_hz = rate_hz;
  result.spec = spec;
  result.runs.resize(seeds.size());
  const TrainConfig cfg = base_config.scaled_for_rate(rate_hz);
  cfg.validate();

  parallel_cells(static_cast<int>(seeds.size()), threads, [&](int i) {
    const std::uint64_t seed = seeds[i];
    LearningRun& run = result.runs[i];
    run.seed = seed;
    Rng net_rng(mix_seed(seed, 0xa11));
    PolicyHead head = PolicyHead::initialized(
        SquareEnv::kObsDim, SquareEnv::kActionDim, cfg.hidden, net_rng,
        cfg.state_dependent_std);
    std::vector<int> value_sizes{SquareEnv::kObsDim};
    value_sizes.insert(value_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    value_sizes.push_back(1);
    Mlp value_net(value_sizes);
    value_net.init_uniform(net_rng);
    if (spec.is_gaussian()) {
      HistoryWrapper env(SquareEnv(rate_hz), 0);
      GaussianPolicy policy(head);
      detail::train_run(head, policy, value_net, env, cfg, seed,
                        total_sim_seconds, run);
    } else {
      HistoryWrapper env(SquareEnv(rate_hz), spec.order);
      ArPolicy policy(head, ArModel::binomial(spec.order, spec.alpha));
      detail::train_run(head, policy, value_net, env, cfg, seed,
                        total_sim_seconds, run);
    }
  });
  return result;
}

// Per-seed progress log in the trainer schema. Batches that completed no
// episode carry the last known mean return (nan before the first episode).
inline void write_learning_run_csv(const std::string& path,
                                   const LearningRun& run) {
  auto out = open_csv(
      path, "sim_seconds,mean_return,mean_ep_len,kl,clipfrac,explained_var");
  double carry_return = std::nan("");
  double carry_len = std::nan("");
  for (const auto& d : run.rows) {
    if (d.episodes > 0) {
      carry_return = d.mean_return;
      carry_len = d.mean_ep_len;
    }
    out << csv_num(d.sim_seconds) << ',' << csv_num(carry_return) << ','
        << csv_num(carry_len) << ',' << csv_num(d.kl) << ','
        << csv_num(d.clip_fraction) << ',' << csv_num(d.explained_var) << '\n';
  }
}

// Aggregate curve: per batch, episode returns pooled across seeds.
inline void write_learning_aggregate_csv(const std::string& path,
                                         const LearningResult& result) {
  std::size_t batches = 0;
  for (const auto& run : result.runs)
    batches = std::max(batches, run.rows.size());
  auto out = open_csv(path, "sim_seconds,mean_return,episodes,seeds");
  for (std::size_t b = 0; b < batches; ++b) {
    double sim_seconds = 0.0;
    double return_sum = 0.0;
    int episodes = 0;
    int seeds_present = 0;
    for (const auto& run : result.runs) {
      if (b >= run.rows.size()) continue;
      const auto& d = run.rows[b];
      sim_seconds = std::max(sim_seconds, d.sim_seconds);
      return_sum += d.mean_return * d.episodes;
      episodes += d.episodes;
      ++seeds_present;
    }
    out << csv_num(sim_seconds) << ','
        << csv_num(episodes > 0 ? return_sum / episodes : std::nan("")) << ','
        << episodes << ',' << seeds_present << '\n';
  }
}

// Pooled mean episode return over a window of batches [first, last).
inline double pooled_return(const LearningResult& result, std::size_t first,
                            std::size_t last) {
  double sum = 0.0;
  int episodes = 0;
  for (const auto& run : result.runs) {
    for (std::size_t b = first; b < std::min(last, run.rows.size()); ++b) {
      sum += run.rows[b].mean_return * run.rows[b].episodes;
      episodes += run.rows[b].episodes;
    }
  }
  return episodes > 0 ? sum / episodes : std::nan("");
}

inline std::size_t max_batches(const LearningResult& result) {
  std::size_t batches = 0;
  for (const auto& run : result.runs)
    batches = std::max(batches, run.rows.size());
  return batches;
}

}  // namespace arpex
