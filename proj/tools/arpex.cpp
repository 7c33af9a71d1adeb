// arpex: stationary AR process exploration toolkit.
//
// Subcommands:
//   noise        emit a process realization as t,x
//   acf          emit the autocorrelation function as lag,rho
//   explore      random-agent time-to-target benchmark on the Square arena
//   trajectories fixed-duration exploration paths as run,t,x,y
//   learn        PPO training on Square, learning-curve CSV output

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "arpex/ar_process.hpp"
#include "arpex/bench.hpp"
#include "arpex/checkpoint.hpp"
#include "arpex/csv.hpp"
#include "arpex/trainer.hpp"

namespace {

using namespace arpex;

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::vector<std::uint64_t> seed_range(std::uint64_t base, int count) {
  std::vector<std::uint64_t> seeds(count);
  for (int i = 0; i < count; ++i) seeds[i] = base + static_cast<std::uint64_t>(i);
  return seeds;
}

std::vector<PolicySpec> parse_specs(const std::string& text) {
  std::vector<PolicySpec> specs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) specs.push_back(PolicySpec::parse(item));
  return specs;
}

std::string seed_file_name(const std::string& base, std::uint64_t seed) {
  const auto dot = base.rfind('.');
  if (dot == std::string::npos) return base + "_seed" + std::to_string(seed);
  return base.substr(0, dot) + "_seed" + std::to_string(seed) +
         base.substr(dot);
}

void cmd_noise(int p, double alpha, long steps, std::uint64_t seed,
               const std::string& out_path) {
  write_noise_csv(out_path, ArModel::binomial(p, alpha), steps, seed);
}

void cmd_acf(int p, double alpha, double rho1, bool have_alpha, bool have_rho1,
             int max_lag, const std::string& out_path) {
  if (have_alpha == have_rho1)
    throw std::runtime_error("acf: give exactly one of --alpha or --rho1");
  const double a = have_alpha ? alpha : alpha_for_rho1(p, rho1);
  write_acf_csv(out_path, ArModel::binomial(p, a), max_lag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stationary autoregressive exploration toolkit"};
  app.require_subcommand(1);

  const int default_threads =
      std::max(1u, std::thread::hardware_concurrency());

  // noise
  auto* noise = app.add_subcommand("noise", "emit a process realization");
  int noise_p = 3;
  double noise_alpha = 0.8;
  long noise_steps = 1000;
  std::uint64_t noise_seed = 42;
  std::string noise_out = "noise.csv";
  noise->add_option("--p", noise_p, "process order");
  noise->add_option("--alpha", noise_alpha, "binomial family parameter");
  noise->add_option("--steps", noise_steps, "number of steps");
  noise->add_option("--seed", noise_seed, "RNG seed");
  noise->add_option("--out", noise_out, "output CSV path");

  // acf
  auto* acf_cmd = app.add_subcommand("acf", "emit the autocorrelation function");
  int acf_p = 3;
  double acf_alpha = 0.0, acf_rho1 = 0.0;
  int acf_max_lag = 600;
  std::uint64_t acf_seed = 0;
  std::string acf_out = "acf.csv";
  auto* acf_alpha_opt = acf_cmd->add_option("--alpha", acf_alpha, "alpha");
  auto* acf_rho1_opt =
      acf_cmd->add_option("--rho1", acf_rho1, "match this lag-1 autocorrelation");
  acf_cmd->add_option("--p", acf_p, "process order");
  acf_cmd->add_option("--max-lag", acf_max_lag, "largest lag");
  acf_cmd->add_option("--seed", acf_seed, "unused; accepted for uniformity");
  acf_cmd->add_option("--out", acf_out, "output CSV path");

  // explore
  auto* explore = app.add_subcommand(
      "explore", "random-agent time-to-target benchmark");
  std::string explore_rates = "5,10,25,50,100";
  std::string explore_specs = "gaussian,arp:3:0.8,arp:3:0.9,arp:3:0.95";
  double explore_budget = 1e5;
  std::uint64_t explore_seed = 1;
  int explore_n_seeds = 3;
  int explore_threads = default_threads;
  std::string explore_out = "explore.csv";
  explore->add_option("--rates", explore_rates, "action rates in Hz");
  explore->add_option("--specs", explore_specs, "policy specs");
  explore->add_option("--budget", explore_budget,
                      "simulated seconds per (rate, spec, seed) cell");
  explore->add_option("--seed", explore_seed, "first seed");
  explore->add_option("--n-seeds", explore_n_seeds, "number of seeds");
  explore->add_option("--threads", explore_threads, "worker threads");
  explore->add_option("--out", explore_out, "output CSV path");

  // trajectories
  auto* traj = app.add_subcommand("trajectories",
                                  "fixed-duration exploration paths");
  double traj_rate = 100.0;
  std::string traj_spec = "arp:3:0.95";
  double traj_duration = 10.0;
  int traj_n = 5;
  std::uint64_t traj_seed = 7;
  std::string traj_out = "trajectories.csv";
  traj->add_option("--rate", traj_rate, "action rate in Hz");
  traj->add_option("--spec", traj_spec, "policy spec");
  traj->add_option("--duration", traj_duration, "seconds per rollout");
  traj->add_option("--n", traj_n, "number of rollouts");
  traj->add_option("--seed", traj_seed, "RNG seed");
  traj->add_option("--out", traj_out, "output CSV path");

  // learn
  auto* learn = app.add_subcommand("learn", "PPO training on Square");
  double learn_rate = 10.0;
  std::string learn_spec = "arp:3:0.8";
  double learn_sim_seconds = 50000.0;
  std::uint64_t learn_seed = 1;
  int learn_n_seeds = 5;
  int learn_threads = default_threads;
  std::string learn_out = "learn.csv";
  std::string learn_config;
  std::string learn_save;
  learn->add_option("--rate", learn_rate, "action rate in Hz");
  learn->add_option("--spec", learn_spec, "policy spec");
  learn->add_option("--sim-seconds", learn_sim_seconds,
                    "total simulated seconds per seed");
  learn->add_option("--seed", learn_seed, "first seed");
  learn->add_option("--n-seeds", learn_n_seeds, "number of seeds");
  learn->add_option("--threads", learn_threads, "worker threads");
  learn->add_option("--config", learn_config, "key-value config file");
  learn->add_option("--out", learn_out,
                    "aggregate CSV path; per-seed logs get a _seed<k> suffix");
  learn->add_option("--save", learn_save,
                    "write the first seed's final checkpoint here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (noise->parsed()) {
      cmd_noise(noise_p, noise_alpha, noise_steps, noise_seed, noise_out);
    } else if (acf_cmd->parsed()) {
      cmd_acf(acf_p, acf_alpha, acf_rho1, acf_alpha_opt->count() > 0,
              acf_rho1_opt->count() > 0, acf_max_lag, acf_out);
    } else if (explore->parsed()) {
      auto reports = run_exploration(
          parse_list(explore_rates), parse_specs(explore_specs),
          explore_budget, seed_range(explore_seed, explore_n_seeds),
          explore_threads);
      write_exploration_csv(explore_out, reports);
    } else if (traj->parsed()) {
      auto rows = run_trajectories(traj_rate, PolicySpec::parse(traj_spec),
                                   traj_duration, traj_n, traj_seed);
      write_trajectory_csv(traj_out, rows);
    } else if (learn->parsed()) {
      TrainConfig cfg;
      if (!learn_config.empty()) cfg = TrainConfig::from_file(learn_config);
      const PolicySpec spec = PolicySpec::parse(learn_spec);
      auto result =
          run_learning(learn_rate, spec, learn_sim_seconds,
                       seed_range(learn_seed, learn_n_seeds), cfg,
                       learn_threads);
      write_learning_aggregate_csv(learn_out, result);
      for (const auto& run : result.runs)
        write_learning_run_csv(seed_file_name(learn_out, run.seed), run);
      if (!learn_save.empty()) {
        const auto& first = result.runs.front();
        const TrainConfig scaled = cfg.scaled_for_rate(learn_rate);
        std::vector<int> policy_sizes{SquareEnv::kObsDim};
        policy_sizes.insert(policy_sizes.end(), scaled.hidden.begin(),
                            scaled.hidden.end());
        policy_sizes.push_back(SquareEnv::kActionDim);
        PolicyHead head = [&]() {
          Mlp mean(policy_sizes);
          if (scaled.state_dependent_std)
            return PolicyHead(std::move(mean), Mlp(policy_sizes));
          return PolicyHead(std::move(mean), SquareEnv::kActionDim);
        }();
        head.set_params(first.final_policy_params);
        std::vector<int> value_sizes{SquareEnv::kObsDim};
        value_sizes.insert(value_sizes.end(), scaled.hidden.begin(),
                           scaled.hidden.end());
        value_sizes.push_back(1);
        Mlp value_net(value_sizes);
        value_net.set_params(first.final_value_params);
        save_checkpoint(learn_save, head, value_net,
                        static_cast<std::int64_t>(first.rows.size()));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "arpex: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
