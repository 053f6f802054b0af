// aggregate-hmm: experiment harness and inference/fitting front end for
// aggregate hidden Markov models.
//
// Exit codes: 0 success, 2 validation error, 3 convergence failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "aghmm/eval.hpp"
#include "aghmm/experiment.hpp"
#include "aghmm/json_io.hpp"
#include "aghmm/learning.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;

int cmd_validate(const std::string& model_path) {
  aghmm::HmmParams params = aghmm::params_from_json(aghmm::load_json_file(model_path));
  auto violations = aghmm::validate(params);
  if (violations.empty()) {
    std::cout << "ok\n";
    return kExitOk;
  }
  for (const auto& v : violations) std::cerr << v.field << ": " << v.message << "\n";
  return kExitValidation;
}

int cmd_infer(const std::string& model_path, const std::string& obs_path, double tol,
              int max_passes) {
  aghmm::HmmParams params = aghmm::params_from_json(aghmm::load_json_file(model_path));
  auto violations = aghmm::validate(params);
  if (!violations.empty()) {
    std::cerr << "invalid model: " << violations.front().message << "\n";
    return kExitValidation;
  }
  aghmm::MarginalSet marg;
  if (params.is_discrete()) {
    aghmm::AggregateSequence seq =
        aghmm::sequence_from_json(aghmm::load_json_file(obs_path));
    marg = aghmm::cfb_discrete(params, seq, tol, max_passes).marginals;
  } else {
    std::ifstream in(obs_path);
    if (!in) throw std::invalid_argument("cannot open " + obs_path);
    aghmm::TrajectorySet traj = aghmm::read_trajectories(in);
    marg = aghmm::cfb_continuous(params, traj, tol, max_passes).marginals;
  }
  std::cout << aghmm::to_json(marg).dump(2) << "\n";
  return kExitOk;
}

int cmd_fit(const std::string& model_path, const std::string& obs_path,
            const std::string& opts_path, const std::string& out_path) {
  aghmm::HmmParams init = aghmm::params_from_json(aghmm::load_json_file(model_path));
  auto violations = aghmm::validate(init);
  if (!violations.empty()) {
    std::cerr << "invalid initial model: " << violations.front().message << "\n";
    return kExitValidation;
  }
  aghmm::EmOptions opts;
  if (!opts_path.empty())
    opts = aghmm::options_from_json(aghmm::load_json_file(opts_path));

  aghmm::HmmParams fitted;
  aghmm::EmTrace trace;
  if (init.is_discrete()) {
    aghmm::json obs = aghmm::load_json_file(obs_path);
    std::vector<aghmm::AggregateSequence> seqs;
    if (obs.is_array())
      for (const auto& j : obs) seqs.push_back(aghmm::sequence_from_json(j));
    else
      seqs.push_back(aghmm::sequence_from_json(obs));
    std::tie(fitted, trace) = aghmm::em_fit_ensemble(seqs, init, opts);
  } else {
    std::ifstream in(obs_path);
    if (!in) throw std::invalid_argument("cannot open " + obs_path);
    aghmm::TrajectorySet traj = aghmm::read_trajectories(in);
    std::tie(fitted, trace) = aghmm::em_fit_gaussian(traj, init, opts);
  }

  for (const auto& e : trace.entries)
    std::cerr << "iter " << e.iter << " surrogate " << e.surrogate << " residual "
              << e.e_residual << (e.row_fallback ? " [row-fallback]" : "") << "\n";
  std::string dump = aghmm::to_json(fitted).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << dump;
  } else {
    std::ofstream out(out_path);
    out << dump;
  }
  return kExitOk;
}

int cmd_run(const std::string& config_path, std::string out_dir, int jobs,
            std::uint64_t seed_offset) {
  aghmm::RunConfig config =
      aghmm::run_config_from_json(aghmm::load_json_file(config_path));
  if (out_dir.empty()) out_dir = config.out;
  aghmm::ExperimentReport report =
      aghmm::run_experiment(config, out_dir, jobs, seed_offset);
  for (const auto& r : report.runs)
    std::cerr << r.tag << ": " << (r.error.empty() ? "ok" : r.error) << " ("
              << r.wall_ms << " ms)\n";
  std::cout << report.manifest_path << "\n";
  if (report.failures > 0) {
    std::cerr << report.failures << " run(s) failed\n";
    return report.exit_code();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregate HMM learning and inference"};
  app.require_subcommand(1);

  std::string model_path, obs_path, opts_path, out_path, config_path, out_dir;
  double tol = 1e-9;
  int max_passes = 500;
  int jobs = 1;
  std::uint64_t seed_offset = 0;

  auto* validate = app.add_subcommand("validate", "check a model file's invariants");
  validate->add_option("model", model_path, "model JSON file")->required();

  auto* infer = app.add_subcommand("infer", "marginals for one observation sequence");
  infer->add_option("--model", model_path)->required();
  infer->add_option("--obs", obs_path,
                    "aggregate sequence JSON (discrete) or trajectory JSONL "
                    "(gaussian)")
      ->required();
  infer->add_option("--tol", tol);
  infer->add_option("--max-passes", max_passes);

  auto* fit = app.add_subcommand("fit", "EM fit from an initial model");
  fit->add_option("--model", model_path, "initial model JSON")->required();
  fit->add_option("--obs", obs_path,
                  "aggregate sequence JSON, array of sequences, or trajectory JSONL")
      ->required();
  fit->add_option("--opts", opts_path, "options JSON");
  fit->add_option("--out", out_path, "write fitted model here instead of stdout");

  auto* run = app.add_subcommand("run", "run a config-driven experiment grid");
  run->add_option("--config", config_path)->required();
  run->add_option("--out", out_dir, "output directory (overrides config)");
  run->add_option("--jobs", jobs, "worker pool size");
  run->add_option("--seed-offset", seed_offset, "added to every config seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(model_path);
    if (*infer) return cmd_infer(model_path, obs_path, tol, max_passes);
    if (*fit) return cmd_fit(model_path, obs_path, opts_path, out_path);
    if (*run) return cmd_run(config_path, out_dir, jobs, seed_offset);
  } catch (const aghmm::ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const aghmm::json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
