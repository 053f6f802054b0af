#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "aghmm/eval.hpp"
#include "aghmm/json_io.hpp"
#include "aghmm/learning.hpp"
#include "aghmm/model.hpp"
#include "aghmm/synth.hpp"

#ifndef AGHMM_BUILD_ID
#define AGHMM_BUILD_ID "unknown"
#endif

namespace aghmm {

/// Planted-structure smoke experiment on a w x h grid walk: population
/// flows along the clockwise perimeter cycle, observed through an optional
/// neighbor-misclassification noise, and transitions are re-estimated from
/// one aggregate sequence with emissions frozen.
struct GridFlowConfig {
  int width = 2;
  int height = 2;
  int horizon = 4;        // snapshots T
  int population = 20;    // M
  double noise = 0.0;     // probability mass scattered to 8-neighbors
  double threshold = 3.0; // pooled expected-count cutoff for reported arcs
  std::uint64_t seed = 0;
  EmOptions em = default_em();

  // The planted optimum is a deterministic walk on the simplex boundary;
  // EM keeps sharpening toward it forever while inference conditioning
  // degrades. Structure is recovered within ~10 sweeps; default stops at 20.
  static EmOptions default_em() {
    EmOptions o;
    o.max_iters = 20;
    return o;
  }
};

inline std::vector<Violation> validate(const GridFlowConfig& c) {
  std::vector<Violation> v;
  if (c.width < 1 || c.height < 1) v.push_back({"grid", "grid must be at least 1x1"});
  if (c.width * c.height < 2) v.push_back({"grid", "grid needs at least two cells"});
  if (c.horizon < 2) v.push_back({"horizon", "need at least two snapshots"});
  if (c.population < 1)
    v.push_back({"population", "population must be >= 1, got " +
                                   std::to_string(c.population)});
  if (c.noise < 0.0 || c.noise >= 1.0)
    v.push_back({"noise", "noise must lie in [0, 1)"});
  return v;
}

struct GridFlowResult {
  HmmParams truth;
  HmmParams learned;
  EmTrace trace;
  std::vector<Mat> flow;  // per-step expected counts M * n_{t,t+1}
  struct Arc {
    int from = 0;
    int to = 0;
    double total = 0.0;  // pooled expected count over all steps
  };
  std::vector<Arc> arcs;  // pooled flows above threshold, by (from, to)
};

namespace detail {

// Clockwise perimeter ring of a w x h grid, as cell indices r*w + c.
inline std::vector<int> perimeter_ring(int w, int h) {
  std::vector<int> ring;
  for (int c = 0; c < w; ++c) ring.push_back(c);
  for (int r = 1; r < h; ++r) ring.push_back(r * w + (w - 1));
  if (h > 1)
    for (int c = w - 2; c >= 0; --c) ring.push_back((h - 1) * w + c);
  if (w > 1)
    for (int r = h - 2; r >= 1; --r) ring.push_back(r * w);
  return ring;
}

inline std::vector<int> neighbors8(int cell, int w, int h) {
  std::vector<int> out;
  int r = cell / w, c = cell % w;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      int rr = r + dr, cc = c + dc;
      if (rr >= 0 && rr < h && cc >= 0 && cc < w) out.push_back(rr * w + cc);
    }
  return out;
}

inline std::vector<int> neighbors4(int cell, int w, int h) {
  std::vector<int> out;
  int r = cell / w, c = cell % w;
  if (c + 1 < w) out.push_back(r * w + c + 1);
  if (c > 0) out.push_back(r * w + c - 1);
  if (r + 1 < h) out.push_back((r + 1) * w + c);
  if (r > 0) out.push_back((r - 1) * w + c);
  return out;
}

}  // namespace detail

inline GridFlowResult grid_flow_smoke(const GridFlowConfig& cfg) {
  auto violations = validate(cfg);
  if (!violations.empty())
    throw std::invalid_argument("grid_flow_smoke: " + violations.front().message);

  const int w = cfg.width, h = cfg.height;
  const int cells = w * h;

  // Ground truth: graded starting masses, deterministic clockwise walk on
  // the perimeter (interior cells hold still), identity-plus-noise sensor.
  GridFlowResult res;
  HmmParams& truth = res.truth;
  truth.num_states = cells;
  truth.horizon = cfg.horizon;
  truth.pi.assign(cells, 0.0);
  for (int i = 0; i < cells; ++i) truth.pi[i] = double(cells - i);
  normalize(truth.pi);
  truth.trans = Mat(cells, cells, 0.0);
  std::vector<int> ring = detail::perimeter_ring(w, h);
  std::vector<int> succ(cells);
  for (int i = 0; i < cells; ++i) succ[i] = i;
  for (size_t k = 0; k < ring.size(); ++k) succ[ring[k]] = ring[(k + 1) % ring.size()];
  for (int i = 0; i < cells; ++i) truth.trans(i, succ[i]) = 1.0;
  DiscreteEmission sensor;
  sensor.num_symbols = cells;
  sensor.B = Mat(cells, cells, 0.0);
  for (int i = 0; i < cells; ++i) {
    auto nb = detail::neighbors8(i, w, h);
    sensor.B(i, i) = 1.0 - cfg.noise;
    for (int n : nb) sensor.B(i, n) = cfg.noise / nb.size();
  }
  truth.emission = sensor;

  TrajectorySet traj =
      sample_trajectories(truth, cfg.population, cfg.horizon,
                          derive_seed(cfg.seed, 0xf10a));
  AggregateSequence seq = aggregate(traj, cfg.population).front();

  // Initial guess: uniform over self plus 4-neighbors, sensor known.
  HmmParams init = truth;
  init.pi.assign(cells, 1.0 / cells);
  init.trans = Mat(cells, cells, 0.0);
  for (int i = 0; i < cells; ++i) {
    auto nb = detail::neighbors4(i, w, h);
    double p = 1.0 / (1.0 + nb.size());
    init.trans(i, i) = p;
    for (int n : nb) init.trans(i, n) = p;
  }
  EmOptions opts = cfg.em;
  opts.freeze_emit = true;
  auto [learned, trace] = em_fit_discrete(seq, init, opts);
  res.learned = learned;
  res.trace = std::move(trace);

  MarginalSet marg =
      cfb_discrete(learned, seq, opts.e_tol, opts.e_max_passes).marginals;
  Mat pooled(cells, cells, 0.0);
  for (const Mat& e : marg.edge) {
    Mat f = e;
    for (double& v : f.a) v *= cfg.population;
    for (size_t i = 0; i < f.a.size(); ++i) pooled.a[i] += f.a[i];
    res.flow.push_back(std::move(f));
  }
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j)
      if (pooled(i, j) > cfg.threshold) res.arcs.push_back({i, j, pooled(i, j)});
  return res;
}

/// Config for the experiment harness: a grid of synthetic specs replicated
/// over seeds, or one grid-flow smoke setup.
struct RunConfig {
  enum class Kind { Discrete, Gaussian, GridFlowSmoke };

  Kind kind = Kind::Discrete;
  std::vector<int> d{3};
  std::vector<int> T{5};
  std::vector<int> N{1000};
  std::vector<int> M{1};
  std::vector<std::uint64_t> seeds{0};
  int obs_dim = 1;
  int curve_iters = 50;
  int restarts = 3;
  EmOptions em;
  std::string out = "runs";
  GridFlowConfig grid;
};

inline std::vector<Violation> validate(const RunConfig& c) {
  std::vector<Violation> v;
  if (c.seeds.empty()) v.push_back({"seeds", "need at least one seed"});
  if (c.kind == RunConfig::Kind::GridFlowSmoke) {
    auto gv = validate(c.grid);
    v.insert(v.end(), gv.begin(), gv.end());
    return v;
  }
  if (c.d.empty() || c.T.empty() || c.N.empty() || c.M.empty())
    v.push_back({"grid", "d, T, N and M lists must be non-empty"});
  if (c.curve_iters < 1) v.push_back({"curve_iters", "curve_iters must be >= 1"});
  for (int d : c.d)
    if (d < 1) v.push_back({"d", "d must be >= 1"});
  for (int n : c.N)
    for (int m : c.M)
      if (m < 1 || n % m != 0)
        v.push_back({"M", "M = " + std::to_string(m) + " does not divide N = " +
                              std::to_string(n)});
  return v;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  const std::string kind = j.value("kind", "discrete");
  if (kind == "discrete")
    c.kind = RunConfig::Kind::Discrete;
  else if (kind == "gaussian")
    c.kind = RunConfig::Kind::Gaussian;
  else if (kind == "grid-flow-smoke")
    c.kind = RunConfig::Kind::GridFlowSmoke;
  else
    throw std::invalid_argument("unknown experiment kind: " + kind);
  if (j.contains("d")) c.d = j["d"].get<std::vector<int>>();
  if (j.contains("T")) c.T = j["T"].get<std::vector<int>>();
  if (j.contains("N")) c.N = j["N"].get<std::vector<int>>();
  if (j.contains("M")) c.M = j["M"].get<std::vector<int>>();
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("obs_dim")) c.obs_dim = j["obs_dim"].get<int>();
  if (j.contains("curve_iters")) c.curve_iters = j["curve_iters"].get<int>();
  if (j.contains("restarts")) c.restarts = j["restarts"].get<int>();
  if (j.contains("em")) c.em = options_from_json(j["em"]);
  if (j.contains("out")) c.out = j["out"].get<std::string>();
  if (j.contains("grid")) {
    const json& g = j["grid"];
    c.grid.width = g.value("width", 2);
    c.grid.height = g.value("height", 2);
    c.grid.horizon = g.value("horizon", 4);
    c.grid.population = g.value("population", 20);
    c.grid.noise = g.value("noise", 0.0);
    c.grid.threshold = g.value("threshold", 3.0);
    if (j.contains("em")) c.grid.em = c.em;
  }
  return c;
}

inline json to_json(const RunConfig& c) {
  json j;
  j["kind"] = c.kind == RunConfig::Kind::Discrete    ? "discrete"
              : c.kind == RunConfig::Kind::Gaussian  ? "gaussian"
                                                     : "grid-flow-smoke";
  j["d"] = c.d;
  j["T"] = c.T;
  j["N"] = c.N;
  j["M"] = c.M;
  j["seeds"] = c.seeds;
  j["obs_dim"] = c.obs_dim;
  j["curve_iters"] = c.curve_iters;
  j["restarts"] = c.restarts;
  j["em"] = to_json(c.em);
  j["out"] = c.out;
  if (c.kind == RunConfig::Kind::GridFlowSmoke)
    j["grid"] = {{"width", c.grid.width},     {"height", c.grid.height},
                 {"horizon", c.grid.horizon}, {"population", c.grid.population},
                 {"noise", c.grid.noise},     {"threshold", c.grid.threshold}};
  return j;
}

/// One grid point fitted end to end: truth, train/test draws, aggregate
/// fit, and the per-iteration held-out curve.
struct CurveRun {
  ExperimentSpec spec;
  HmmParams truth;
  HmmParams learned;
  LearningCurve curve;               // curve of the selected restart
  EmTrace trace;                     // trace of the selected restart
  std::vector<EmTrace> all_traces;   // every restart, for monotonicity audits
};

/// One grid point: train on K = N/M aggregate sequences, evaluate
/// ΔNLL on N fresh test trajectories after every iteration. Each fit runs
/// exactly `curve_iters` iterations (no early stop) so curves line up
/// across seeds; of the `restarts` independent initializations, the one
/// with the best final training surrogate is reported. Test data never
/// enters the selection.
inline CurveRun run_curve_experiment(const ExperimentSpec& spec, int curve_iters) {
  CurveRun run;
  run.spec = spec;
  run.truth = gen_ground_truth(spec);
  TrajectorySet train = sample_trajectories(run.truth, spec.N, spec.T,
                                            derive_seed(spec.seed, 0x7a01));
  TrajectorySet test = sample_trajectories(run.truth, spec.N, spec.T,
                                           derive_seed(spec.seed, 0x7a02));

  run.curve.d = spec.d;
  run.curve.T = spec.T;
  run.curve.N = spec.N;
  run.curve.M = spec.M;
  run.curve.obs_size = spec.kind == ExperimentSpec::Kind::Discrete ? spec.d
                                                                   : spec.obs_dim;
  run.curve.seed = spec.seed;
  const double nll_truth = nll(run.truth, test);

  std::vector<AggregateSequence> seqs;
  std::vector<TrajectorySet> blocks;
  if (spec.kind == ExperimentSpec::Kind::Discrete)
    seqs = aggregate(train, spec.M);
  else
    blocks = partition_trajectories(train, spec.M);

  const int restarts = std::max(1, spec.restarts);
  double best_score = kNegInf;
  for (int r = 0; r < restarts; ++r) {
    HmmParams init;
    if (spec.kind == ExperimentSpec::Kind::Discrete) {
      init = random_init(spec.d, spec.T, EmissionSpec::discrete(spec.d),
                         derive_seed(spec.seed, 0x7a03 + r));
    } else {
      init = random_init(
          spec.d, spec.T,
          EmissionSpec::gaussian(spec.obs_dim, -5.0 * spec.d, 5.0 * spec.d),
          derive_seed(spec.seed, 0x7a03 + r));
      // Variances are treated as known: only the means are estimated.
      init.gaussian().covs = run.truth.gaussian().covs;
    }

    LearningCurve curve = run.curve;
    EmOptions opts = spec.em;
    opts.max_iters = curve_iters;
    opts.tol = -1.0;  // run every iteration; curves must be index-aligned
    opts.observer = [&](int iter, const HmmParams& p) {
      double nll_learned = nll(p, test);
      curve.rows.push_back({iter, nll_learned - nll_truth, nll_learned, nll_truth});
    };

    HmmParams learned;
    EmTrace trace;
    if (spec.kind == ExperimentSpec::Kind::Discrete)
      std::tie(learned, trace) = em_fit_ensemble(seqs, init, opts);
    else
      std::tie(learned, trace) = em_fit_gaussian_ensemble(blocks, init, opts);

    double score = trace.entries.back().surrogate;
    run.all_traces.push_back(trace);
    if (score > best_score) {
      best_score = score;
      run.learned = std::move(learned);
      run.trace = std::move(trace);
      run.curve = std::move(curve);
    }
  }
  return run;
}

struct RunOutcome {
  std::string tag;
  ExperimentSpec spec;
  std::string csv_path;
  std::string truth_path;
  std::string learned_path;
  double wall_ms = 0.0;
  std::string error;   // empty on success
  int error_code = 0;  // 0 ok, 2 validation, 3 convergence, 1 other
};

struct ExperimentReport {
  std::vector<RunOutcome> runs;
  int failures = 0;
  std::string manifest_path;

  // 2 if any run failed validation, else 3 if any failed to converge,
  // else 1 for other failures, else 0.
  int exit_code() const {
    int code = 0;
    for (const auto& r : runs) {
      if (r.error_code == 2) return 2;
      if (r.error_code != 0) code = r.error_code == 3 ? 3 : std::max(code, 1);
    }
    return code;
  }
};

namespace detail {

inline void atomic_write(const std::filesystem::path& target,
                         const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
  }
  fs::rename(tmp, target);
}

inline std::string spec_tag(const ExperimentSpec& s) {
  std::ostringstream os;
  os << (s.kind == ExperimentSpec::Kind::Discrete ? "discrete" : "gaussian") << "_d"
     << s.d << "_T" << s.T << "_N" << s.N << "_M" << s.M << "_seed" << s.seed;
  return os.str();
}

}  // namespace detail

/// Runs every grid point x seed of the config, writing one learning-curve
/// CSV plus truth/learned model files per run and a manifest at the end.
/// Jobs execute on a bounded worker pool; each run's RNG streams depend
/// only on its own (spec, seed), so output bytes are identical regardless
/// of the worker count. Failed runs leave a FAILED_<tag>.txt marker and
/// are reported, but do not stop the remaining jobs.
inline ExperimentReport run_experiment(const RunConfig& config,
                                       const std::string& out_dir, int jobs = 1,
                                       std::uint64_t seed_offset = 0) {
  namespace fs = std::filesystem;
  auto violations = validate(config);
  if (!violations.empty())
    throw std::invalid_argument("run_experiment: invalid config: " +
                                violations.front().message);
  fs::create_directories(out_dir);

  ExperimentReport report;

  if (config.kind == RunConfig::Kind::GridFlowSmoke) {
    for (std::uint64_t seed : config.seeds) {
      GridFlowConfig g = config.grid;
      g.seed = seed + seed_offset;
      RunOutcome outcome;
      std::ostringstream tag;
      tag << "gridflow_w" << g.width << "_h" << g.height << "_M" << g.population
          << "_seed" << g.seed;
      outcome.tag = tag.str();
      double t0 = detail::now_ms();
      try {
        GridFlowResult res = grid_flow_smoke(g);
        std::ostringstream csv;
        csv << "t,from,to,flow\n";
        char buf[64];
        for (size_t t = 0; t < res.flow.size(); ++t)
          for (int i = 0; i < res.flow[t].rows; ++i)
            for (int j = 0; j < res.flow[t].cols; ++j)
              if (res.flow[t](i, j) > g.threshold) {
                std::snprintf(buf, sizeof(buf), "%.10g", res.flow[t](i, j));
                csv << t << ',' << i << ',' << j << ',' << buf << '\n';
              }
        outcome.csv_path = (fs::path(out_dir) / (outcome.tag + "_flow.csv")).string();
        detail::atomic_write(outcome.csv_path, csv.str());
        std::ostringstream arcs;
        arcs << "from,to,total\n";
        for (const auto& arc : res.arcs) {
          std::snprintf(buf, sizeof(buf), "%.10g", arc.total);
          arcs << arc.from << ',' << arc.to << ',' << buf << '\n';
        }
        detail::atomic_write(fs::path(out_dir) / (outcome.tag + "_arcs.csv"),
                             arcs.str());
        outcome.learned_path =
            (fs::path(out_dir) / (outcome.tag + "_learned.json")).string();
        detail::atomic_write(outcome.learned_path, to_json(res.learned).dump(2) + "\n");
        outcome.truth_path =
            (fs::path(out_dir) / (outcome.tag + "_truth.json")).string();
        detail::atomic_write(outcome.truth_path, to_json(res.truth).dump(2) + "\n");
      } catch (const ConvergenceError& e) {
        outcome.error = e.what();
        outcome.error_code = 3;
      } catch (const std::invalid_argument& e) {
        outcome.error = e.what();
        outcome.error_code = 2;
      } catch (const std::exception& e) {
        outcome.error = e.what();
        outcome.error_code = 1;
      }
      if (!outcome.error.empty()) {
        detail::atomic_write(fs::path(out_dir) / ("FAILED_" + outcome.tag + ".txt"),
                             outcome.error + "\n");
        ++report.failures;
      }
      outcome.wall_ms = detail::now_ms() - t0;
      report.runs.push_back(std::move(outcome));
    }
  } else {
    std::vector<ExperimentSpec> specs;
    for (int d : config.d)
      for (int T : config.T)
        for (int N : config.N)
          for (int M : config.M)
            for (std::uint64_t seed : config.seeds) {
              ExperimentSpec s;
              s.d = d;
              s.T = T;
              s.N = N;
              s.M = M;
              s.kind = config.kind == RunConfig::Kind::Discrete
                           ? ExperimentSpec::Kind::Discrete
                           : ExperimentSpec::Kind::Gaussian;
              s.obs_dim = config.obs_dim;
              s.seed = seed + seed_offset;
              s.restarts = config.restarts;
              s.em = config.em;
              specs.push_back(s);
            }

    report.runs.resize(specs.size());
    std::atomic<size_t> next{0};
    std::atomic<int> failures{0};
    auto worker = [&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= specs.size()) return;
        RunOutcome& outcome = report.runs[i];
        outcome.spec = specs[i];
        outcome.tag = detail::spec_tag(specs[i]);
        double t0 = detail::now_ms();
        try {
          CurveRun run = run_curve_experiment(specs[i], config.curve_iters);
          std::ostringstream csv;
          write_csv(run.curve, csv);
          outcome.csv_path =
              (fs::path(out_dir) / (outcome.tag + "_curve.csv")).string();
          detail::atomic_write(outcome.csv_path, csv.str());
          outcome.truth_path =
              (fs::path(out_dir) / (outcome.tag + "_truth.json")).string();
          detail::atomic_write(outcome.truth_path, to_json(run.truth).dump(2) + "\n");
          outcome.learned_path =
              (fs::path(out_dir) / (outcome.tag + "_learned.json")).string();
          detail::atomic_write(outcome.learned_path,
                               to_json(run.learned).dump(2) + "\n");
        } catch (const ConvergenceError& e) {
          outcome.error = e.what();
          outcome.error_code = 3;
        } catch (const std::invalid_argument& e) {
          outcome.error = e.what();
          outcome.error_code = 2;
        } catch (const std::exception& e) {
          outcome.error = e.what();
          outcome.error_code = 1;
        }
        if (!outcome.error.empty()) {
          detail::atomic_write(fs::path(out_dir) / ("FAILED_" + outcome.tag + ".txt"),
                               outcome.error + "\n");
          failures.fetch_add(1);
        }
        outcome.wall_ms = detail::now_ms() - t0;
      }
    };
    int pool = std::max(1, jobs);
    std::vector<std::thread> threads;
    for (int i = 1; i < pool; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    report.failures = failures.load();
  }

  json manifest;
  manifest["config"] = to_json(config);
  manifest["build"] = AGHMM_BUILD_ID;
  manifest["runs"] = json::array();
  for (const auto& r : report.runs) {
    json jr;
    jr["tag"] = r.tag;
    jr["csv"] = r.csv_path;
    jr["truth_model"] = r.truth_path;
    jr["learned_model"] = r.learned_path;
    jr["wall_ms"] = r.wall_ms;
    jr["status"] = r.error.empty() ? "ok" : ("failed: " + r.error);
    manifest["runs"].push_back(jr);
  }
  report.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  detail::atomic_write(report.manifest_path, manifest.dump(2) + "\n");
  return report;
}

}  // namespace aghmm
