// Acceptance suite: runs every stated criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "aghmm/cfb.hpp"
#include "aghmm/eval.hpp"
#include "aghmm/experiment.hpp"
#include "aghmm/hmm_tree.hpp"
#include "aghmm/learning.hpp"
#include "aghmm/model.hpp"
#include "aghmm/synth.hpp"
#include "aghmm/tree.hpp"
#include "oracles.hpp"

using namespace aghmm;

namespace {

struct CriterionResult {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct Registry {
  std::vector<EmTrace> traces;
  // Worst constraint violations over every collected fixed point.
  double worst_obs = 0.0;
  double worst_consistency = 0.0;
  double worst_normalization = 0.0;
  int fixed_points = 0;

  void record_cfb(const MarginalSet& marg, const std::vector<Vec>& hist) {
    ++fixed_points;
    const int T = marg.horizon();
    for (int t = 0; t < T; ++t) {
      worst_normalization =
          std::max(worst_normalization, std::abs(sum(marg.node[t]) - 1.0));
      const Mat& o = marg.obs[t];
      worst_normalization = std::max(worst_normalization, std::abs(sum(o) - 1.0));
      for (int col = 0; col < o.cols; ++col) {
        double s = 0.0;
        for (int x = 0; x < o.rows; ++x) s += o(x, col);
        worst_obs = std::max(worst_obs, std::abs(s - hist[t][col]));
      }
      for (int x = 0; x < o.rows; ++x) {
        double s = 0.0;
        for (int col = 0; col < o.cols; ++col) s += o(x, col);
        worst_consistency = std::max(worst_consistency, std::abs(s - marg.node[t][x]));
      }
    }
    for (int t = 0; t + 1 < T; ++t) {
      const Mat& e = marg.edge[t];
      worst_normalization = std::max(worst_normalization, std::abs(sum(e) - 1.0));
      for (int x = 0; x < e.rows; ++x) {
        double s = 0.0;
        for (int y = 0; y < e.cols; ++y) s += e(x, y);
        worst_consistency = std::max(worst_consistency, std::abs(s - marg.node[t][x]));
      }
      for (int y = 0; y < e.cols; ++y) {
        double s = 0.0;
        for (int x = 0; x < e.rows; ++x) s += e(x, y);
        worst_consistency =
            std::max(worst_consistency, std::abs(s - marg.node[t + 1][y]));
      }
    }
  }

  void record_sbp(const TreeModel& model, const TreeMarginals& marg) {
    ++fixed_points;
    std::vector<int> obs_index(model.num_nodes(), -1);
    for (size_t k = 0; k < model.observed.size(); ++k)
      obs_index[model.observed[k]] = int(k);
    for (int u = 0; u < model.num_nodes(); ++u) {
      worst_normalization =
          std::max(worst_normalization, std::abs(sum(marg.node[u]) - 1.0));
      if (obs_index[u] >= 0)
        worst_obs = std::max(
            worst_obs, max_abs_diff(marg.node[u], model.obs_hist[obs_index[u]]));
    }
    for (size_t e = 0; e < model.edges.size(); ++e) {
      const Mat& table = marg.edge[e];
      worst_normalization = std::max(worst_normalization, std::abs(sum(table) - 1.0));
      const auto& edge = model.edges[e];
      for (int xi = 0; xi < table.rows; ++xi) {
        double s = 0.0;
        for (int xj = 0; xj < table.cols; ++xj) s += table(xi, xj);
        worst_consistency =
            std::max(worst_consistency, std::abs(s - marg.node[edge.i][xi]));
      }
      for (int xj = 0; xj < table.cols; ++xj) {
        double s = 0.0;
        for (int xi = 0; xi < table.rows; ++xi) s += table(xi, xj);
        worst_consistency =
            std::max(worst_consistency, std::abs(s - marg.node[edge.j][xj]));
      }
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// --- criterion 1: Baum-Welch reduction at M=1 ------------------------------
CriterionResult criterion_baum_welch_reduction(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 3;      // 2..4
    const int T = 3 + trial % 4;      // 3..6
    ExperimentSpec spec;
    spec.d = d;
    spec.T = T;
    spec.N = 1;
    spec.M = 1;
    spec.seed = 1000 + trial;
    HmmParams truth = gen_ground_truth(spec);
    TrajectorySet traj = sample_trajectories(truth, 1, T, 2000 + trial);
    AggregateSequence seq = aggregate(traj, 1).front();
    HmmParams init = random_init(d, T, EmissionSpec::discrete(d), 3000 + trial);

    std::vector<HmmParams> em_iters, bw_iters;
    EmOptions opts;
    opts.max_iters = 20;
    opts.tol = -1.0;
    opts.observer = [&](int, const HmmParams& p) { em_iters.push_back(p); };
    auto [em_final, em_trace] = em_fit_discrete(seq, init, opts);
    opts.observer = [&](int, const HmmParams& p) { bw_iters.push_back(p); };
    auto [bw_final, bw_trace] = baum_welch_reference(traj, init, opts);
    reg.traces.push_back(em_trace);
    reg.traces.push_back(bw_trace);

    for (size_t i = 0; i < em_iters.size(); ++i) {
      double gap = max_abs_diff(em_iters[i].pi, bw_iters[i].pi);
      gap = std::max(gap, max_abs_diff(em_iters[i].trans, bw_iters[i].trans));
      gap = std::max(gap,
                     max_abs_diff(em_iters[i].discrete().B, bw_iters[i].discrete().B));
      worst = std::max(worst, gap);
    }
  }
  return {1, worst <= 1e-10,
          "Baum-Welch reduction at M=1: max per-iteration deviation " + fmt(worst) +
              " (tol 1e-10, 20 models x 20 iters)",
          seconds_since(t0)};
}

// --- criterion 2: SBP equals exact conditionals at delta observations ------
CriterionResult criterion_delta_exactness(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACCE01);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 3, T = 4;
    HmmParams p = random_init(d, T, EmissionSpec::discrete(d), 4000 + trial);
    std::vector<int> path(T);
    for (int& o : path) o = int(rng.uniform() * d);
    AggregateSequence seq;
    seq.population = 1;
    seq.hist.assign(T, Vec(d, 0.0));
    for (int t = 0; t < T; ++t) seq.hist[t][path[t]] = 1.0;

    oracle::HmmEnumeration ref = oracle::enumerate_hmm(p, path);
    CfbResult cfb = cfb_discrete(p, seq, 1e-11, 2000);
    reg.record_cfb(cfb.marginals, seq.hist);
    TreeModel tree = hmm_tree_discrete(p, seq);
    SbpResult sbp = run_sbp(tree, 1e-11, 2000);
    reg.record_sbp(tree, sbp.marginals);

    for (int t = 0; t < T; ++t) {
      worst = std::max(worst, max_abs_diff(cfb.marginals.node[t], ref.node[t]));
      worst = std::max(worst, max_abs_diff(sbp.marginals.node[t], ref.node[t]));
    }
  }
  return {2, worst <= 1e-8,
          "delta-observation exactness: max marginal deviation " + fmt(worst) +
              " from enumeration (tol 1e-8, 50 models)",
          seconds_since(t0)};
}

// --- criterion 3 battery: aggregate fixed points ----------------------------
void constraint_battery(Registry& reg) {
  Rng rng(0xACCE03);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 3;
    const int s = 2 + (trial + 1) % 3;
    const int T = 2 + trial % 5;
    const int M = trial % 2 == 0 ? 5 : 50;
    HmmParams p = random_init(d, T, EmissionSpec::discrete(s), 5000 + trial);
    std::vector<std::vector<int>> counts(T, std::vector<int>(s, 0));
    for (int t = 0; t < T; ++t)
      for (int m = 0; m < M; ++m) ++counts[t][int(rng.uniform() * s)];
    AggregateSequence seq = AggregateSequence::from_counts(M, counts);

    CfbResult cfb = cfb_discrete(p, seq, 1e-11, 5000);
    reg.record_cfb(cfb.marginals, normalized_hist(seq, s));
    TreeModel tree = hmm_tree_discrete(p, seq);
    SbpResult sbp = run_sbp(tree, 1e-11, 5000);
    reg.record_sbp(tree, sbp.marginals);
  }
}

CriterionResult criterion_constraints(const Registry& reg, double seconds) {
  bool pass = reg.worst_obs <= 1e-12 && reg.worst_consistency <= 1e-8 &&
              reg.worst_normalization <= 1e-12;
  return {3, pass,
          "constraint satisfaction over " + std::to_string(reg.fixed_points) +
              " fixed points: observation " + fmt(reg.worst_obs) +
              " (tol 1e-12), consistency " + fmt(reg.worst_consistency) +
              " (tol 1e-8), normalization " + fmt(reg.worst_normalization) +
              " (tol 1e-12)",
          seconds};
}

CriterionResult criterion_monotonicity(const Registry& reg, double seconds) {
  double worst_drop = 0.0;
  int checked = 0;
  for (const EmTrace& trace : reg.traces) {
    for (size_t i = 1; i < trace.entries.size(); ++i) {
      worst_drop = std::max(worst_drop, trace.entries[i - 1].surrogate -
                                            trace.entries[i].surrogate);
      ++checked;
    }
  }
  return {4, worst_drop <= 1e-9,
          "surrogate monotonicity over " + std::to_string(reg.traces.size()) +
              " EM runs (" + std::to_string(checked) + " steps): worst decrease " +
              fmt(worst_drop) + " (tol 1e-9)",
          seconds};
}

// --- criterion 5: M-step stationarity ---------------------------------------
CriterionResult criterion_stationarity() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(0xACCE05);
  const double h = 1e-5;
  double worst = 0.0;

  // Discrete marginal sets at the closed-form update.
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 2 + trial % 2, s = 2 + trial % 3, T = 3 + trial % 3;
    MarginalSet marg = oracle::random_consistent_marginals(d, s, T, rng);
    AggregateSequence seq;
    seq.population = 1;
    for (const Mat& o : marg.obs) {
      Vec y(o.cols, 0.0);
      for (int x = 0; x < o.rows; ++x)
        for (int j = 0; j < o.cols; ++j) y[j] += o(x, j);
      seq.hist.push_back(std::move(y));
    }
    HmmParams prev = random_init(d, T, EmissionSpec::discrete(s), 6000 + trial);
    HmmParams star = m_step_discrete(marg, prev);

    auto objective = [&](const HmmParams& q) {
      return discrete_neg_bethe(q, seq, marg);
    };
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (i == j) continue;
        double g = oracle::central_diff(
            [&](double eps) {
              HmmParams q = star;
              q.pi[i] += eps;
              q.pi[j] -= eps;
              return objective(q);
            },
            h);
        worst = std::max(worst, std::abs(g));
      }
    for (int x = 0; x < d; ++x)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          if (i == j) continue;
          double g = oracle::central_diff(
              [&](double eps) {
                HmmParams q = star;
                q.trans(x, i) += eps;
                q.trans(x, j) -= eps;
                return objective(q);
              },
              h);
          worst = std::max(worst, std::abs(g));
        }
    for (int x = 0; x < d; ++x)
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
          if (i == j) continue;
          double g = oracle::central_diff(
              [&](double eps) {
                HmmParams q = star;
                q.discrete().B(x, i) += eps;
                q.discrete().B(x, j) -= eps;
                return objective(q);
              },
              h);
          worst = std::max(worst, std::abs(g));
        }
  }

  // Gaussian marginal sets at the weighted-moment update.
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 2, T = 3, M = 3 + trial;
    oracle::GaussianMarginals gm = oracle::random_gaussian_marginals(d, T, M, rng);
    TrajectorySet block;
    block.kind = TrajectorySet::Kind::Continuous;
    block.obs_real = gm.obs;

    HmmParams star;
    star.num_states = d;
    star.horizon = T;
    star.pi = gm.marg.node[0];
    star.trans = Mat(d, d);
    for (int x = 0; x < d; ++x) {
      Vec num(d, 0.0);
      double den = 0.0;
      for (int t = 0; t + 1 < T; ++t) {
        den += gm.marg.node[t][x];
        for (int y = 0; y < d; ++y) num[y] += gm.marg.edge[t](x, y);
      }
      for (int y = 0; y < d; ++y) star.trans(x, y) = num[y] / den;
    }
    GaussianEmission em;
    em.dim = 1;
    em.means.assign(d, Vec{0.0});
    em.covs.assign(d, Mat::identity(1));
    for (int x = 0; x < d; ++x) {
      double wsum = 0.0, osum = 0.0;
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m) {
          double w = gm.marg.sample_weight[t](x, m);
          wsum += w;
          osum += w * gm.obs[m][t][0];
        }
      double mu = osum / wsum;
      double sq = 0.0;
      for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m)
          sq += gm.marg.sample_weight[t](x, m) * (gm.obs[m][t][0] - mu) *
                (gm.obs[m][t][0] - mu);
      em.means[x][0] = mu;
      em.covs[x](0, 0) = sq / wsum;  // raw weighted scatter, no ridge
    }
    star.emission = std::move(em);

    auto objective = [&](const HmmParams& q) {
      return gaussian_neg_bethe(q, block, gm.marg);
    };
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (i == j) continue;
        double g = oracle::central_diff(
            [&](double eps) {
              HmmParams q = star;
              q.pi[i] += eps;
              q.pi[j] -= eps;
              return objective(q);
            },
            h);
        worst = std::max(worst, std::abs(g));
      }
    for (int x = 0; x < d; ++x)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          if (i == j) continue;
          double g = oracle::central_diff(
              [&](double eps) {
                HmmParams q = star;
                q.trans(x, i) += eps;
                q.trans(x, j) -= eps;
                return objective(q);
              },
              h);
          worst = std::max(worst, std::abs(g));
        }
    for (int x = 0; x < d; ++x) {
      double g_mu = oracle::central_diff(
          [&](double eps) {
            HmmParams q = star;
            q.gaussian().means[x][0] += eps;
            return objective(q);
          },
          h);
      double g_cov = oracle::central_diff(
          [&](double eps) {
            HmmParams q = star;
            q.gaussian().covs[x](0, 0) += eps;
            return objective(q);
          },
          h);
      worst = std::max(worst, std::max(std::abs(g_mu), std::abs(g_cov)));
    }
  }

  return {5, worst <= 1e-5,
          "M-step stationarity: max |central difference| " + fmt(worst) +
              " (tol 1e-5, step 1e-5, 10 marginal sets)",
          seconds_since(t0)};
}

// --- criteria 6-8: learning-curve trends ------------------------------------
struct CurveStats {
  double mean_first = 0.0;
  double mean_final = 0.0;
};

CurveStats curve_stats(ExperimentSpec base, const std::vector<std::uint64_t>& seeds,
                       int iters, Registry& reg) {
  CurveStats stats;
  for (std::uint64_t seed : seeds) {
    ExperimentSpec spec = base;
    spec.seed = seed;
    CurveRun run = run_curve_experiment(spec, iters);
    for (const EmTrace& t : run.all_traces) reg.traces.push_back(t);
    stats.mean_first += run.curve.rows.front().delta_nll / seeds.size();
    stats.mean_final += run.curve.rows.back().delta_nll / seeds.size();
  }
  return stats;
}

CriterionResult criterion_discrete_trends(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool pass = true;
  std::string detail = "discrete trends (d=3, T=5, N=1000):";
  double prev_final = -1e300;
  for (int M : {1, 10, 100}) {
    ExperimentSpec spec;
    spec.d = 3;
    spec.T = 5;
    spec.N = 1000;
    spec.M = M;
    spec.kind = ExperimentSpec::Kind::Discrete;
    CurveStats stats = curve_stats(spec, seeds, 50, reg);
    pass = pass && stats.mean_final < stats.mean_first;
    pass = pass && stats.mean_final >= prev_final - 1e-12;
    prev_final = stats.mean_final;
    detail += " M=" + std::to_string(M) + " first " + fmt(stats.mean_first) +
              " final " + fmt(stats.mean_final) + ";";
  }
  return {6, pass, detail + " decreasing per M, final non-decreasing in M",
          seconds_since(t0)};
}

CriterionResult criterion_gaussian_trends(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool pass = true;
  std::string detail = "gaussian trends (T=5, N=1000):";
  for (int d : {5, 10}) {
    double prev_final = -1e300;
    for (int M : {1, 10, 100}) {
      ExperimentSpec spec;
      spec.d = d;
      spec.T = 5;
      spec.N = 1000;
      spec.M = M;
      spec.kind = ExperimentSpec::Kind::Gaussian;
      spec.obs_dim = 1;
      CurveStats stats = curve_stats(spec, seeds, 50, reg);
      pass = pass && stats.mean_final < stats.mean_first;
      pass = pass && stats.mean_final >= prev_final - 1e-12;
      prev_final = stats.mean_final;
      detail += " d=" + std::to_string(d) + "/M=" + std::to_string(M) + " first " +
                fmt(stats.mean_first) + " final " + fmt(stats.mean_final) + ";";
    }
  }
  return {7, pass, detail + " decreasing per (d, M), final non-decreasing in M",
          seconds_since(t0)};
}

CriterionResult criterion_data_size(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::map<int, double> final_by_n;
  for (int N : {200, 2000}) {
    ExperimentSpec spec;
    spec.d = 5;
    spec.T = 5;
    spec.N = N;
    spec.M = 10;
    spec.kind = ExperimentSpec::Kind::Gaussian;
    spec.obs_dim = 1;
    CurveStats stats = curve_stats(spec, seeds, 50, reg);
    final_by_n[N] = stats.mean_final;
  }
  bool pass = final_by_n[2000] <= final_by_n[200];
  return {8, pass,
          "data-size effect (d=5, T=5, M=10): final mean dNLL N=2000 " +
              fmt(final_by_n[2000]) + " <= N=200 " + fmt(final_by_n[200]),
          seconds_since(t0)};
}

// --- criterion 9: planted grid cycle -----------------------------------------
CriterionResult criterion_grid_flow(Registry& reg) {
  auto t0 = std::chrono::steady_clock::now();
  GridFlowConfig cfg;
  cfg.seed = 1;
  GridFlowResult res = grid_flow_smoke(cfg);
  reg.traces.push_back(res.trace);
  std::set<std::pair<int, int>> got;
  for (const auto& arc : res.arcs) got.insert({arc.from, arc.to});
  std::set<std::pair<int, int>> want{{0, 1}, {1, 3}, {3, 2}, {2, 0}};
  std::string arcs;
  for (const auto& [from, to] : got)
    arcs += " " + std::to_string(from) + "->" + std::to_string(to);
  return {9, got == want,
          "grid-flow smoke (2x2, M=20): arcs above threshold" + arcs,
          seconds_since(t0)};
}

}  // namespace

int main() {
  std::vector<CriterionResult> results;

  std::fprintf(stderr, "running criterion 1...\n");
  Registry reg;
  results.push_back(criterion_baum_welch_reduction(reg));

  std::fprintf(stderr, "running criterion 2...\n");
  results.push_back(criterion_delta_exactness(reg));

  std::fprintf(stderr, "running criterion 3 battery...\n");
  auto t3 = std::chrono::steady_clock::now();
  constraint_battery(reg);
  double battery_seconds = seconds_since(t3);

  std::fprintf(stderr, "running criterion 5...\n");
  results.push_back(criterion_stationarity());

  std::fprintf(stderr, "running criterion 6...\n");
  results.push_back(criterion_discrete_trends(reg));

  std::fprintf(stderr, "running criterion 7...\n");
  results.push_back(criterion_gaussian_trends(reg));

  std::fprintf(stderr, "running criterion 8...\n");
  results.push_back(criterion_data_size(reg));

  std::fprintf(stderr, "running criterion 9...\n");
  results.push_back(criterion_grid_flow(reg));

  // Criteria 3 and 4 summarize everything recorded above.
  results.push_back(criterion_constraints(reg, battery_seconds));
  results.push_back(criterion_monotonicity(reg, 0.0));

  std::sort(results.begin(), results.end(),
            [](const CriterionResult& a, const CriterionResult& b) {
              return a.id < b.id;
            });

  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::printf("[%s] criterion %d: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id,
                r.detail.c_str(), r.seconds);
  }
  std::printf("%s\n", all_pass ? "ALL CRITERIA PASSED" : "CRITERIA FAILED");
  return all_pass ? 0 : 1;
}
