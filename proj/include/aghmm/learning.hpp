#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aghmm/cfb.hpp"
#include "aghmm/core.hpp"
#include "aghmm/hmm_tree.hpp"
#include "aghmm/model.hpp"
#include "aghmm/tree.hpp"

namespace aghmm {

/// Knobs for the EM loops. `tol` / `max_iters` stop the outer loop on the
/// max-norm parameter change; `e_tol` / `e_max_passes` drive each inner
/// inference call. The inner tolerance sits well below the 1e-9 slack the
/// recorded surrogate is audited against.
struct EmOptions {
  double tol = 1e-6;
  int max_iters = 200;
  bool estimate_cov = false;
  bool freeze_pi = false;
  bool freeze_trans = false;
  bool freeze_emit = false;   // discrete B
  bool freeze_mean = false;   // Gaussian mu
  bool freeze_cov = false;    // Gaussian Sigma
  std::uint64_t seed = 0;
  double e_tol = 1e-11;
  int e_max_passes = 5000;

  /// Called after each M-step with the fresh parameters. Not part of the
  /// serialized options schema.
  std::function<void(int iter, const HmmParams&)> observer;
};

/// Per-iteration learning record. `surrogate` is -F_Bethe(n*, y | Psi) for
/// the aggregate fits and the mean path log-likelihood for the Baum-Welch
/// reference; both are non-decreasing over iterations.
struct EmTrace {
  struct Entry {
    int iter = 0;
    double surrogate = 0.0;
    std::uint64_t param_hash = 0;
    double e_residual = 0.0;
    double wall_ms = 0.0;
    bool row_fallback = false;
    bool cov_escalated = false;
  };
  std::vector<Entry> entries;
};

/// -F_Bethe(n, y | params) for one discrete aggregate sequence, evaluated
/// through the chain's tree expansion.
inline double discrete_neg_bethe(const HmmParams& params, const AggregateSequence& obs,
                                 const MarginalSet& marg) {
  std::vector<Vec> hist = normalized_hist(obs, params.discrete().num_symbols);
  std::vector<const Mat*> emit(params.horizon, &params.discrete().B);
  TreeModel tree = hmm_tree(params.pi, params.trans, emit, hist);
  return -bethe_free_energy(tree, to_tree_marginals(marg, hist));
}

/// -F_Bethe for a continuous observation block. The tree is built on
/// shift-scaled likelihood tables; the shifts are added back so the value
/// matches the energy under the true Gaussian densities.
inline double gaussian_neg_bethe(const HmmParams& params, const TrajectorySet& block,
                                 const MarginalSet& marg) {
  LikelihoodTables lik = gaussian_likelihood_tables(params, block);
  const int T = block.horizon();
  const int M = block.size();
  std::vector<const Mat*> emit;
  emit.reserve(T);
  for (const Mat& t : lik.table) emit.push_back(&t);
  std::vector<Vec> hist(T, Vec(M, 1.0 / M));
  TreeModel tree = hmm_tree(params.pi, params.trans, emit, hist);
  double shifted = bethe_free_energy(tree, to_tree_marginals(marg, hist));
  double correction = 0.0;
  for (const Vec& s : lik.shift)
    for (double v : s) correction += v / M;
  return -(shifted - correction);
}

struct MStepFlags {
  bool row_fallback = false;
  bool cov_escalated = false;
};

namespace detail {

// Pooled expected counts for the discrete M-step, summed over sequences.
struct DiscreteCounts {
  Vec pi_acc;
  Mat trans_num;
  Vec trans_den;
  Mat emit_num;
  Vec emit_den;
  int sequences = 0;

  DiscreteCounts(int d, int s)
      : pi_acc(d, 0.0),
        trans_num(d, d),
        trans_den(d, 0.0),
        emit_num(d, s),
        emit_den(d, 0.0) {}

  void add(const MarginalSet& m) {
    const int T = m.horizon();
    const int d = int(pi_acc.size());
    for (int x = 0; x < d; ++x) pi_acc[x] += m.node[0][x];
    for (int t = 0; t + 1 < T; ++t)
      for (int x = 0; x < d; ++x) {
        trans_den[x] += m.node[t][x];
        for (int y = 0; y < d; ++y) trans_num(x, y) += m.edge[t](x, y);
      }
    for (int t = 0; t < T; ++t)
      for (int x = 0; x < d; ++x) {
        emit_den[x] += m.node[t][x];
        for (int o = 0; o < emit_num.cols; ++o) emit_num(x, o) += m.obs[t](x, o);
      }
    ++sequences;
  }
};

// Ratio row with renormalization. A vanished denominator means the row
// contributes nothing to the objective; it keeps the previous iterate.
inline void ratio_row(const Mat& num, const Vec& den, int x, const Mat& prev, Mat& out,
                      MStepFlags* flags) {
  if (den[x] < kMessageFloor) {
    for (int j = 0; j < out.cols; ++j) out(x, j) = prev(x, j);
    if (flags) flags->row_fallback = true;
    return;
  }
  double s = 0.0;
  for (int j = 0; j < out.cols; ++j) {
    out(x, j) = num(x, j) / den[x];
    s += out(x, j);
  }
  if (s <= 0.0) {
    for (int j = 0; j < out.cols; ++j) out(x, j) = prev(x, j);
    if (flags) flags->row_fallback = true;
    return;
  }
  for (int j = 0; j < out.cols; ++j) out(x, j) /= s;
}

inline HmmParams m_step_from_counts(const DiscreteCounts& c, const HmmParams& prev,
                                    MStepFlags* flags) {
  HmmParams next = prev;
  next.pi = c.pi_acc;
  normalize(next.pi);
  for (int x = 0; x < prev.num_states; ++x) {
    ratio_row(c.trans_num, c.trans_den, x, prev.trans, next.trans, flags);
    ratio_row(c.emit_num, c.emit_den, x, prev.discrete().B, next.discrete().B, flags);
  }
  return next;
}

inline double param_change(const HmmParams& a, const HmmParams& b) {
  double d = max_abs_diff(a.pi, b.pi);
  d = std::max(d, max_abs_diff(a.trans, b.trans));
  if (a.is_discrete()) {
    d = std::max(d, max_abs_diff(a.discrete().B, b.discrete().B));
  } else {
    for (size_t x = 0; x < a.gaussian().means.size(); ++x) {
      d = std::max(d, max_abs_diff(a.gaussian().means[x], b.gaussian().means[x]));
      d = std::max(d, max_abs_diff(a.gaussian().covs[x], b.gaussian().covs[x]));
    }
  }
  return d;
}

inline void apply_freeze(const HmmParams& from, HmmParams& to, const EmOptions& o) {
  if (o.freeze_pi) to.pi = from.pi;
  if (o.freeze_trans) to.trans = from.trans;
  if (to.is_discrete()) {
    if (o.freeze_emit) to.discrete().B = from.discrete().B;
  } else {
    if (o.freeze_mean) to.gaussian().means = from.gaussian().means;
    if (o.freeze_cov) to.gaussian().covs = from.gaussian().covs;
  }
}

inline void require_valid_init(const HmmParams& init, const char* who) {
  auto violations = validate(init);
  if (!violations.empty())
    throw std::invalid_argument(std::string(who) + ": invalid initial model: " +
                                violations.front().message);
}

inline double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

/// Closed-form M-step for one discrete marginal set:
///   pi = n_1,  A = sum_t n_{t,t+1} / sum_t n_t,  B = sum_t n_{t,t} / sum_t n_t,
/// rows renormalized. Rows with a vanished denominator keep the previous
/// parameters and raise `row_fallback`.
inline HmmParams m_step_discrete(const MarginalSet& marg, const HmmParams& prev,
                                 MStepFlags* flags = nullptr) {
  detail::DiscreteCounts counts(prev.num_states, prev.discrete().num_symbols);
  counts.add(marg);
  return detail::m_step_from_counts(counts, prev, flags);
}

/// Approximate EM over an ensemble of aggregate sequences: per-sequence
/// collective forward-backward E-steps, pooled closed-form M-step. The
/// trace records -F_Bethe (averaged over sequences) after every M-step.
inline std::pair<HmmParams, EmTrace> em_fit_ensemble(
    const std::vector<AggregateSequence>& seqs, const HmmParams& init,
    const EmOptions& opts = {}) {
  detail::require_valid_init(init, "em_fit_ensemble");
  if (seqs.empty()) throw std::invalid_argument("em_fit_ensemble: no sequences");
  for (const auto& s : seqs)
    if (s.horizon() != init.horizon)
      throw std::invalid_argument("em_fit_ensemble: sequence horizon mismatch");

  HmmParams params = init;
  EmTrace trace;
  const int K = int(seqs.size());
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    double t0 = detail::now_ms();
    std::vector<MarginalSet> marg(K);
    double residual = 0.0;
    for (int k = 0; k < K; ++k) {
      CfbResult r;
      try {
        r = cfb_discrete(params, seqs[k], opts.e_tol, opts.e_max_passes);
      } catch (const ConvergenceError& e) {
        throw ConvergenceError("E-step failed at EM iteration " +
                                   std::to_string(iter) + ", sequence " +
                                   std::to_string(k),
                               e.residual(), e.passes());
      }
      residual = std::max(residual, r.residual);
      marg[k] = std::move(r.marginals);
    }

    detail::DiscreteCounts counts(params.num_states, params.discrete().num_symbols);
    for (const auto& m : marg) counts.add(m);
    MStepFlags flags;
    HmmParams next = detail::m_step_from_counts(counts, params, &flags);
    detail::apply_freeze(params, next, opts);

    double surrogate = 0.0;
    for (int k = 0; k < K; ++k) surrogate += discrete_neg_bethe(next, seqs[k], marg[k]);
    surrogate /= K;

    double delta = detail::param_change(params, next);
    params = std::move(next);
    trace.entries.push_back({iter, surrogate, param_hash(params), residual,
                             detail::now_ms() - t0, flags.row_fallback,
                             flags.cov_escalated});
    if (opts.observer) opts.observer(iter, params);
    if (delta <= opts.tol) break;
  }
  return {std::move(params), std::move(trace)};
}

/// Single-sequence convenience wrapper.
inline std::pair<HmmParams, EmTrace> em_fit_discrete(const AggregateSequence& obs,
                                                     const HmmParams& init,
                                                     const EmOptions& opts = {}) {
  return em_fit_ensemble(std::vector<AggregateSequence>{obs}, init, opts);
}

/// EM for Gaussian emissions over an ensemble of continuous observation
/// blocks (each block: M recorded trajectories with unknown state
/// assignments). Means follow the weighted-average update; covariances are
/// refit only when `estimate_cov` is set, with +1e-6 I regularization,
/// escalated if a factorization still fails.
inline std::pair<HmmParams, EmTrace> em_fit_gaussian_ensemble(
    const std::vector<TrajectorySet>& blocks, const HmmParams& init,
    const EmOptions& opts = {}) {
  detail::require_valid_init(init, "em_fit_gaussian_ensemble");
  if (blocks.empty()) throw std::invalid_argument("em_fit_gaussian_ensemble: no data");
  for (const auto& b : blocks)
    if (b.horizon() != init.horizon)
      throw std::invalid_argument("em_fit_gaussian_ensemble: block horizon mismatch");

  const int d = init.num_states;
  const int s = init.gaussian().dim;
  HmmParams params = init;
  EmTrace trace;
  const int K = int(blocks.size());
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    double t0 = detail::now_ms();
    std::vector<MarginalSet> marg(K);
    double residual = 0.0;
    for (int k = 0; k < K; ++k) {
      CfbResult r;
      try {
        r = cfb_continuous(params, blocks[k], opts.e_tol, opts.e_max_passes);
      } catch (const ConvergenceError& e) {
        throw ConvergenceError("E-step failed at EM iteration " +
                                   std::to_string(iter) + ", block " +
                                   std::to_string(k),
                               e.residual(), e.passes());
      }
      residual = std::max(residual, r.residual);
      marg[k] = std::move(r.marginals);
    }

    // Pooled counts: pi, transitions, and per-state weighted moments.
    Vec pi_acc(d, 0.0), trans_den(d, 0.0), weight_sum(d, 0.0);
    Mat trans_num(d, d);
    std::vector<Vec> mean_num(d, Vec(s, 0.0));
    std::vector<Mat> second(d, Mat(s, s));
    for (int k = 0; k < K; ++k) {
      const MarginalSet& m = marg[k];
      const int T = m.horizon();
      for (int x = 0; x < d; ++x) pi_acc[x] += m.node[0][x];
      for (int t = 0; t + 1 < T; ++t)
        for (int x = 0; x < d; ++x) {
          trans_den[x] += m.node[t][x];
          for (int y = 0; y < d; ++y) trans_num(x, y) += m.edge[t](x, y);
        }
      for (int t = 0; t < T; ++t) {
        const Mat& w = m.sample_weight[t];
        for (int mm = 0; mm < w.cols; ++mm) {
          const Vec& o = blocks[k].obs_real[mm][t];
          for (int x = 0; x < d; ++x) {
            double wx = w(x, mm);
            weight_sum[x] += wx;
            for (int i = 0; i < s; ++i) {
              mean_num[x][i] += wx * o[i];
              for (int j = 0; j < s; ++j) second[x](i, j) += wx * o[i] * o[j];
            }
          }
        }
      }
    }

    MStepFlags flags;
    HmmParams next = params;
    next.pi = pi_acc;
    normalize(next.pi);
    for (int x = 0; x < d; ++x)
      detail::ratio_row(trans_num, trans_den, x, params.trans, next.trans, &flags);
    for (int x = 0; x < d; ++x) {
      if (weight_sum[x] < kMessageFloor) {
        next.gaussian().means[x] = params.gaussian().means[x];
        next.gaussian().covs[x] = params.gaussian().covs[x];
        flags.row_fallback = true;
        continue;
      }
      Vec mu(s);
      for (int i = 0; i < s; ++i) mu[i] = mean_num[x][i] / weight_sum[x];
      next.gaussian().means[x] = mu;
      if (opts.estimate_cov) {
        Mat cov(s, s);
        for (int i = 0; i < s; ++i)
          for (int j = 0; j < s; ++j)
            cov(i, j) = second[x](i, j) / weight_sum[x] - mu[i] * mu[j];
        // Symmetrize and regularize before accepting.
        for (int i = 0; i < s; ++i)
          for (int j = 0; j < i; ++j) {
            double v = 0.5 * (cov(i, j) + cov(j, i));
            cov(i, j) = cov(j, i) = v;
          }
        double reg = 1e-6;
        Mat lower;
        for (;;) {
          Mat test = cov;
          for (int i = 0; i < s; ++i) test(i, i) += reg;
          if (cholesky(test, lower)) {
            cov = test;
            break;
          }
          reg *= 1000.0;
          flags.cov_escalated = true;
          if (reg > 1e12) throw std::domain_error("covariance collapse at state " +
                                                  std::to_string(x));
        }
        next.gaussian().covs[x] = cov;
      }
    }
    detail::apply_freeze(params, next, opts);

    double surrogate = 0.0;
    for (int k = 0; k < K; ++k)
      surrogate += gaussian_neg_bethe(next, blocks[k], marg[k]);
    surrogate /= K;

    double delta = detail::param_change(params, next);
    params = std::move(next);
    trace.entries.push_back({iter, surrogate, param_hash(params), residual,
                             detail::now_ms() - t0, flags.row_fallback,
                             flags.cov_escalated});
    if (opts.observer) opts.observer(iter, params);
    if (delta <= opts.tol) break;
  }
  return {std::move(params), std::move(trace)};
}

inline std::pair<HmmParams, EmTrace> em_fit_gaussian(const TrajectorySet& samples,
                                                     const HmmParams& init,
                                                     const EmOptions& opts = {}) {
  return em_fit_gaussian_ensemble(std::vector<TrajectorySet>{samples}, init, opts);
}

/// Classic scaled-forward-backward Baum-Welch over individually observed
/// discrete paths, with multi-sequence count pooling. Serves as the M=1
/// comparison reference for the aggregate fits; its trace records the mean
/// per-path log-likelihood.
inline std::pair<HmmParams, EmTrace> baum_welch_reference(const TrajectorySet& paths,
                                                          const HmmParams& init,
                                                          const EmOptions& opts = {}) {
  detail::require_valid_init(init, "baum_welch_reference");
  if (paths.kind != TrajectorySet::Kind::Discrete)
    throw std::invalid_argument("baum_welch_reference expects discrete observations");
  const int N = paths.size();
  if (N < 1) throw std::invalid_argument("baum_welch_reference: no paths");
  const int d = init.num_states;
  const int s = init.discrete().num_symbols;
  const int T = paths.horizon();
  if (T != init.horizon)
    throw std::invalid_argument("baum_welch_reference: path length mismatch");

  HmmParams params = init;
  EmTrace trace;
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    double t0 = detail::now_ms();
    const Mat& B = params.discrete().B;
    Vec pi_acc(d, 0.0), trans_den(d, 0.0), emit_den(d, 0.0);
    Mat trans_num(d, d), emit_num(d, s);
    double total_ll = 0.0;
    bool floored = false;

    for (int m = 0; m < N; ++m) {
      const auto& path = paths.obs_sym[m];
      // Scaled forward.
      Mat alpha(T, d);
      Vec scale(T, 0.0);
      for (int t = 0; t < T; ++t) {
        double c = 0.0;
        for (int x = 0; x < d; ++x) {
          double v;
          if (t == 0) {
            v = params.pi[x] * B(x, path[0]);
          } else {
            v = 0.0;
            for (int xp = 0; xp < d; ++xp) v += alpha(t - 1, xp) * params.trans(xp, x);
            v *= B(x, path[t]);
          }
          alpha(t, x) = v;
          c += v;
        }
        if (!(c > 0.0)) {
          c = kMessageFloor;
          for (int x = 0; x < d; ++x) alpha(t, x) = 1.0 / d;
          floored = true;
        } else {
          for (int x = 0; x < d; ++x) alpha(t, x) /= c;
        }
        scale[t] = c;
        total_ll += std::log(c);
      }
      // Backward with the forward scales.
      Mat beta(T, d, 0.0);
      for (int x = 0; x < d; ++x) beta(T - 1, x) = 1.0;
      for (int t = T - 2; t >= 0; --t)
        for (int x = 0; x < d; ++x) {
          double v = 0.0;
          for (int xn = 0; xn < d; ++xn)
            v += params.trans(x, xn) * B(xn, path[t + 1]) * beta(t + 1, xn);
          beta(t, x) = v / scale[t + 1];
        }
      // Posterior accumulation.
      for (int t = 0; t < T; ++t) {
        Vec g(d);
        double z = 0.0;
        for (int x = 0; x < d; ++x) {
          g[x] = alpha(t, x) * beta(t, x);
          z += g[x];
        }
        if (z > 0.0)
          for (double& v : g) v /= z;
        if (t == 0)
          for (int x = 0; x < d; ++x) pi_acc[x] += g[x];
        for (int x = 0; x < d; ++x) {
          emit_den[x] += g[x];
          emit_num(x, path[t]) += g[x];
          if (t + 1 < T) trans_den[x] += g[x];
        }
        if (t + 1 < T) {
          Mat xi(d, d);
          double zx = 0.0;
          for (int x = 0; x < d; ++x)
            for (int xn = 0; xn < d; ++xn) {
              xi(x, xn) = alpha(t, x) * params.trans(x, xn) * B(xn, path[t + 1]) *
                          beta(t + 1, xn);
              zx += xi(x, xn);
            }
          if (zx > 0.0)
            for (int x = 0; x < d; ++x)
              for (int xn = 0; xn < d; ++xn) trans_num(x, xn) += xi(x, xn) / zx;
        }
      }
    }

    MStepFlags flags;
    flags.row_fallback = floored;
    HmmParams next = params;
    next.pi = pi_acc;
    normalize(next.pi);
    for (int x = 0; x < d; ++x) {
      detail::ratio_row(trans_num, trans_den, x, params.trans, next.trans, &flags);
      detail::ratio_row(emit_num, emit_den, x, params.discrete().B,
                        next.discrete().B, &flags);
    }
    detail::apply_freeze(params, next, opts);

    double delta = detail::param_change(params, next);
    params = std::move(next);
    trace.entries.push_back({iter, total_ll / N, param_hash(params), 0.0,
                             detail::now_ms() - t0, flags.row_fallback, false});
    if (opts.observer) opts.observer(iter, params);
    if (delta <= opts.tol) break;
  }
  return {std::move(params), std::move(trace)};
}

}  // namespace aghmm
