#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aghmm/cfb.hpp"
#include "aghmm/core.hpp"
#include "aghmm/model.hpp"

namespace aghmm {

/// Mean negative log-likelihood per trajectory. Zero-probability steps
/// count with the 1e-300 floor; `flagged` (when given) receives how many
/// paths hit it.
inline double nll(const HmmParams& params, const TrajectorySet& test,
                  int* flagged = nullptr) {
  const int n = test.size();
  if (n < 1) throw std::invalid_argument("nll: empty test set");
  if (flagged) *flagged = 0;
  double total = 0.0;
  for (int m = 0; m < n; ++m) {
    bool hit = false;
    double ll = params.is_discrete()
                    ? standard_forward_floored(params, test.obs_sym[m], &hit)
                    : standard_forward_floored(params, test.obs_real[m], &hit);
    if (hit && flagged) ++*flagged;
    total += ll;
  }
  return -total / n;
}

/// NLL(learned) - NLL(truth) on shared held-out trajectories.
inline double delta_nll(const HmmParams& learned, const HmmParams& truth,
                        const TrajectorySet& test) {
  return nll(learned, test) - nll(truth, test);
}

/// Per-block parameter distance: max over rows of half the L1 row
/// difference (total variation for stochastic rows).
struct ParamDistance {
  double pi = 0.0;
  double trans = 0.0;
  double emit = 0.0;  // B rows or Gaussian means

  double max() const { return std::max(pi, std::max(trans, emit)); }
};

namespace detail {

inline double half_l1(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace detail

inline ParamDistance param_distance(const HmmParams& a, const HmmParams& b) {
  if (a.num_states != b.num_states || a.is_discrete() != b.is_discrete() ||
      a.obs_size() != b.obs_size())
    throw std::invalid_argument("param_distance: shape mismatch");
  ParamDistance out;
  out.pi = detail::half_l1(a.pi, b.pi);
  for (int x = 0; x < a.num_states; ++x)
    out.trans = std::max(out.trans, detail::half_l1(a.trans.row(x), b.trans.row(x)));
  for (int x = 0; x < a.num_states; ++x) {
    if (a.is_discrete())
      out.emit = std::max(out.emit,
                          detail::half_l1(a.discrete().B.row(x), b.discrete().B.row(x)));
    else
      out.emit = std::max(out.emit,
                          detail::half_l1(a.gaussian().means[x], b.gaussian().means[x]));
  }
  return out;
}

/// Relabels hidden states: new state x takes the role of old state
/// perm[x].
inline HmmParams relabel_states(const HmmParams& p, const std::vector<int>& perm) {
  HmmParams out = p;
  for (int x = 0; x < p.num_states; ++x) {
    out.pi[x] = p.pi[perm[x]];
    for (int y = 0; y < p.num_states; ++y) out.trans(x, y) = p.trans(perm[x], perm[y]);
    if (p.is_discrete()) {
      for (int o = 0; o < p.discrete().num_symbols; ++o)
        out.discrete().B(x, o) = p.discrete().B(perm[x], o);
    } else {
      out.gaussian().means[x] = p.gaussian().means[perm[x]];
      out.gaussian().covs[x] = p.gaussian().covs[perm[x]];
    }
  }
  return out;
}

/// Aggregate likelihood is invariant to state relabeling, so recovery is
/// also reported under the best permutation (exhaustive; d <= 8).
inline ParamDistance param_distance_best_permutation(const HmmParams& a,
                                                     const HmmParams& b,
                                                     std::vector<int>* best = nullptr) {
  if (a.num_states > 8)
    throw std::invalid_argument("best-permutation distance is exhaustive; d <= 8 only");
  std::vector<int> perm(a.num_states);
  std::iota(perm.begin(), perm.end(), 0);
  ParamDistance best_dist;
  double best_val = -1.0;
  do {
    ParamDistance dist = param_distance(relabel_states(a, perm), b);
    if (best_val < 0.0 || dist.max() < best_val) {
      best_val = dist.max();
      best_dist = dist;
      if (best) *best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_dist;
}

/// Held-out ΔNLL per EM iteration, with the settings that produced it.
struct LearningCurve {
  struct Row {
    int iter = 0;
    double delta_nll = 0.0;
    double nll_learned = 0.0;
    double nll_truth = 0.0;
  };
  std::vector<Row> rows;
  int d = 0, T = 0, N = 0, M = 0;
  int obs_size = 0;
  std::uint64_t seed = 0;
};

/// CSV with one row per iteration. The trailing columns restate the
/// learned NLL per step and per step-dimension so either normalization can
/// be plotted directly.
inline void write_csv(const LearningCurve& c, std::ostream& os) {
  os << "iter,delta_nll,nll_learned,nll_truth,d,T,N,M,seed,nll_learned_per_step,"
        "nll_learned_per_dim\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : c.rows) {
    os << r.iter << ',' << num(r.delta_nll) << ',' << num(r.nll_learned) << ','
       << num(r.nll_truth) << ',' << c.d << ',' << c.T << ',' << c.N << ',' << c.M
       << ',' << c.seed << ',' << num(r.nll_learned / c.T) << ','
       << num(r.nll_learned / (double(c.T) * std::max(c.obs_size, 1))) << '\n';
  }
}

}  // namespace aghmm
