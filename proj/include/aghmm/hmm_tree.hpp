#pragma once

#include <vector>

#include "aghmm/core.hpp"
#include "aghmm/model.hpp"
#include "aghmm/tree.hpp"

namespace aghmm {

/// Expands an HMM chain with per-step observation tables into the
/// equivalent 2T-node tree: hidden node X_t has id t, observation leaf O_t
/// has id T + t. Transition edges come first (t, t+1), then emission edges
/// (t, T + t). The initial distribution is absorbed into the first edge so
/// the tree factorization matches the chain joint exactly.
///
/// emit[t] is the d x s_t table p(o_t | x_t); hist[t] the attached
/// histogram. Entries are floored so the tree passes the positivity
/// invariant even when parameters carry structural zeros; floored entries
/// only ever pair with zero marginals in the energy.
inline TreeModel hmm_tree(const Vec& pi, const Mat& trans,
                          const std::vector<const Mat*>& emit,
                          const std::vector<Vec>& hist) {
  const int T = int(emit.size());
  const int d = int(pi.size());
  TreeModel m;
  m.card.resize(2 * T);
  for (int t = 0; t < T; ++t) {
    m.card[t] = d;
    m.card[T + t] = emit[t]->cols;
  }
  for (int t = 0; t + 1 < T; ++t) {
    TreeModel::Edge e;
    e.i = t;
    e.j = t + 1;
    e.psi = trans;
    if (t == 0)
      for (int x = 0; x < d; ++x)
        for (int y = 0; y < d; ++y) e.psi(x, y) *= pi[x];
    for (double& v : e.psi.a) v = std::max(v, kMessageFloor);
    m.edges.push_back(std::move(e));
  }
  for (int t = 0; t < T; ++t) {
    TreeModel::Edge e;
    e.i = t;
    e.j = T + t;
    e.psi = *emit[t];
    if (T == 1)
      for (int x = 0; x < d; ++x)
        for (int o = 0; o < e.psi.cols; ++o) e.psi(x, o) *= pi[x];
    for (double& v : e.psi.a) v = std::max(v, kMessageFloor);
    m.edges.push_back(std::move(e));
  }
  m.observed.resize(T);
  m.obs_hist = hist;
  for (int t = 0; t < T; ++t) m.observed[t] = T + t;
  return m;
}

/// Same expansion for a discrete model observed through an aggregate
/// sequence.
inline TreeModel hmm_tree_discrete(const HmmParams& params,
                                   const AggregateSequence& obs) {
  std::vector<const Mat*> emit(obs.horizon(), &params.discrete().B);
  return hmm_tree(params.pi, params.trans, emit, obs.hist);
}

/// Lays chain marginals out in the node/edge order of hmm_tree. Discrete
/// sets use the observation couplings directly; continuous sets scale the
/// per-sample weight columns by 1/M so each leaf coupling sums to one.
inline TreeMarginals to_tree_marginals(const MarginalSet& marg,
                                       const std::vector<Vec>& hist) {
  const int T = marg.horizon();
  TreeMarginals out;
  out.node.resize(2 * T);
  for (int t = 0; t < T; ++t) {
    out.node[t] = marg.node[t];
    out.node[T + t] = hist[t];
  }
  out.edge.reserve(2 * T - 1);
  for (int t = 0; t + 1 < T; ++t) out.edge.push_back(marg.edge[t]);
  if (!marg.obs.empty()) {
    for (int t = 0; t < T; ++t) out.edge.push_back(marg.obs[t]);
  } else {
    for (int t = 0; t < T; ++t) {
      Mat w = marg.sample_weight[t];
      const double inv_m = 1.0 / w.cols;
      for (double& v : w.a) v *= inv_m;
      out.edge.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace aghmm
