#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aghmm/core.hpp"

namespace aghmm {

/// Tree-structured pairwise model. Potentials are stored per undirected
/// edge as psi(x_i, x_j) tables; observed leaves carry normalized
/// histograms that the inferred node marginals must match.
struct TreeModel {
  struct Edge {
    int i = 0;
    int j = 0;
    Mat psi;  // card[i] x card[j], strictly positive
  };

  std::vector<int> card;
  std::vector<Edge> edges;
  std::vector<int> observed;   // node ids; each must be a leaf
  std::vector<Vec> obs_hist;   // histogram per observed node, sums to 1

  int num_nodes() const { return int(card.size()); }
};

/// Directed messages over every edge, normalized to sum 1.
struct MessageSet {
  // slot 2*e holds i->j (length card[j]); slot 2*e+1 holds j->i.
  std::vector<Vec> msg;

  Vec& at(int edge, bool from_i) { return msg[2 * size_t(edge) + (from_i ? 0 : 1)]; }
  const Vec& at(int edge, bool from_i) const {
    return msg[2 * size_t(edge) + (from_i ? 0 : 1)];
  }
};

/// Node and edge marginals over a tree, aligned with TreeModel::edges.
struct TreeMarginals {
  std::vector<Vec> node;
  std::vector<Mat> edge;
};

namespace detail {

// adjacency[u] lists (edge index, neighbor).
using Adjacency = std::vector<std::vector<std::pair<int, int>>>;

inline Adjacency build_adjacency(const TreeModel& m) {
  Adjacency adj(m.num_nodes());
  for (int e = 0; e < int(m.edges.size()); ++e) {
    adj[m.edges[e].i].push_back({e, m.edges[e].j});
    adj[m.edges[e].j].push_back({e, m.edges[e].i});
  }
  return adj;
}

inline void validate_tree(const TreeModel& m, const Adjacency& adj) {
  const int n = m.num_nodes();
  if (n == 0) throw std::invalid_argument("tree model has no nodes");
  if (int(m.edges.size()) != n - 1)
    throw std::invalid_argument("not a tree: " + std::to_string(m.edges.size()) +
                                " edges for " + std::to_string(n) + " nodes");
  for (const auto& e : m.edges) {
    if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n || e.i == e.j)
      throw std::invalid_argument("edge endpoints out of range");
    if (e.psi.rows != m.card[e.i] || e.psi.cols != m.card[e.j])
      throw std::invalid_argument("potential table shape mismatch");
    for (double v : e.psi.a)
      if (!(v > 0.0)) throw std::invalid_argument("potential entries must be > 0");
  }
  // Connectivity check; with n-1 edges this also rules out cycles.
  std::vector<int> stack{0}, seen(n, 0);
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (auto [e, v] : adj[u]) {
      (void)e;
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  if (count != n) throw std::invalid_argument("not a tree: graph is disconnected");
  if (m.observed.size() != m.obs_hist.size())
    throw std::invalid_argument("observed node list and histogram list differ in size");
  for (size_t k = 0; k < m.observed.size(); ++k) {
    int i = m.observed[k];
    if (i < 0 || i >= n) throw std::invalid_argument("observed node out of range");
    if (adj[i].size() != 1 && n > 1)
      throw std::invalid_argument("observed node " + std::to_string(i) +
                                  " is not a leaf");
    if (int(m.obs_hist[k].size()) != m.card[i])
      throw std::invalid_argument("histogram length mismatch at node " +
                                  std::to_string(i));
  }
}

// BFS order from a root; parent_edge[u] is the edge towards the root.
struct SweepOrder {
  std::vector<int> order;
  std::vector<int> parent;
  std::vector<int> parent_edge;
};

inline SweepOrder bfs_order(const TreeModel& m, const Adjacency& adj, int root) {
  SweepOrder s;
  const int n = m.num_nodes();
  s.parent.assign(n, -1);
  s.parent_edge.assign(n, -1);
  s.order.reserve(n);
  std::vector<int> seen(n, 0);
  std::vector<int> queue{root};
  seen[root] = 1;
  for (size_t q = 0; q < queue.size(); ++q) {
    int u = queue[q];
    s.order.push_back(u);
    for (auto [e, v] : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        s.parent[v] = u;
        s.parent_edge[v] = e;
        queue.push_back(v);
      }
    }
  }
  return s;
}

inline const Vec& message_into(const MessageSet& msgs, const TreeModel& m, int e,
                               int target) {
  return msgs.at(e, m.edges[e].j == target);
}

// Product of incoming messages at u excluding the one from `skip` (-1 keeps all).
inline Vec incoming_product(const MessageSet& msgs, const TreeModel& m,
                            const Adjacency& adj, int u, int skip) {
  Vec prod(m.card[u], 1.0);
  for (auto [e, v] : adj[u]) {
    if (v == skip) continue;
    const Vec& in = message_into(msgs, m, e, u);
    for (int x = 0; x < m.card[u]; ++x) prod[x] *= in[x];
  }
  return prod;
}

// Standard BP update for the directed message u -> v; returns the change.
inline double update_standard(MessageSet& msgs, const TreeModel& m,
                              const Adjacency& adj, int e, int u, int v) {
  const auto& edge = m.edges[e];
  Vec prod = incoming_product(msgs, m, adj, u, v);
  Vec next(m.card[v], 0.0);
  if (edge.i == u) {
    for (int xu = 0; xu < m.card[u]; ++xu)
      for (int xv = 0; xv < m.card[v]; ++xv) next[xv] += edge.psi(xu, xv) * prod[xu];
  } else {
    for (int xu = 0; xu < m.card[u]; ++xu)
      for (int xv = 0; xv < m.card[v]; ++xv) next[xv] += edge.psi(xv, xu) * prod[xu];
  }
  floor_normalize(next);
  Vec& slot = msgs.at(e, edge.i == u);
  double delta = max_abs_diff(slot, next);
  slot = std::move(next);
  return delta;
}

// Sinkhorn scaling update at an observed leaf: the outgoing message is
// rebuilt from the histogram divided by the incoming message, which pins
// the leaf marginal to y exactly at the fixed point.
inline double update_scaling(MessageSet& msgs, const TreeModel& m, int e, int leaf,
                             const Vec& hist) {
  const auto& edge = m.edges[e];
  const int other = edge.i == leaf ? edge.j : edge.i;
  const Vec& back = msgs.at(e, edge.i == other);  // message other -> leaf
  Vec next(m.card[other], 0.0);
  if (edge.i == leaf) {
    for (int xl = 0; xl < m.card[leaf]; ++xl) {
      double w = hist[xl] / back[xl];
      for (int xo = 0; xo < m.card[other]; ++xo) next[xo] += edge.psi(xl, xo) * w;
    }
  } else {
    for (int xl = 0; xl < m.card[leaf]; ++xl) {
      double w = hist[xl] / back[xl];
      for (int xo = 0; xo < m.card[other]; ++xo) next[xo] += edge.psi(xo, xl) * w;
    }
  }
  floor_normalize(next);
  Vec& slot = msgs.at(e, edge.i == leaf);
  double delta = max_abs_diff(slot, next);
  slot = std::move(next);
  return delta;
}

// One leaf-to-root plus root-to-leaf sweep of standard updates. Messages
// owned by scaling steps (observed leaf -> neighbor) are skipped when
// skip_observed is set.
inline double full_sweep(MessageSet& msgs, const TreeModel& m, const Adjacency& adj,
                         const SweepOrder& sweep, const std::vector<char>& is_observed,
                         bool skip_observed) {
  double delta = 0.0;
  for (auto it = sweep.order.rbegin(); it != sweep.order.rend(); ++it) {
    int u = *it;
    if (sweep.parent[u] < 0) continue;
    if (skip_observed && is_observed[u]) continue;
    delta = std::max(
        delta, update_standard(msgs, m, adj, sweep.parent_edge[u], u, sweep.parent[u]));
  }
  for (int u : sweep.order) {
    if (sweep.parent[u] < 0) continue;
    if (skip_observed && is_observed[sweep.parent[u]]) continue;
    delta = std::max(
        delta, update_standard(msgs, m, adj, sweep.parent_edge[u], sweep.parent[u], u));
  }
  return delta;
}

inline MessageSet uniform_messages(const TreeModel& m) {
  MessageSet msgs;
  msgs.msg.resize(2 * m.edges.size());
  for (size_t e = 0; e < m.edges.size(); ++e) {
    msgs.msg[2 * e] = Vec(m.card[m.edges[e].j], 1.0 / m.card[m.edges[e].j]);
    msgs.msg[2 * e + 1] = Vec(m.card[m.edges[e].i], 1.0 / m.card[m.edges[e].i]);
  }
  return msgs;
}

// Directed path hops (edge, from, to) between two nodes.
inline std::vector<std::array<int, 3>> directed_path(const TreeModel& m,
                                                     const Adjacency& adj, int from,
                                                     int to) {
  SweepOrder s = bfs_order(m, adj, from);
  std::vector<std::array<int, 3>> rev;
  for (int u = to; u != from; u = s.parent[u])
    rev.push_back({s.parent_edge[u], s.parent[u], u});
  std::reverse(rev.begin(), rev.end());
  return rev;
}

}  // namespace detail

struct BpResult {
  MessageSet messages;
  std::vector<Vec> node;  // exact node marginals
  int sweeps = 0;
};

/// Standard belief propagation on a tree without observations. Exact after
/// one leaf-to-root-to-leaf sweep; extra sweeps only confirm the fixed point.
inline BpResult run_bp(const TreeModel& model, int max_sweeps = 8) {
  detail::Adjacency adj = detail::build_adjacency(model);
  detail::validate_tree(model, adj);
  if (!model.observed.empty())
    throw std::invalid_argument("run_bp expects a model without observations");

  detail::SweepOrder sweep = detail::bfs_order(model, adj, 0);
  std::vector<char> none(model.num_nodes(), 0);
  BpResult res;
  res.messages = detail::uniform_messages(model);
  for (res.sweeps = 1; res.sweeps <= max_sweeps; ++res.sweeps) {
    double delta = detail::full_sweep(res.messages, model, adj, sweep, none, false);
    if (delta <= 1e-14) break;
  }
  res.node.resize(model.num_nodes());
  for (int u = 0; u < model.num_nodes(); ++u) {
    Vec b = detail::incoming_product(res.messages, model, adj, u, -1);
    normalize(b);
    res.node[u] = std::move(b);
  }
  return res;
}

struct SbpResult {
  TreeMarginals marginals;
  MessageSet messages;
  int passes = 0;
  double residual = 0.0;
};

namespace detail {

// Closing formulas of the SBP loop. Node marginals of observed leaves are
// the histograms themselves; edge tables touching an observed leaf are
// built column-by-column so the observation constraint holds exactly.
inline TreeMarginals extract_marginals(const MessageSet& msgs, const TreeModel& m,
                                       const Adjacency& adj,
                                       const std::vector<int>& obs_index) {
  TreeMarginals out;
  out.node.resize(m.num_nodes());
  for (int u = 0; u < m.num_nodes(); ++u) {
    if (obs_index[u] >= 0) {
      out.node[u] = m.obs_hist[obs_index[u]];
    } else {
      Vec b = incoming_product(msgs, m, adj, u, -1);
      normalize(b);
      out.node[u] = std::move(b);
    }
  }
  out.edge.resize(m.edges.size());
  for (int e = 0; e < int(m.edges.size()); ++e) {
    const auto& edge = m.edges[e];
    const bool oi = obs_index[edge.i] >= 0;
    const bool oj = obs_index[edge.j] >= 0;
    Mat table(m.card[edge.i], m.card[edge.j]);
    if (!oi && !oj) {
      Vec fi = incoming_product(msgs, m, adj, edge.i, edge.j);
      Vec fj = incoming_product(msgs, m, adj, edge.j, edge.i);
      for (int xi = 0; xi < table.rows; ++xi)
        for (int xj = 0; xj < table.cols; ++xj)
          table(xi, xj) = edge.psi(xi, xj) * fi[xi] * fj[xj];
      normalize(table);
    } else if (oi && oj) {
      // Two-node tree with both leaves observed: the Sinkhorn coupling.
      const Vec& yi = m.obs_hist[obs_index[edge.i]];
      const Vec& yj = m.obs_hist[obs_index[edge.j]];
      const Vec& mi = msgs.at(e, true);   // i -> j
      const Vec& mj = msgs.at(e, false);  // j -> i
      for (int xi = 0; xi < table.rows; ++xi)
        for (int xj = 0; xj < table.cols; ++xj)
          table(xi, xj) = edge.psi(xi, xj) * (yi[xi] / mj[xi]) * (yj[xj] / mi[xj]);
      normalize(table);
    } else if (oj) {
      const Vec& yj = m.obs_hist[obs_index[edge.j]];
      Vec fi = incoming_product(msgs, m, adj, edge.i, edge.j);
      for (int xj = 0; xj < table.cols; ++xj) {
        double col_sum = 0.0;
        for (int xi = 0; xi < table.rows; ++xi) {
          table(xi, xj) = edge.psi(xi, xj) * fi[xi];
          col_sum += table(xi, xj);
        }
        for (int xi = 0; xi < table.rows; ++xi)
          table(xi, xj) *= yj[xj] / std::max(col_sum, kMessageFloor);
      }
    } else {
      const Vec& yi = m.obs_hist[obs_index[edge.i]];
      Vec fj = incoming_product(msgs, m, adj, edge.j, edge.i);
      for (int xi = 0; xi < table.rows; ++xi) {
        double row_sum = 0.0;
        for (int xj = 0; xj < table.cols; ++xj) {
          table(xi, xj) = edge.psi(xi, xj) * fj[xj];
          row_sum += table(xi, xj);
        }
        for (int xj = 0; xj < table.cols; ++xj)
          table(xi, xj) *= yi[xi] / std::max(row_sum, kMessageFloor);
      }
    }
    out.edge[e] = std::move(table);
  }
  return out;
}

}  // namespace detail

/// Sinkhorn belief propagation (scaling steps at observed leaves, standard
/// updates along the path to the next scheduled leaf). `schedule` is one
/// cycle of observed-node visits and must cover every observed node; by
/// default the observed leaves are cycled in ascending node order.
/// Convergence is measured as the largest message change over one cycle.
inline SbpResult run_sbp(const TreeModel& model, std::vector<int> schedule,
                         double tol = 1e-9, int max_passes = 500) {
  detail::Adjacency adj = detail::build_adjacency(model);
  detail::validate_tree(model, adj);

  std::vector<int> obs_index(model.num_nodes(), -1);
  std::vector<char> is_observed(model.num_nodes(), 0);
  for (size_t k = 0; k < model.observed.size(); ++k) {
    obs_index[model.observed[k]] = int(k);
    is_observed[model.observed[k]] = 1;
  }
  for (int node : schedule)
    if (node < 0 || node >= model.num_nodes() || obs_index[node] < 0)
      throw std::invalid_argument("schedule entry " + std::to_string(node) +
                                  " is not an observed node");
  for (int node : model.observed)
    if (std::find(schedule.begin(), schedule.end(), node) == schedule.end())
      throw std::invalid_argument("schedule misses observed node " +
                                  std::to_string(node));

  detail::SweepOrder sweep = detail::bfs_order(model, adj, 0);
  SbpResult res;
  res.messages = detail::uniform_messages(model);

  if (model.num_nodes() == 1) {
    res.passes = 1;
    res.marginals = detail::extract_marginals(res.messages, model, adj, obs_index);
    return res;
  }

  if (schedule.empty()) {
    // No observations: plain BP.
    for (res.passes = 1; res.passes <= max_passes; ++res.passes) {
      res.residual =
          detail::full_sweep(res.messages, model, adj, sweep, is_observed, false);
      if (res.residual <= tol) break;
    }
    res.marginals = detail::extract_marginals(res.messages, model, adj, obs_index);
    return res;
  }

  // Messages from unobserved branches reach their fixed point in one sweep
  // and never change afterwards; seed them before the scaling cycles start.
  detail::full_sweep(res.messages, model, adj, sweep, is_observed, true);

  // Precompute the directed hop lists between consecutive scheduled leaves.
  // The first hop out of each leaf is owned by its scaling step.
  std::vector<std::vector<std::array<int, 3>>> paths(schedule.size());
  for (size_t k = 0; k < schedule.size(); ++k) {
    int from = schedule[k];
    int to = schedule[(k + 1) % schedule.size()];
    if (from == to) continue;
    auto hops = detail::directed_path(model, adj, from, to);
    paths[k].assign(hops.begin() + 1, hops.end());
  }

  bool converged = false;
  for (res.passes = 1; res.passes <= max_passes; ++res.passes) {
    double delta = 0.0;
    for (size_t k = 0; k < schedule.size(); ++k) {
      int leaf = schedule[k];
      int e = adj[leaf].front().first;
      delta = std::max(delta, detail::update_scaling(res.messages, model, e, leaf,
                                                     model.obs_hist[obs_index[leaf]]));
      for (const auto& hop : paths[k])
        delta = std::max(delta, detail::update_standard(res.messages, model, adj,
                                                        hop[0], hop[1], hop[2]));
    }
    if (schedule.size() == 1)
      delta = std::max(delta, detail::full_sweep(res.messages, model, adj, sweep,
                                                 is_observed, true));
    res.residual = delta;
    if (delta <= tol) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw ConvergenceError("run_sbp did not converge", res.residual, max_passes);

  // Refresh messages into branches the scaling cycle never walks; at the
  // fixed point this is a no-op everywhere else.
  detail::full_sweep(res.messages, model, adj, sweep, is_observed, true);

  res.marginals = detail::extract_marginals(res.messages, model, adj, obs_index);
  return res;
}

inline SbpResult run_sbp(const TreeModel& model, double tol = 1e-9,
                         int max_passes = 500) {
  std::vector<int> schedule(model.observed.begin(), model.observed.end());
  std::sort(schedule.begin(), schedule.end());
  return run_sbp(model, std::move(schedule), tol, max_passes);
}

/// Bethe free energy of marginals on a tree:
///   sum_edges n_ij ln(n_ij / psi_ij) - sum_i (deg_i - 1) n_i ln n_i
/// with 0 ln 0 = 0. Marginals must satisfy the edge-node consistency
/// constraints within 1e-6.
inline double bethe_free_energy(const TreeModel& model, const TreeMarginals& marg) {
  detail::Adjacency adj = detail::build_adjacency(model);
  detail::validate_tree(model, adj);
  if (int(marg.node.size()) != model.num_nodes() ||
      marg.edge.size() != model.edges.size())
    throw std::invalid_argument("marginal set shape mismatch");

  for (int e = 0; e < int(model.edges.size()); ++e) {
    const auto& edge = model.edges[e];
    const Mat& table = marg.edge[e];
    for (int xi = 0; xi < table.rows; ++xi) {
      double s = 0.0;
      for (int xj = 0; xj < table.cols; ++xj) s += table(xi, xj);
      if (std::abs(s - marg.node[edge.i][xi]) > 1e-6)
        throw std::invalid_argument("edge marginal inconsistent with node " +
                                    std::to_string(edge.i));
    }
    for (int xj = 0; xj < table.cols; ++xj) {
      double s = 0.0;
      for (int xi = 0; xi < table.rows; ++xi) s += table(xi, xj);
      if (std::abs(s - marg.node[edge.j][xj]) > 1e-6)
        throw std::invalid_argument("edge marginal inconsistent with node " +
                                    std::to_string(edge.j));
    }
  }

  double energy = 0.0;
  for (int e = 0; e < int(model.edges.size()); ++e) {
    const auto& edge = model.edges[e];
    const Mat& table = marg.edge[e];
    for (int xi = 0; xi < table.rows; ++xi)
      for (int xj = 0; xj < table.cols; ++xj)
        energy += xlogx_over(table(xi, xj), edge.psi(xi, xj));
  }
  for (int u = 0; u < model.num_nodes(); ++u) {
    double weight = double(adj[u].size()) - 1.0;
    if (weight == 0.0) continue;
    double h = 0.0;
    for (double p : marg.node[u]) h += xlogx(p);
    energy -= weight * h;
  }
  return energy;
}

}  // namespace aghmm
