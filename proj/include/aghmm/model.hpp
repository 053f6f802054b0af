#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "aghmm/core.hpp"
#include "aghmm/rng.hpp"

namespace aghmm {

/// Row-stochastic observation matrix: B(x, o) = p(o | x).
struct DiscreteEmission {
  int num_symbols = 0;
  Mat B;
};

/// One Gaussian density per hidden state: N(mean[x], cov[x]) over R^dim.
struct GaussianEmission {
  int dim = 0;
  std::vector<Vec> means;  // num_states vectors of length dim
  std::vector<Mat> covs;   // num_states dim x dim SPD matrices
};

using Emission = std::variant<DiscreteEmission, GaussianEmission>;

/// Time-homogeneous hidden Markov model over `num_states` hidden states and
/// `horizon` steps. `trans(x, x')` is p(x' | x); rows are stochastic.
struct HmmParams {
  int num_states = 0;
  int horizon = 0;
  Vec pi;
  Mat trans;
  Emission emission;

  bool is_discrete() const { return std::holds_alternative<DiscreteEmission>(emission); }
  const DiscreteEmission& discrete() const { return std::get<DiscreteEmission>(emission); }
  DiscreteEmission& discrete() { return std::get<DiscreteEmission>(emission); }
  const GaussianEmission& gaussian() const { return std::get<GaussianEmission>(emission); }
  GaussianEmission& gaussian() { return std::get<GaussianEmission>(emission); }

  /// Symbol count for discrete models, observation dimension for Gaussian.
  int obs_size() const {
    return is_discrete() ? discrete().num_symbols : gaussian().dim;
  }
};

/// Normalized per-step observation histograms for a population of size M.
/// hist[t](o) = (# individuals emitting o at step t+1) / M.
struct AggregateSequence {
  int population = 0;         // M
  std::vector<Vec> hist;      // horizon vectors over the symbol alphabet

  int horizon() const { return int(hist.size()); }

  /// Builds a sequence from raw per-step counts; divides by M.
  static AggregateSequence from_counts(int population,
                                       const std::vector<std::vector<int>>& counts) {
    AggregateSequence seq;
    seq.population = population;
    seq.hist.reserve(counts.size());
    for (const auto& row : counts) {
      Vec h(row.size());
      for (size_t o = 0; o < row.size(); ++o) h[o] = double(row[o]) / population;
      seq.hist.push_back(std::move(h));
    }
    return seq;
  }
};

/// Marginals inferred for one aggregate HMM sequence.
///
/// `obs` holds the hidden-observation couplings n_{t,t}(x, o) for discrete
/// models; `sample_weight` holds the per-sample state weights n_t^(m)(x)
/// (columns indexed by m, each column summing to 1) for continuous models.
struct MarginalSet {
  std::vector<Vec> node;           // T vectors over states, each sums to 1
  std::vector<Mat> edge;           // T-1 joint tables over (x_t, x_{t+1})
  std::vector<Mat> obs;            // T joint tables over (x_t, o_t), discrete case
  std::vector<Mat> sample_weight;  // T tables over (x_t, m), continuous case

  int horizon() const { return int(node.size()); }
};

/// Individually sampled hidden/observed paths, all of one length.
struct TrajectorySet {
  enum class Kind { Discrete, Continuous };

  Kind kind = Kind::Discrete;
  int num_symbols = 0;                      // discrete alphabet size, 0 if unknown
  std::vector<std::vector<int>> hidden;     // size x horizon state indices
  std::vector<std::vector<int>> obs_sym;    // discrete observations
  std::vector<std::vector<Vec>> obs_real;   // continuous observations

  int size() const {
    return kind == Kind::Discrete ? int(obs_sym.size()) : int(obs_real.size());
  }
  int horizon() const {
    if (kind == Kind::Discrete)
      return obs_sym.empty() ? 0 : int(obs_sym.front().size());
    return obs_real.empty() ? 0 : int(obs_real.front().size());
  }
};

/// One failed invariant: which field broke and what was measured.
struct Violation {
  std::string field;
  std::string message;
};

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(12);
  os << x;
  return os.str();
}

inline void check_stochastic_row(const std::string& field, const Vec& row, double tol,
                                 std::vector<Violation>& out) {
  double s = 0.0;
  for (double x : row) {
    if (x < 0.0) out.push_back({field, field + " has negative entry " + fmt(x)});
    s += x;
  }
  if (std::abs(s - 1.0) > tol)
    out.push_back({field, field + " sums to " + fmt(s)});
}

}  // namespace detail

/// Checks every HmmParams invariant. An empty result means the model is
/// valid; violations are data, not errors.
inline std::vector<Violation> validate(const HmmParams& p) {
  std::vector<Violation> v;
  if (p.num_states < 1) {
    v.push_back({"d", "num_states must be >= 1, got " + std::to_string(p.num_states)});
    return v;
  }
  if (p.horizon < 1)
    v.push_back({"T", "horizon must be >= 1, got " + std::to_string(p.horizon)});
  if (int(p.pi.size()) != p.num_states) {
    v.push_back({"pi", "pi has length " + std::to_string(p.pi.size()) +
                           ", expected " + std::to_string(p.num_states)});
  } else {
    detail::check_stochastic_row("pi", p.pi, 1e-12, v);
  }
  if (p.trans.rows != p.num_states || p.trans.cols != p.num_states) {
    v.push_back({"A", "A is " + std::to_string(p.trans.rows) + "x" +
                          std::to_string(p.trans.cols) + ", expected square of size " +
                          std::to_string(p.num_states)});
  } else {
    for (int x = 0; x < p.num_states; ++x)
      detail::check_stochastic_row("A[" + std::to_string(x) + "]", p.trans.row(x),
                                   1e-12, v);
  }
  if (p.is_discrete()) {
    const auto& e = p.discrete();
    if (e.num_symbols < 1)
      v.push_back({"emission", "num_symbols must be >= 1"});
    if (e.B.rows != p.num_states || e.B.cols != e.num_symbols) {
      v.push_back({"B", "B is " + std::to_string(e.B.rows) + "x" +
                            std::to_string(e.B.cols) + ", expected " +
                            std::to_string(p.num_states) + "x" +
                            std::to_string(e.num_symbols)});
    } else {
      for (int x = 0; x < p.num_states; ++x)
        detail::check_stochastic_row("B[" + std::to_string(x) + "]", e.B.row(x),
                                     1e-12, v);
    }
  } else {
    const auto& e = p.gaussian();
    if (e.dim < 1) v.push_back({"emission", "dim must be >= 1"});
    if (int(e.means.size()) != p.num_states || int(e.covs.size()) != p.num_states) {
      v.push_back({"emission", "expected one mean and covariance per state"});
      return v;
    }
    for (int x = 0; x < p.num_states; ++x) {
      const std::string tag = "Sigma[" + std::to_string(x) + "]";
      if (int(e.means[x].size()) != e.dim)
        v.push_back({"mu[" + std::to_string(x) + "]", "mean has wrong dimension"});
      const Mat& cov = e.covs[x];
      if (cov.rows != e.dim || cov.cols != e.dim) {
        v.push_back({tag, tag + " has wrong shape"});
        continue;
      }
      double asym = 0.0;
      for (int i = 0; i < e.dim; ++i)
        for (int j = 0; j < i; ++j)
          asym = std::max(asym, std::abs(cov(i, j) - cov(j, i)));
      if (asym > 1e-10)
        v.push_back({tag, tag + " asymmetric by " + detail::fmt(asym)});
      Mat lower;
      double pivot = 0.0;
      if (!cholesky(cov, lower, &pivot))
        v.push_back({tag, tag + " not positive definite (pivot " +
                              detail::fmt(pivot) + ")"});
    }
  }
  return v;
}

inline std::vector<Violation> validate(const AggregateSequence& seq) {
  std::vector<Violation> v;
  if (seq.population < 1)
    v.push_back({"M", "population must be >= 1, got " + std::to_string(seq.population)});
  for (size_t t = 0; t < seq.hist.size(); ++t) {
    const std::string tag = "y[" + std::to_string(t) + "]";
    double s = 0.0;
    for (double x : seq.hist[t]) {
      if (x < 0.0) v.push_back({tag, tag + " has negative entry " + detail::fmt(x)});
      double count = x * seq.population;
      if (std::abs(count - std::round(count)) > 1e-6)
        v.push_back({tag, tag + " entry " + detail::fmt(x) +
                              " is not a count/M (M*y = " + detail::fmt(count) + ")"});
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) v.push_back({tag, tag + " sums to " + detail::fmt(s)});
  }
  return v;
}

/// Marginal consistency per the fixed-point contract: nodes normalized,
/// edge tables reproducing adjacent node marginals, observation couplings
/// reproducing node marginals row-wise.
inline std::vector<Violation> validate(const MarginalSet& m) {
  std::vector<Violation> v;
  const int T = m.horizon();
  for (int t = 0; t < T; ++t) {
    double s = sum(m.node[t]);
    if (std::abs(s - 1.0) > 1e-9)
      v.push_back({"n[" + std::to_string(t) + "]",
                   "node marginal sums to " + detail::fmt(s)});
  }
  for (size_t t = 0; t < m.edge.size(); ++t) {
    const Mat& e = m.edge[t];
    const std::string tag = "n[" + std::to_string(t) + "," + std::to_string(t + 1) + "]";
    for (int x = 0; x < e.rows; ++x) {
      double s = 0.0;
      for (int y = 0; y < e.cols; ++y) s += e(x, y);
      if (std::abs(s - m.node[t][x]) > 1e-8)
        v.push_back({tag, tag + " row " + std::to_string(x) + " sums to " +
                              detail::fmt(s) + ", node gives " +
                              detail::fmt(m.node[t][x])});
    }
    for (int y = 0; y < e.cols; ++y) {
      double s = 0.0;
      for (int x = 0; x < e.rows; ++x) s += e(x, y);
      if (std::abs(s - m.node[t + 1][y]) > 1e-8)
        v.push_back({tag, tag + " column " + std::to_string(y) + " sums to " +
                              detail::fmt(s) + ", node gives " +
                              detail::fmt(m.node[t + 1][y])});
    }
  }
  for (size_t t = 0; t < m.obs.size(); ++t) {
    const Mat& o = m.obs[t];
    const std::string tag = "n[" + std::to_string(t) + "," + std::to_string(t) + "]";
    for (int x = 0; x < o.rows; ++x) {
      double s = 0.0;
      for (int j = 0; j < o.cols; ++j) s += o(x, j);
      if (std::abs(s - m.node[t][x]) > 1e-8)
        v.push_back({tag, tag + " row " + std::to_string(x) + " sums to " +
                              detail::fmt(s) + ", node gives " +
                              detail::fmt(m.node[t][x])});
    }
  }
  return v;
}

inline std::vector<Violation> validate(const TrajectorySet& traj, int num_symbols) {
  std::vector<Violation> v;
  const int T = traj.horizon();
  auto check_len = [&](size_t got, const std::string& tag) {
    if (int(got) != T)
      v.push_back({tag, tag + " has length " + std::to_string(got) + ", expected " +
                            std::to_string(T)});
  };
  for (size_t m = 0; m < traj.hidden.size(); ++m)
    check_len(traj.hidden[m].size(), "x[" + std::to_string(m) + "]");
  if (traj.kind == TrajectorySet::Kind::Discrete) {
    for (size_t m = 0; m < traj.obs_sym.size(); ++m) {
      check_len(traj.obs_sym[m].size(), "o[" + std::to_string(m) + "]");
      for (int o : traj.obs_sym[m])
        if (o < 0 || o >= num_symbols)
          v.push_back({"o[" + std::to_string(m) + "]",
                       "symbol " + std::to_string(o) + " out of range"});
    }
  } else {
    for (size_t m = 0; m < traj.obs_real.size(); ++m)
      check_len(traj.obs_real[m].size(), "o[" + std::to_string(m) + "]");
  }
  return v;
}

/// What random_init should build for the emission side.
struct EmissionSpec {
  enum class Kind { Discrete, Gaussian };
  Kind kind = Kind::Discrete;
  int size = 1;           // symbol count or observation dimension
  double mean_lo = -1.0;  // Gaussian mean range
  double mean_hi = 1.0;

  static EmissionSpec discrete(int num_symbols) {
    return {Kind::Discrete, num_symbols, 0.0, 0.0};
  }
  static EmissionSpec gaussian(int dim, double lo, double hi) {
    return {Kind::Gaussian, dim, lo, hi};
  }
};

/// Seeded random model: simplex-uniform rows (Dirichlet(1)) for pi, A and
/// discrete B; Gaussian means uniform in the requested range with identity
/// covariances. Same seed, same model.
inline HmmParams random_init(int num_states, int horizon, const EmissionSpec& spec,
                             std::uint64_t seed) {
  if (num_states < 1 || horizon < 1 || spec.size < 1)
    throw std::invalid_argument("random_init: dimensions must be >= 1");
  Rng rng(derive_seed(seed, 0x10d31));
  HmmParams p;
  p.num_states = num_states;
  p.horizon = horizon;
  p.pi = rng.dirichlet1(num_states);
  p.trans = Mat(num_states, num_states);
  for (int x = 0; x < num_states; ++x) {
    Vec row = rng.dirichlet1(num_states);
    for (int y = 0; y < num_states; ++y) p.trans(x, y) = row[y];
  }
  if (spec.kind == EmissionSpec::Kind::Discrete) {
    DiscreteEmission e;
    e.num_symbols = spec.size;
    e.B = Mat(num_states, spec.size);
    for (int x = 0; x < num_states; ++x) {
      Vec row = rng.dirichlet1(spec.size);
      for (int o = 0; o < spec.size; ++o) e.B(x, o) = row[o];
    }
    p.emission = std::move(e);
  } else {
    GaussianEmission e;
    e.dim = spec.size;
    e.means.resize(num_states);
    e.covs.resize(num_states);
    for (int x = 0; x < num_states; ++x) {
      e.means[x].resize(spec.size);
      for (double& c : e.means[x]) c = rng.uniform(spec.mean_lo, spec.mean_hi);
      e.covs[x] = Mat::identity(spec.size);
    }
    p.emission = std::move(e);
  }
  return p;
}

inline std::uint64_t param_hash(const HmmParams& p) {
  ByteHash h;
  h.add(double(p.num_states));
  h.add(double(p.horizon));
  h.add(p.pi);
  h.add(p.trans);
  if (p.is_discrete()) {
    h.add(p.discrete().B);
  } else {
    for (const auto& m : p.gaussian().means) h.add(m);
    for (const auto& c : p.gaussian().covs) h.add(c);
  }
  return h.value();
}

}  // namespace aghmm
