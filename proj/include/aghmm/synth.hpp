#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aghmm/core.hpp"
#include "aghmm/learning.hpp"
#include "aghmm/model.hpp"
#include "aghmm/rng.hpp"

namespace aghmm {

/// One synthetic learning experiment: N individual trajectories of length
/// T from a random ground-truth model, grouped into K = N/M aggregate
/// sequences of population M each.
struct ExperimentSpec {
  enum class Kind { Discrete, Gaussian };

  int d = 3;
  int T = 5;
  int N = 1000;
  int M = 1;
  Kind kind = Kind::Discrete;
  int obs_dim = 1;  // Gaussian observation dimension
  std::uint64_t seed = 0;
  int restarts = 3;  // EM restarts per fit; best final surrogate wins
  EmOptions em;

  int sequences() const { return N / M; }
};

inline std::vector<Violation> validate(const ExperimentSpec& s) {
  std::vector<Violation> v;
  if (s.d < 1) v.push_back({"d", "d must be >= 1"});
  if (s.T < 1) v.push_back({"T", "T must be >= 1"});
  if (s.N < 1) v.push_back({"N", "N must be >= 1"});
  if (s.M < 1) v.push_back({"M", "M must be >= 1"});
  if (s.M >= 1 && s.N >= 1 && s.N % s.M != 0)
    v.push_back({"M", "M = " + std::to_string(s.M) + " does not divide N = " +
                          std::to_string(s.N)});
  if (s.kind == ExperimentSpec::Kind::Gaussian && s.obs_dim < 1)
    v.push_back({"obs_dim", "obs_dim must be >= 1"});
  return v;
}

namespace detail {

// Row-permuted noised identity, rows rescaled to a conditional
// distribution. The noise term 0.05 sqrt(d) exp(U[-1,1]) is drawn per
// entry, which keeps every entry strictly positive.
inline Mat spiked_stochastic(int d, Rng& rng) {
  const double scale = 0.05 * std::sqrt(double(d));
  Mat noised(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      noised(i, j) = (i == j ? 1.0 : 0.0) + scale * std::exp(rng.uniform(-1.0, 1.0));
  std::vector<int> perm = rng.permutation(d);
  Mat out(d, d);
  for (int i = 0; i < d; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < d; ++j) row_sum += noised(perm[i], j);
    for (int j = 0; j < d; ++j) out(i, j) = noised(perm[i], j) / row_sum;
  }
  return out;
}

}  // namespace detail

/// Random ground-truth model for the synthetic protocol: simplex-uniform
/// initial distribution, spiked near-permutation transition matrix, and
/// either a spiked discrete emission matrix (drawn from a separate stream)
/// or per-state Gaussians with means from U[-5d, 5d] and isotropic
/// variance from U[1, 5].
inline HmmParams gen_ground_truth(const ExperimentSpec& spec) {
  auto violations = validate(spec);
  if (!violations.empty())
    throw std::invalid_argument("gen_ground_truth: " + violations.front().message);

  Rng pi_rng(derive_seed(spec.seed, 0x9e01));
  Rng trans_rng(derive_seed(spec.seed, 0x9e02));
  Rng emit_rng(derive_seed(spec.seed, 0x9e03));

  HmmParams p;
  p.num_states = spec.d;
  p.horizon = spec.T;
  p.pi = pi_rng.dirichlet1(spec.d);
  p.trans = detail::spiked_stochastic(spec.d, trans_rng);
  if (spec.kind == ExperimentSpec::Kind::Discrete) {
    DiscreteEmission e;
    e.num_symbols = spec.d;
    e.B = detail::spiked_stochastic(spec.d, emit_rng);
    p.emission = std::move(e);
  } else {
    GaussianEmission e;
    e.dim = spec.obs_dim;
    e.means.resize(spec.d);
    e.covs.resize(spec.d);
    const double range = 5.0 * spec.d;
    for (int x = 0; x < spec.d; ++x) {
      e.means[x].resize(spec.obs_dim);
      for (double& c : e.means[x]) c = emit_rng.uniform(-range, range);
      double var = emit_rng.uniform(1.0, 5.0);
      e.covs[x] = Mat::identity(spec.obs_dim);
      for (int i = 0; i < spec.obs_dim; ++i) e.covs[x](i, i) = var;
    }
    p.emission = std::move(e);
  }
  return p;
}

/// N independent ancestral-sampled paths of length T. Deterministic per
/// seed.
inline TrajectorySet sample_trajectories(const HmmParams& params, int N, int T,
                                         std::uint64_t seed) {
  auto violations = validate(params);
  if (!violations.empty())
    throw std::invalid_argument("sample_trajectories: invalid model: " +
                                violations.front().message);
  if (N < 1 || T < 1)
    throw std::invalid_argument("sample_trajectories: N and T must be >= 1");

  Rng rng(derive_seed(seed, 0x5a3f));
  TrajectorySet out;
  out.hidden.assign(N, std::vector<int>(T));
  if (params.is_discrete()) {
    out.kind = TrajectorySet::Kind::Discrete;
    out.num_symbols = params.discrete().num_symbols;
    out.obs_sym.assign(N, std::vector<int>(T));
    for (int m = 0; m < N; ++m) {
      int x = rng.categorical(params.pi);
      for (int t = 0; t < T; ++t) {
        out.hidden[m][t] = x;
        out.obs_sym[m][t] = rng.categorical(params.discrete().B.row(x));
        if (t + 1 < T) x = rng.categorical(params.trans.row(x));
      }
    }
  } else {
    const auto& em = params.gaussian();
    std::vector<Mat> chol(params.num_states);
    for (int x = 0; x < params.num_states; ++x)
      if (!cholesky(em.covs[x], chol[x]))
        throw std::invalid_argument("sample_trajectories: covariance not PD");
    out.kind = TrajectorySet::Kind::Continuous;
    out.obs_real.assign(N, std::vector<Vec>(T));
    for (int m = 0; m < N; ++m) {
      int x = rng.categorical(params.pi);
      for (int t = 0; t < T; ++t) {
        out.hidden[m][t] = x;
        Vec z(em.dim);
        for (double& v : z) v = rng.normal();
        Vec o = em.means[x];
        for (int i = 0; i < em.dim; ++i)
          for (int k = 0; k <= i; ++k) o[i] += chol[x](i, k) * z[k];
        out.obs_real[m][t] = std::move(o);
        if (t + 1 < T) x = rng.categorical(params.trans.row(x));
      }
    }
  }
  return out;
}

/// Groups discrete trajectories into consecutive blocks of M and counts
/// symbols per step: y_t(o) = #{m in block : o_t^(m) = o} / M.
inline std::vector<AggregateSequence> aggregate(const TrajectorySet& traj, int M) {
  if (traj.kind != TrajectorySet::Kind::Discrete)
    throw std::invalid_argument("aggregate expects discrete trajectories");
  const int N = traj.size();
  if (M < 1 || N % M != 0)
    throw std::invalid_argument("aggregate: M = " + std::to_string(M) +
                                " does not divide N = " + std::to_string(N));
  const int T = traj.horizon();
  const int s = traj.num_symbols > 0 ? traj.num_symbols : [&] {
    int mx = 0;
    for (const auto& path : traj.obs_sym)
      for (int o : path) mx = std::max(mx, o + 1);
    return mx;
  }();

  std::vector<AggregateSequence> out;
  out.reserve(N / M);
  for (int start = 0; start < N; start += M) {
    AggregateSequence seq;
    seq.population = M;
    seq.hist.assign(T, Vec(s, 0.0));
    for (int m = start; m < start + M; ++m)
      for (int t = 0; t < T; ++t) seq.hist[t][traj.obs_sym[m][t]] += 1.0;
    for (auto& h : seq.hist)
      for (double& v : h) v /= M;
    out.push_back(std::move(seq));
  }
  return out;
}

/// Splits a trajectory set into consecutive blocks of M trajectories each;
/// the continuous-observation counterpart of aggregate().
inline std::vector<TrajectorySet> partition_trajectories(const TrajectorySet& traj,
                                                         int M) {
  const int N = traj.size();
  if (M < 1 || N % M != 0)
    throw std::invalid_argument("partition_trajectories: M = " + std::to_string(M) +
                                " does not divide N = " + std::to_string(N));
  std::vector<TrajectorySet> out;
  out.reserve(N / M);
  for (int start = 0; start < N; start += M) {
    TrajectorySet block;
    block.kind = traj.kind;
    block.num_symbols = traj.num_symbols;
    for (int m = start; m < start + M; ++m) {
      if (!traj.hidden.empty()) block.hidden.push_back(traj.hidden[m]);
      if (traj.kind == TrajectorySet::Kind::Discrete)
        block.obs_sym.push_back(traj.obs_sym[m]);
      else
        block.obs_real.push_back(traj.obs_real[m]);
    }
    out.push_back(std::move(block));
  }
  return out;
}

/// Exact per-step observation marginals of a discrete model: y_t = B' n_t
/// with n_{t+1} = A' n_t. The infinite-population limit of aggregation.
inline std::vector<Vec> exact_observation_marginals(const HmmParams& params) {
  const int d = params.num_states;
  const int s = params.discrete().num_symbols;
  std::vector<Vec> out(params.horizon, Vec(s, 0.0));
  Vec n = params.pi;
  for (int t = 0; t < params.horizon; ++t) {
    for (int x = 0; x < d; ++x)
      for (int o = 0; o < s; ++o) out[t][o] += params.discrete().B(x, o) * n[x];
    if (t + 1 < params.horizon) {
      Vec next(d, 0.0);
      for (int x = 0; x < d; ++x)
        for (int y = 0; y < d; ++y) next[y] += params.trans(x, y) * n[x];
      n = std::move(next);
    }
  }
  return out;
}

}  // namespace aghmm
