#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aghmm/core.hpp"
#include "aghmm/model.hpp"

namespace aghmm {

/// Message state of the collective forward-backward algorithm. alpha runs
/// forward, beta backward, gamma carries observation leaves into the chain
/// and xi the chain into the leaves. Boundary messages alpha_1 = pi and
/// beta_T = ones stay fixed.
struct CfbMessages {
  std::vector<Vec> alpha;  // T x d
  std::vector<Vec> beta;   // T x d
  std::vector<Vec> gamma;  // T x d
  std::vector<Vec> xi;     // T x s_t
};

struct CfbResult {
  MarginalSet marginals;
  CfbMessages messages;
  int passes = 0;
  double residual = 0.0;
};

namespace detail {

// Collective forward-backward over arbitrary per-step emission tables.
// Discrete models pass B at every step with the aggregate histograms;
// continuous models pass per-step likelihood tables with uniform
// histograms over sample indices. `sample_weights` switches the extraction
// between the (x, o) coupling and the per-sample weight convention.
inline CfbResult cfb_core(const Vec& pi, const Mat& trans,
                          const std::vector<const Mat*>& emit,
                          const std::vector<Vec>& hist, double tol, int max_passes,
                          bool sample_weights) {
  const int T = int(emit.size());
  const int d = int(pi.size());

  CfbMessages msg;
  msg.alpha.assign(T, Vec(d, 1.0 / d));
  msg.beta.assign(T, Vec(d, 1.0 / d));
  msg.gamma.assign(T, Vec(d, 1.0 / d));
  msg.xi.resize(T);
  for (int t = 0; t < T; ++t) msg.xi[t] = Vec(emit[t]->cols, 1.0 / emit[t]->cols);
  msg.alpha[0] = pi;
  floor_normalize(msg.alpha[0]);

  auto update_gamma = [&](int t) {
    Vec next(d, 0.0);
    for (int x = 0; x < d; ++x) {
      double acc = 0.0;
      for (int o = 0; o < emit[t]->cols; ++o)
        acc += (*emit[t])(x, o) * hist[t][o] / msg.xi[t][o];
      next[x] = acc;
    }
    floor_normalize(next);
    double delta = max_abs_diff(msg.gamma[t], next);
    msg.gamma[t] = std::move(next);
    return delta;
  };
  auto update_alpha = [&](int t) {
    Vec next(d, 0.0);
    for (int xp = 0; xp < d; ++xp) {
      double w = msg.alpha[t - 1][xp] * msg.gamma[t - 1][xp];
      for (int x = 0; x < d; ++x) next[x] += trans(xp, x) * w;
    }
    floor_normalize(next);
    double delta = max_abs_diff(msg.alpha[t], next);
    msg.alpha[t] = std::move(next);
    return delta;
  };
  auto update_beta = [&](int t) {
    Vec next(d, 0.0);
    for (int x = 0; x < d; ++x) {
      double acc = 0.0;
      for (int xn = 0; xn < d; ++xn)
        acc += trans(x, xn) * msg.beta[t + 1][xn] * msg.gamma[t + 1][xn];
      next[x] = acc;
    }
    floor_normalize(next);
    double delta = max_abs_diff(msg.beta[t], next);
    msg.beta[t] = std::move(next);
    return delta;
  };
  auto update_xi = [&](int t) {
    Vec next(emit[t]->cols, 0.0);
    for (int x = 0; x < d; ++x) {
      double w = msg.alpha[t][x] * msg.beta[t][x];
      for (int o = 0; o < emit[t]->cols; ++o) next[o] += (*emit[t])(x, o) * w;
    }
    floor_normalize(next);
    double delta = max_abs_diff(msg.xi[t], next);
    msg.xi[t] = std::move(next);
    return delta;
  };

  CfbResult res;
  if (T == 1) {
    // No recurrences: one xi/gamma refresh lands on the fixed point.
    update_xi(0);
    update_gamma(0);
    res.passes = 1;
    res.residual = 0.0;
  } else {
    bool converged = false;
    for (res.passes = 1; res.passes <= max_passes; ++res.passes) {
      double delta = 0.0;
      for (int t = 1; t < T; ++t) {
        delta = std::max(delta, update_gamma(t - 1));
        delta = std::max(delta, update_alpha(t));
        delta = std::max(delta, update_xi(t));
      }
      for (int t = T - 2; t >= 0; --t) {
        delta = std::max(delta, update_gamma(t + 1));
        delta = std::max(delta, update_beta(t));
        delta = std::max(delta, update_xi(t));
      }
      res.residual = delta;
      if (delta <= tol) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw ConvergenceError("collective forward-backward did not converge",
                             res.residual, max_passes);
  }

  // Marginal extraction. Couplings are rebuilt column by column from the
  // exact normalizer so each column sums to hist[t][o]; everything else
  // follows from products of the converged messages.
  MarginalSet marg;
  marg.node.resize(T);
  std::vector<Vec> gamma_hat(T);
  auto& couplings = sample_weights ? marg.sample_weight : marg.obs;
  couplings.resize(T);
  for (int t = 0; t < T; ++t) {
    const Mat& em = *emit[t];
    const int s = em.cols;
    Mat table(d, s);
    Vec xi_hat(s, 0.0);
    for (int x = 0; x < d; ++x) {
      double w = msg.alpha[t][x] * msg.beta[t][x];
      for (int o = 0; o < s; ++o) {
        table(x, o) = em(x, o) * w;
        xi_hat[o] += table(x, o);
      }
    }
    gamma_hat[t] = Vec(d, 0.0);
    for (int x = 0; x < d; ++x) {
      double acc = 0.0;
      for (int o = 0; o < s; ++o)
        acc += em(x, o) * hist[t][o] / std::max(xi_hat[o], kMessageFloor);
      gamma_hat[t][x] = acc;
    }
    Vec node(d, 0.0);
    for (int o = 0; o < s; ++o) {
      const double scale =
          (sample_weights ? 1.0 : hist[t][o]) / std::max(xi_hat[o], kMessageFloor);
      for (int x = 0; x < d; ++x) {
        table(x, o) *= scale;
        node[x] += (sample_weights ? hist[t][o] : 1.0) * table(x, o);
      }
    }
    normalize(node);
    marg.node[t] = std::move(node);
    couplings[t] = std::move(table);
  }
  marg.edge.resize(T - 1 < 0 ? 0 : T - 1);
  for (int t = 0; t + 1 < T; ++t) {
    Mat table(d, d);
    for (int x = 0; x < d; ++x) {
      double left = msg.alpha[t][x] * gamma_hat[t][x];
      for (int y = 0; y < d; ++y)
        table(x, y) = trans(x, y) * left * msg.beta[t + 1][y] * gamma_hat[t + 1][y];
    }
    normalize(table);
    marg.edge[t] = std::move(table);
  }

  res.marginals = std::move(marg);
  res.messages = std::move(msg);
  return res;
}

}  // namespace detail

/// Histograms renormalized to machine precision; stored sequences only
/// guarantee 1e-9.
inline std::vector<Vec> normalized_hist(const AggregateSequence& obs, int num_symbols) {
  std::vector<Vec> hist = obs.hist;
  for (auto& h : hist) {
    if (int(h.size()) != num_symbols)
      throw std::invalid_argument("histogram length does not match symbol count");
    double z = sum(h);
    if (!(z > 0.0)) throw std::invalid_argument("histogram sums to zero");
    for (double& v : h) v /= z;
  }
  return hist;
}

/// Collective forward-backward for a discrete model under aggregate
/// histogram observations. Returns node, edge and observation-coupling
/// marginals, each normalized to sum 1; coupling columns reproduce the
/// histograms exactly.
inline CfbResult cfb_discrete(const HmmParams& params, const AggregateSequence& obs,
                              double tol = 1e-9, int max_passes = 500) {
  if (!params.is_discrete())
    throw std::invalid_argument("cfb_discrete requires a discrete emission model");
  if (obs.horizon() != params.horizon)
    throw std::invalid_argument("observation horizon " +
                                std::to_string(obs.horizon()) +
                                " does not match model horizon " +
                                std::to_string(params.horizon));
  std::vector<Vec> hist = normalized_hist(obs, params.discrete().num_symbols);
  std::vector<const Mat*> emit(params.horizon, &params.discrete().B);
  return detail::cfb_core(params.pi, params.trans, emit, hist, tol, max_passes,
                          /*sample_weights=*/false);
}

/// Per-state Gaussian likelihood evaluator. Covariances are regularized
/// with +1e-9 I and factored once; evaluation happens in log space.
class GaussianLik {
 public:
  explicit GaussianLik(const GaussianEmission& e) : dim_(e.dim) {
    const double two_pi = 6.283185307179586476925286766559;
    chol_.resize(e.means.size());
    lognorm_.resize(e.means.size());
    means_ = &e.means;
    for (size_t x = 0; x < e.covs.size(); ++x) {
      Mat reg = e.covs[x];
      for (int i = 0; i < dim_; ++i) reg(i, i) += 1e-9;
      if (!cholesky(reg, chol_[x]))
        throw std::domain_error("singular covariance at state " + std::to_string(x));
      double logdet = 0.0;
      for (int i = 0; i < dim_; ++i) logdet += std::log(chol_[x](i, i));
      lognorm_[x] = 0.5 * dim_ * std::log(two_pi) + logdet;
    }
  }

  double logpdf(int state, const Vec& o) const {
    const Mat& L = chol_[state];
    Vec z(dim_);
    for (int i = 0; i < dim_; ++i) {
      double v = o[i] - (*means_)[state][i];
      for (int k = 0; k < i; ++k) v -= L(i, k) * z[k];
      z[i] = v / L(i, i);
    }
    double q = 0.0;
    for (double zi : z) q += zi * zi;
    return -0.5 * q - lognorm_[state];
  }

 private:
  int dim_;
  std::vector<Mat> chol_;
  Vec lognorm_;
  const std::vector<Vec>* means_;
};

/// Per-step likelihood tables L_t(x, m) = p(o_t^(m) | x), exponentiated
/// with a per-(t, m) shift so columns peak at 1. shift[t][m] holds the
/// subtracted log value; energies built on these tables must add it back.
struct LikelihoodTables {
  std::vector<Mat> table;   // T tables of d x M
  std::vector<Vec> shift;   // T vectors of length M
};

inline LikelihoodTables gaussian_likelihood_tables(const HmmParams& params,
                                                   const TrajectorySet& samples) {
  const auto& em = params.gaussian();
  GaussianLik lik(em);
  const int T = samples.horizon();
  const int M = samples.size();
  const int d = params.num_states;
  LikelihoodTables out;
  out.table.assign(T, Mat(d, M));
  out.shift.assign(T, Vec(M, 0.0));
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < M; ++m) {
      const Vec& o = samples.obs_real[m][t];
      if (int(o.size()) != em.dim)
        throw std::invalid_argument("observation dimension mismatch");
      double peak = kNegInf;
      Vec logs(d);
      for (int x = 0; x < d; ++x) {
        logs[x] = lik.logpdf(x, o);
        peak = std::max(peak, logs[x]);
      }
      out.shift[t][m] = peak;
      for (int x = 0; x < d; ++x)
        out.table[t](x, m) = std::max(std::exp(logs[x] - peak), kMessageFloor);
    }
  }
  return out;
}

/// Collective forward-backward for Gaussian emissions over M recorded but
/// unassigned observation trajectories. Structurally the discrete case
/// with sample indices as the observation alphabet and a uniform
/// histogram; returns per-sample weights n_t^(m)(x) with columns summing
/// to 1, alongside node and edge marginals.
inline CfbResult cfb_continuous(const HmmParams& params, const TrajectorySet& samples,
                                double tol = 1e-9, int max_passes = 500) {
  if (params.is_discrete())
    throw std::invalid_argument("cfb_continuous requires a Gaussian emission model");
  if (samples.kind != TrajectorySet::Kind::Continuous)
    throw std::invalid_argument("cfb_continuous requires continuous observations");
  if (samples.horizon() != params.horizon)
    throw std::invalid_argument("observation horizon does not match model horizon");
  if (samples.size() < 1) throw std::invalid_argument("need at least one sample");

  LikelihoodTables lik = gaussian_likelihood_tables(params, samples);
  const int M = samples.size();
  std::vector<const Mat*> emit;
  emit.reserve(lik.table.size());
  for (const Mat& t : lik.table) emit.push_back(&t);
  std::vector<Vec> hist(samples.horizon(), Vec(M, 1.0 / M));
  return detail::cfb_core(params.pi, params.trans, emit, hist, tol, max_passes,
                          /*sample_weights=*/true);
}

namespace detail {

template <typename EmitCol>
double scaled_forward(const Vec& pi, const Mat& trans, int T, EmitCol emit_col,
                      bool floored, bool* flagged) {
  const int d = int(pi.size());
  double ll = 0.0;
  Vec a(d);
  for (int t = 0; t < T; ++t) {
    double shift = 0.0;
    Vec b = emit_col(t, &shift);
    Vec next(d, 0.0);
    if (t == 0) {
      for (int x = 0; x < d; ++x) next[x] = pi[x] * b[x];
    } else {
      for (int xp = 0; xp < d; ++xp)
        for (int x = 0; x < d; ++x) next[x] += a[xp] * trans(xp, x) * b[x];
    }
    double c = sum(next);
    if (!(c > 0.0)) {
      if (!floored) return kNegInf;
      if (flagged) *flagged = true;
      c = kMessageFloor;
      next.assign(d, 1.0 / d);
      ll += std::log(c) + shift;
      a = std::move(next);
      continue;
    }
    for (double& v : next) v /= c;
    ll += std::log(c) + shift;
    a = std::move(next);
  }
  return ll;
}

}  // namespace detail

/// Log-likelihood of one observation path under the model, via the scaled
/// forward recursion. A zero-probability path yields -infinity.
inline double standard_forward(const HmmParams& params, const std::vector<int>& path) {
  if (int(path.size()) != params.horizon)
    throw std::invalid_argument("path length does not match model horizon");
  const Mat& B = params.discrete().B;
  auto emit_col = [&](int t, double*) {
    Vec b(params.num_states);
    for (int x = 0; x < params.num_states; ++x) b[x] = B(x, path[t]);
    return b;
  };
  return detail::scaled_forward(params.pi, params.trans, params.horizon, emit_col,
                                false, nullptr);
}

inline double standard_forward(const HmmParams& params,
                               const std::vector<Vec>& path) {
  if (int(path.size()) != params.horizon)
    throw std::invalid_argument("path length does not match model horizon");
  GaussianLik lik(params.gaussian());
  auto emit_col = [&](int t, double* shift) {
    Vec b(params.num_states);
    double peak = kNegInf;
    Vec logs(params.num_states);
    for (int x = 0; x < params.num_states; ++x) {
      logs[x] = lik.logpdf(x, path[t]);
      peak = std::max(peak, logs[x]);
    }
    *shift = peak;
    for (int x = 0; x < params.num_states; ++x) b[x] = std::exp(logs[x] - peak);
    return b;
  };
  return detail::scaled_forward(params.pi, params.trans, params.horizon, emit_col,
                                false, nullptr);
}

/// Forward log-likelihood with per-step flooring: impossible steps count
/// with probability 1e-300 instead of collapsing to -infinity. Sets
/// *flagged when the floor fires.
inline double standard_forward_floored(const HmmParams& params,
                                       const std::vector<int>& path, bool* flagged) {
  const Mat& B = params.discrete().B;
  auto emit_col = [&](int t, double*) {
    Vec b(params.num_states);
    for (int x = 0; x < params.num_states; ++x) b[x] = B(x, path[t]);
    return b;
  };
  return detail::scaled_forward(params.pi, params.trans, params.horizon, emit_col,
                                true, flagged);
}

inline double standard_forward_floored(const HmmParams& params,
                                       const std::vector<Vec>& path, bool* flagged) {
  GaussianLik lik(params.gaussian());
  auto emit_col = [&](int t, double* shift) {
    Vec b(params.num_states);
    double peak = kNegInf;
    Vec logs(params.num_states);
    for (int x = 0; x < params.num_states; ++x) {
      logs[x] = lik.logpdf(x, path[t]);
      peak = std::max(peak, logs[x]);
    }
    *shift = peak;
    for (int x = 0; x < params.num_states; ++x) b[x] = std::exp(logs[x] - peak);
    return b;
  };
  return detail::scaled_forward(params.pi, params.trans, params.horizon, emit_col,
                                true, flagged);
}

}  // namespace aghmm
