#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aghmm/eval.hpp"
#include "aghmm/learning.hpp"
#include "aghmm/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aghmm;
using testutil::discrete_model;
using testutil::gaussian_model;
using testutil::mat;

TEST_CASE("nll of the uniform model is T log s") {
  const int d = 2, s = 5, T = 4;
  HmmParams uniform = discrete_model(Vec(d, 0.5), Mat(d, d, 0.5), Mat(d, s, 0.2), T);
  TrajectorySet test;
  test.kind = TrajectorySet::Kind::Discrete;
  test.num_symbols = s;
  test.obs_sym = {{0, 1, 2, 3}, {4, 4, 0, 1}, {2, 2, 2, 2}};
  CHECK(nll(uniform, test) == Approx(T * std::log(double(s))).epsilon(1e-13));
}

TEST_CASE("nll matches exhaustive enumeration") {
  HmmParams p = random_init(2, 3, EmissionSpec::discrete(3), 64);
  TrajectorySet test;
  test.kind = TrajectorySet::Kind::Discrete;
  test.num_symbols = 3;
  test.obs_sym = {{2, 0, 1}};
  CHECK(nll(p, test) ==
        Approx(-oracle::enumerate_hmm(p, test.obs_sym[0]).loglik).margin(1e-12));
}

TEST_CASE("nll closed form for a single-state Gaussian model") {
  HmmParams p = gaussian_model({1.0}, mat({{1.0}}), {Vec{1.5}}, {mat({{2.0}})}, 3);
  TrajectorySet test;
  test.kind = TrajectorySet::Kind::Continuous;
  test.obs_real = {{Vec{1.0}, Vec{2.0}, Vec{0.0}}};
  double expect = 0.0;
  for (double o : {1.0, 2.0, 0.0})
    expect -= std::log(oracle::gauss_pdf(o, 1.5, 2.0 + 1e-9));
  CHECK(nll(p, test) == Approx(expect).margin(1e-10));
}

TEST_CASE("delta_nll identities") {
  ExperimentSpec spec;
  spec.d = 2;
  spec.T = 3;
  spec.N = 10;
  spec.M = 1;
  spec.seed = 3;
  HmmParams truth = gen_ground_truth(spec);
  HmmParams other = random_init(2, 3, EmissionSpec::discrete(2), 4);
  TrajectorySet test = sample_trajectories(truth, 10, 3, 5);
  CHECK(delta_nll(truth, truth, test) == 0.0);
  CHECK(delta_nll(other, truth, test) == Approx(-delta_nll(truth, other, test)));
}

TEST_CASE("delta_nll of the uniform model against a spiked truth is positive in "
          "expectation") {
  ExperimentSpec spec;
  spec.d = 2;
  spec.T = 2;
  spec.N = 2;
  spec.M = 1;
  spec.seed = 8;
  HmmParams truth = gen_ground_truth(spec);
  HmmParams uniform = discrete_model(Vec(2, 0.5), Mat(2, 2, 0.5), Mat(2, 2, 0.5), 2);
  // Expectation over the truth's observation distribution, by enumeration
  // of all s^T observation paths: this is KL(P* || P_uniform) >= 0.
  double expect = 0.0;
  for (int o1 = 0; o1 < 2; ++o1)
    for (int o2 = 0; o2 < 2; ++o2) {
      std::vector<int> obs{o1, o2};
      double lp_truth = oracle::enumerate_hmm(truth, obs).loglik;
      double lp_unif = oracle::enumerate_hmm(uniform, obs).loglik;
      expect += std::exp(lp_truth) * (lp_truth - lp_unif);
    }
  CHECK(expect > 0.0);
}

TEST_CASE("param_distance basics") {
  HmmParams a = random_init(2, 3, EmissionSpec::discrete(2), 10);
  CHECK(param_distance(a, a).max() == 0.0);

  HmmParams p = discrete_model({1.0, 0.0}, Mat(2, 2, 0.5), Mat(2, 2, 0.5), 3);
  HmmParams q = discrete_model({0.0, 1.0}, Mat(2, 2, 0.5), Mat(2, 2, 0.5), 3);
  CHECK(param_distance(p, q).pi == 1.0);
  CHECK(param_distance(p, q).trans == 0.0);

  HmmParams b = random_init(2, 3, EmissionSpec::discrete(2), 11);
  ParamDistance ab = param_distance(a, b);
  ParamDistance ba = param_distance(b, a);
  CHECK(ab.pi == ba.pi);
  CHECK(ab.trans == ba.trans);
  CHECK(ab.emit == ba.emit);

  HmmParams g = random_init(2, 3, EmissionSpec::gaussian(2, -1.0, 1.0), 12);
  CHECK_THROWS_AS(param_distance(a, g), std::invalid_argument);
}

TEST_CASE("param_distance_best_permutation undoes relabeling") {
  HmmParams a = random_init(4, 3, EmissionSpec::discrete(3), 20);
  std::vector<int> perm{2, 0, 3, 1};
  HmmParams shuffled = relabel_states(a, perm);
  CHECK(param_distance(shuffled, a).max() > 0.01);
  std::vector<int> found;
  CHECK(param_distance_best_permutation(shuffled, a, &found).max() < 1e-15);
}

TEST_CASE("nll flags floored paths") {
  HmmParams p = discrete_model({1.0, 0.0}, mat({{1.0, 0.0}, {0.0, 1.0}}),
                               mat({{1.0, 0.0}, {0.0, 1.0}}), 2);
  TrajectorySet test;
  test.kind = TrajectorySet::Kind::Discrete;
  test.num_symbols = 2;
  test.obs_sym = {{0, 0}, {1, 1}};  // second path is impossible under p
  int flagged = -1;
  double value = nll(p, test, &flagged);
  CHECK(flagged == 1);
  CHECK(std::isfinite(value));
}

TEST_CASE("nll is invariant under test-set ordering") {
  ExperimentSpec spec;
  spec.d = 3;
  spec.T = 4;
  spec.N = 7;
  spec.M = 1;
  spec.seed = 30;
  HmmParams truth = gen_ground_truth(spec);
  TrajectorySet test = sample_trajectories(truth, 7, 4, 31);
  TrajectorySet reversed = test;
  std::reverse(reversed.obs_sym.begin(), reversed.obs_sym.end());
  std::reverse(reversed.hidden.begin(), reversed.hidden.end());
  CHECK(nll(truth, test) == Approx(nll(truth, reversed)).margin(1e-12));
}

TEST_CASE("M=1 learning curves from EM and Baum-Welch coincide") {
  ExperimentSpec spec;
  spec.d = 3;
  spec.T = 4;
  spec.N = 20;
  spec.M = 1;
  spec.seed = 40;
  HmmParams truth = gen_ground_truth(spec);
  TrajectorySet train = sample_trajectories(truth, 20, 4, 41);
  TrajectorySet test = sample_trajectories(truth, 20, 4, 42);
  HmmParams init = random_init(3, 4, EmissionSpec::discrete(3), 43);

  EmOptions opts;
  opts.max_iters = 12;
  opts.tol = -1.0;
  Vec em_curve, bw_curve;
  opts.observer = [&](int, const HmmParams& p) {
    em_curve.push_back(delta_nll(p, truth, test));
  };
  em_fit_ensemble(aggregate(train, 1), init, opts);
  opts.observer = [&](int, const HmmParams& p) {
    bw_curve.push_back(delta_nll(p, truth, test));
  };
  baum_welch_reference(train, init, opts);
  REQUIRE(em_curve.size() == bw_curve.size());
  for (size_t i = 0; i < em_curve.size(); ++i)
    CHECK(em_curve[i] == Approx(bw_curve[i]).margin(1e-8));
}

TEST_CASE("learning curve CSV layout") {
  LearningCurve c;
  c.d = 3;
  c.T = 5;
  c.N = 100;
  c.M = 10;
  c.obs_size = 3;
  c.seed = 7;
  c.rows = {{1, 0.5, 6.0, 5.5, }, {2, 0.25, 5.75, 5.5}};
  std::ostringstream os;
  write_csv(c, os);
  std::istringstream is(os.str());
  std::string header, row1;
  std::getline(is, header);
  std::getline(is, row1);
  CHECK(header ==
        "iter,delta_nll,nll_learned,nll_truth,d,T,N,M,seed,nll_learned_per_step,"
        "nll_learned_per_dim");
  CHECK(row1 == "1,0.5,6,5.5,3,5,100,10,7,1.2,0.4");
}
