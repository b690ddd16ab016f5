#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bmax/infogain.hpp"
#include "bmax/planner.hpp"
#include "support/oracles.hpp"

using namespace bmax;

namespace {

GaussianPrediction comp1d(double mean, double var) {
  return GaussianPrediction::diagonal({mean}, {var});
}

}  // namespace

TEST_CASE("gaussian entropy closed form vs quadrature") {
  // 1-D unit variance: 0.5 log(2 pi e)
  const double h = gaussian_entropy(comp1d(0.0, 1.0));
  CHECK(h == doctest::Approx(1.4189385332046727).epsilon(1e-12));
  const double h_quad = oracle::shannon_by_quadrature({{0.0}, {1.0}});
  CHECK(h == doctest::Approx(h_quad).epsilon(1e-6));

  // scaling law: scaling variance by c adds 0.5 log c per dimension
  const double c = 3.7;
  CHECK(gaussian_entropy(comp1d(1.0, c)) - gaussian_entropy(comp1d(1.0, 1.0)) ==
        doctest::Approx(0.5 * std::log(c)).epsilon(1e-12));

  // additivity over dimensions
  CHECK(gaussian_entropy(GaussianPrediction::diagonal({0.0, 0.0}, {1.0, 1.0})) ==
        doctest::Approx(2.0 * 1.4189385332046727).epsilon(1e-12));

  // full covariance path agrees with the diagonal path
  Matrix cov = Matrix::from_rows({{2.0, 0.0}, {0.0, 0.5}});
  CHECK(gaussian_entropy(GaussianPrediction::full({0.0, 0.0}, cov)) ==
        doctest::Approx(gaussian_entropy(GaussianPrediction::diagonal({0.0, 0.0}, {2.0, 0.5})))
            .epsilon(1e-10));
}

TEST_CASE("gaussian KL closed form") {
  CHECK(gaussian_kl(comp1d(0.7, 1.3), comp1d(0.7, 1.3)) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(gaussian_kl(comp1d(1.0, 1.0), comp1d(0.0, 1.0)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gaussian_kl(comp1d(0.0, 2.0), comp1d(0.0, 1.0)) ==
        doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).epsilon(1e-9));

  // nonnegativity, zero iff equal
  RngStream rng(5);
  for (int i = 0; i < 1000; ++i) {
    const GaussianPrediction p = comp1d(rng.uniform(-3, 3), rng.uniform(0.1, 4.0));
    const GaussianPrediction q = comp1d(rng.uniform(-3, 3), rng.uniform(0.1, 4.0));
    const double kl = gaussian_kl(p, q);
    CHECK(kl >= 0.0);
    if (std::abs(p.mean[0] - q.mean[0]) < 1e-12 && std::abs(p.var[0] - q.var[0]) < 1e-12)
      CHECK(kl < 1e-10);
  }
  CHECK_THROWS_AS(
      gaussian_kl(comp1d(0, 1), GaussianPrediction::diagonal({0.0, 0.0}, {1.0, 1.0})),
      ShapeError);
}

TEST_CASE("gaussian KL Monte-Carlo cross-check") {
  const GaussianPrediction p = comp1d(1.0, 1.0), q = comp1d(0.0, 1.0);
  RngStream rng(9);
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = 1.0 + rng.normal();
    const double log_p = -0.5 * (x - 1.0) * (x - 1.0);
    const double log_q = -0.5 * x * x;
    acc += log_p - log_q;
  }
  CHECK(gaussian_kl(p, q) == doctest::Approx(acc / n).epsilon(0.02));
}

TEST_CASE("renyi2 mixture entropy closed form vs quadrature") {
  // single standard Gaussian: log(2 sqrt(pi))
  const double single = renyi2_mixture_entropy({comp1d(0.0, 1.0)});
  CHECK(single == doctest::Approx(std::log(2.0 * std::sqrt(M_PI))).epsilon(1e-12));
  CHECK(single ==
        doctest::Approx(oracle::renyi2_by_quadrature({{0.0}, {1.0}})).epsilon(1e-6));

  // duplicating every component leaves the mixture unchanged
  const std::vector<GaussianPrediction> mix = {comp1d(-0.5, 0.7), comp1d(1.2, 1.5)};
  const std::vector<GaussianPrediction> doubled = {comp1d(-0.5, 0.7), comp1d(1.2, 1.5),
                                                   comp1d(-0.5, 0.7), comp1d(1.2, 1.5)};
  CHECK(renyi2_mixture_entropy(mix) ==
        doctest::Approx(renyi2_mixture_entropy(doubled)).epsilon(1e-12));

  // two far-separated unit bumps: single-bump value plus log 2
  const double far = renyi2_mixture_entropy({comp1d(-10.0, 1.0), comp1d(10.0, 1.0)});
  CHECK(far == doctest::Approx(1.2655121234846454 + std::log(2.0)).epsilon(1e-6));
  CHECK(far ==
        doctest::Approx(oracle::renyi2_by_quadrature({{-10.0, 10.0}, {1.0, 1.0}})).epsilon(1e-3));
}

TEST_CASE("renyi2 mixture entropy matches quadrature on random mixtures") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    RngStream t = rng.child(trial);
    const int n = 1 + t.uniform_int(4);
    std::vector<GaussianPrediction> comps;
    oracle::Mixture1D mix;
    for (int i = 0; i < n; ++i) {
      const double mean = t.uniform(-3.0, 3.0);
      const double var = t.uniform(0.05, 2.0);
      comps.push_back(comp1d(mean, var));
      mix.means.push_back(mean);
      mix.vars.push_back(var);
    }
    CHECK(renyi2_mixture_entropy(comps) ==
          doctest::Approx(oracle::renyi2_by_quadrature(mix)).epsilon(1e-3));
  }
}

TEST_CASE("jensen-renyi utility identities") {
  // identical components score exactly zero
  const GaussianPrediction c = GaussianPrediction::diagonal({0.3, -0.4}, {0.5, 1.5});
  const double zero = utility_jr({c, c, c});
  CHECK(std::abs(zero) <= 1e-12);

  CHECK(utility_jr({c}) == doctest::Approx(0.0).epsilon(1e-12));

  // far-separated pair approaches log 2
  CHECK(utility_jr({comp1d(-10.0, 1.0), comp1d(10.0, 1.0)}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-3));

  // permutation invariance
  std::vector<GaussianPrediction> mix = {comp1d(-1.0, 0.3), comp1d(0.5, 1.1), comp1d(2.0, 0.8)};
  const double before = utility_jr(mix);
  std::reverse(mix.begin(), mix.end());
  CHECK(utility_jr(mix) == doctest::Approx(before).epsilon(1e-14));
}

TEST_CASE("moment matching reproduces mixture moments") {
  // single component maps to itself
  const GaussianPrediction single = GaussianPrediction::diagonal({1.0, 2.0}, {0.5, 0.25});
  const GaussianPrediction mm = moment_match({single});
  CHECK(mm.mean == single.mean);
  CHECK(mm.cov(0, 0) == doctest::Approx(0.5));
  CHECK(mm.cov(1, 1) == doctest::Approx(0.25));
  CHECK(mm.cov(0, 1) == doctest::Approx(0.0));

  // hand case: means +-1, var 0.5 -> mean 0, var 1.5
  const GaussianPrediction two = moment_match({comp1d(-1.0, 0.5), comp1d(1.0, 0.5)});
  CHECK(two.mean[0] == doctest::Approx(0.0));
  CHECK(two.cov(0, 0) == doctest::Approx(1.5));

  // Monte-Carlo moments of a random 2-D mixture
  RngStream rng(23);
  std::vector<GaussianPrediction> comps;
  for (int i = 0; i < 3; ++i)
    comps.push_back(GaussianPrediction::diagonal({rng.uniform(-2, 2), rng.uniform(-2, 2)},
                                                 {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)}));
  const GaussianPrediction matched = moment_match(comps);
  const int n = 100000;
  Vector mean(2, 0.0);
  Matrix second(2, 2);
  for (int i = 0; i < n; ++i) {
    const GaussianPrediction& pick = comps[rng.uniform_int(3)];
    Vector x(2);
    for (int d = 0; d < 2; ++d) x[d] = pick.mean[d] + std::sqrt(pick.var[d]) * rng.normal();
    for (int d = 0; d < 2; ++d) mean[d] += x[d];
    for (int i2 = 0; i2 < 2; ++i2)
      for (int j = 0; j < 2; ++j) second(i2, j) += x[i2] * x[j];
  }
  for (double& v : mean) v /= n;
  for (int i2 = 0; i2 < 2; ++i2)
    for (int j = 0; j < 2; ++j) {
      const double cov_ij = second(i2, j) / n - mean[i2] * mean[j];
      CHECK(std::abs(cov_ij - matched.cov(i2, j)) < 2e-2);
    }
  for (int d = 0; d < 2; ++d) CHECK(std::abs(mean[d] - matched.mean[d]) < 2e-2);
}

TEST_CASE("sample entropy utility on mean scatter") {
  const double eps = 1e-6;
  // identical means: degenerate floor log(eps)
  CHECK(utility_entropy_samples({comp1d(0.5, 1.0), comp1d(0.5, 2.0)}, eps) ==
        doctest::Approx(std::log(eps)).epsilon(1e-9));
  // means -1, +1: scatter 1
  CHECK(utility_entropy_samples({comp1d(-1.0, 1.0), comp1d(1.0, 1.0)}, eps) ==
        doctest::Approx(std::log(1.0 + eps)).epsilon(1e-6));
  // means -2, +2: scatter 4
  CHECK(utility_entropy_samples({comp1d(-2.0, 1.0), comp1d(2.0, 1.0)}, eps) ==
        doctest::Approx(std::log(4.0 + eps)).epsilon(1e-6));
  CHECK_THROWS_AS(utility_entropy_samples({comp1d(0, 1)}, eps), ShapeError);
}

TEST_CASE("laplace entropy utility strips the aleatoric diagonal") {
  const double eps = 1e-6;
  // epistemic part = identity
  GaussianPrediction pred = GaussianPrediction::full(
      {0.0, 0.0}, Matrix::from_rows({{1.0 + 0.3, 0.0}, {0.0, 1.0 + 0.4}}));
  pred.aleatoric = {0.3, 0.4};
  CHECK(utility_entropy_laplace(pred, true, eps) ==
        doctest::Approx(2.0 * std::log(1.0 + eps)).epsilon(1e-6));

  GaussianPrediction pred2 =
      GaussianPrediction::full({0.0, 0.0}, Matrix::from_rows({{4.0, 0.0}, {0.0, 9.0}}));
  pred2.aleatoric = {0.0, 0.0};
  CHECK(utility_entropy_laplace(pred2, true, eps) ==
        doctest::Approx(std::log(36.0)).epsilon(1e-4));

  // homoscedastic off scores the full covariance
  CHECK(utility_entropy_laplace(pred2, false, eps) ==
        doctest::Approx(std::log(36.0)).epsilon(1e-4));
}

TEST_CASE("laplace utility ranks probes like the BLR epistemic variance") {
  RngStream rng(12);
  const int n = 60;
  Matrix x(n, 2);
  Vector y(n);
  for (int r = 0; r < n; ++r) {
    x(r, 0) = rng.uniform(-1.0, 1.0);
    x(r, 1) = rng.uniform(-1.0, 1.0);
    y[r] = 0.5 * x(r, 0) + 0.2 * x(r, 1) + 0.1 * rng.normal();
  }
  const GaussianMLP model =
      oracle::linear_gaussian_model(1, 1, Matrix::from_rows({{0.5, 0.2}}), {0.0}, 1.0);
  ReplayBuffer buf(1, 1);
  for (int r = 0; r < n; ++r) buf.append({{x(r, 0)}, {x(r, 1)}, {x(r, 0) + y[r]}, r, Phase::Warmup});
  const PosteriorModel post = fit_laplace(model, buf, 2, 0.5);
  const oracle::BlrResult blr = oracle::blr_fit(x, y, 1.0, 0.5);

  std::vector<std::pair<double, double>> pairs;  // (utility, oracle epistemic var)
  for (int i = 0; i < 10; ++i) {
    const Vector q = {0.2 * (i + 1), -0.15 * (i + 1)};
    const GaussianPrediction pred = laplace_predictive_linearized(post, {q[0]}, {q[1]});
    const double u = utility_entropy_laplace(pred, true, 1e-9);
    const double oracle_var = oracle::blr_predictive_var(blr, q, 1.0) - 1.0;
    pairs.push_back({u, oracle_var});
  }
  // identical ranking = identical sort permutations
  auto rank_of = [&](auto key) {
    std::vector<int> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return key(pairs[a]) < key(pairs[b]); });
    return idx;
  };
  CHECK(rank_of([](const auto& p) { return p.first; }) ==
        rank_of([](const auto& p) { return p.second; }));
}

TEST_CASE("laplace information gain hand cases") {
  // H = 1 via empty buffer and gamma2 = 1; J = 1 at (s, a) = (1, 0)
  GaussianMLP model = oracle::linear_gaussian_model(
      1, 1, Matrix::from_rows({{0.7, 0.1}}), {0.0}, 1.0);
  const PosteriorModel prior_only = fit_laplace(model, ReplayBuffer(1, 1), 1, 1.0);
  REQUIRE(prior_only.laplace.subnet == std::vector<std::size_t>{0});

  const Transition z{{1.0}, {0.0}, {1.7}, 0, Phase::Active};
  const double ig1 = laplace_information_gain(prior_only, z);
  CHECK(ig1 == doctest::Approx(0.5 * (0.5 - 1.0 + std::log(2.0))).epsilon(1e-9));

  // observing the same transition again gains less
  ReplayBuffer with_z(1, 1);
  with_z.append(z);
  const PosteriorModel after = fit_laplace(model, with_z, 1, 1.0);
  const double ig2 = laplace_information_gain(after, z);
  CHECK(ig2 < ig1);
  CHECK(ig2 > 0.0);

  // zero Jacobian gains nothing: subnetwork on the log-variance row
  GaussianMLP flat;
  flat.state_dim = 1;
  flat.action_dim = 1;
  flat.params = MlpParams::zeros({2, 2}, {Act::Identity});
  flat.params.weights[0](1, 0) = 0.5;
  flat.norm = Normalizer::identity(2, 1);
  const PosteriorModel zero_j = fit_laplace(flat, ReplayBuffer(1, 1), 1, 1.0);
  CHECK(laplace_information_gain(zero_j, z) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("action_utility dispatches by spec and backend") {
  const auto env = make_env("lingauss", {{"sigma_env", 0.0}});
  const ReplayBuffer buf = oracle::random_buffer(*env, 96, RngStream(31));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 3;

  // dropout p = 0 under JR scores exactly zero (identical components)
  const PosteriorModel degenerate = fit_mc_dropout(buf, 0.0, 4, cfg, {8}, Act::Tanh);
  RngStream rng(1);
  UtilitySpec jr{UtilityKind::JensenRenyi2, 1e-6, true};
  CHECK(action_utility(degenerate, {0.1, 0.2}, {0.3}, jr, rng) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // single-member ensemble cannot feed the sample-scatter utility
  const PosteriorModel lone = fit_ensemble(buf, 1, cfg, {8}, Act::Tanh);
  UtilitySpec es{UtilityKind::EntropySamples, 1e-6, true};
  RngStream rng2(2);
  CHECK_THROWS_AS(action_utility(lone, {0.1, 0.2}, {0.3}, es, rng2), ShapeError);

  // entropy_laplace demands the laplace backend
  UtilitySpec el{UtilityKind::EntropyLaplace, 1e-6, true};
  RngStream rng3(3);
  CHECK_THROWS_AS(action_utility(lone, {0.1, 0.2}, {0.3}, el, rng3), ConfigError);
}

TEST_CASE("every utility kind prefers far-out-of-hull probes") {
  const auto env = make_env("lingauss", {{"sigma_env", 0.0}});
  const ReplayBuffer buf = oracle::random_buffer(*env, 200, RngStream(77));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 5e-3;
  cfg.seed = 13;
  const Vector inside = {0.0, 0.0}, far = {30.0, -30.0}, act = {0.0};

  const PosteriorModel ens = fit_ensemble(buf, 6, cfg, {16}, Act::Tanh);
  UtilitySpec jr{UtilityKind::JensenRenyi2, 1e-6, true};
  RngStream r1(4), r2(5);
  CHECK(action_utility(ens, far, act, jr, r1) > action_utility(ens, inside, act, jr, r2));

  const PosteriorModel mcd = fit_mc_dropout(buf, 0.25, 8, cfg, {16, 16}, Act::Tanh);
  UtilitySpec es{UtilityKind::EntropySamples, 1e-6, true};
  RngStream r3(6), r4(7);
  CHECK(action_utility(mcd, far, act, es, r3) > action_utility(mcd, inside, act, es, r4));

  const GaussianMLP model = train_map(buf, cfg, {16}, Act::Tanh).model;
  const PosteriorModel lap = fit_laplace(model, buf, 30, 1.0);
  UtilitySpec el{UtilityKind::EntropyLaplace, 1e-6, true};
  RngStream r5(8), r6(9);
  CHECK(action_utility(lap, far, act, el, r5) > action_utility(lap, inside, act, el, r6));
}

TEST_CASE("policy utility estimator basics") {
  const auto env = make_env("lingauss", {{"sigma_env", 0.0}});
  const ReplayBuffer buf = oracle::random_buffer(*env, 64, RngStream(3));
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 21;
  const PosteriorModel post = fit_ensemble(buf, 2, cfg, {8}, Act::Tanh);
  const Policy random_policy = [](const Vector&, int, RngStream& rng) {
    return Vector{rng.uniform(-1.0, 1.0)};
  };

  UtilitySpec jr{UtilityKind::JensenRenyi2, 1e-6, true};
  RngStream rng(40);
  CHECK(policy_utility_mc(post, {0.0, 0.0}, random_policy, 0, 8, jr, rng) == 0.0);

  // a constant stub score averages to that constant
  ScoreFn constant = ScoreFn::from_reward([](const Vector&, const Vector&, const Vector&) {
    return 0.0;
  });
  constant.shift = 2.75;
  RngStream rng2(41);
  CHECK(policy_utility_mc(post, {0.0, 0.0}, random_policy, 6, 4, constant, rng2) ==
        doctest::Approx(2.75).epsilon(1e-12));
}

TEST_CASE("doubling rollouts halves the estimator variance (factor-2 band)") {
  const auto env = make_env("lingauss", {{"sigma_env", 0.0}});
  const ReplayBuffer buf = oracle::random_buffer(*env, 96, RngStream(4));
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.seed = 22;
  const PosteriorModel post = fit_mc_dropout(buf, 0.3, 4, cfg, {8, 8}, Act::Tanh);
  const Policy random_policy = [](const Vector&, int, RngStream& rng) {
    return Vector{rng.uniform(-1.0, 1.0)};
  };
  UtilitySpec jr{UtilityKind::JensenRenyi2, 1e-6, true};

  auto variance_at = [&](int n_rollouts) {
    const int reps = 48;
    Vector vals(reps);
    for (int r = 0; r < reps; ++r) {
      RngStream rng(900 + r, static_cast<std::uint64_t>(n_rollouts));
      vals[r] = policy_utility_mc(post, {0.0, 0.0}, random_policy, 4, n_rollouts, jr, rng);
    }
    double m = 0.0, v = 0.0;
    for (double x : vals) m += x;
    m /= reps;
    for (double x : vals) v += (x - m) * (x - m);
    return v / reps;
  };
  const double ratio = variance_at(4) / variance_at(8);
  CHECK(ratio > 1.0);
  CHECK(ratio < 4.0);
}
