#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "pfnflow/bayes_oracle.hpp"
#include "pfnflow/fixtures.hpp"

using namespace pfnflow;
using namespace pfnflow::oracle;

namespace {

Eigen::VectorXd pt1(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  return v;
}

DiscreteDistribution dist1(std::vector<double> xs, std::vector<double> ps) {
  DiscreteDistribution d;
  for (double x : xs) d.support.push_back(pt1(x));
  d.probs = std::move(ps);
  return d;
}

}  // namespace

TEST_CASE("single-task prior reduces to the task conditional") {
  DiscretePrior prior = fixtures::single_task_prior();
  Rng rng(11);
  auto rows = draw_rows(prior.tasks[0], 7, rng);
  MaskedRow query = rows.back();
  rows.pop_back();
  query.label = 0;
  const DiscreteDistribution got = exact_posterior_predictive(prior, rows, query);
  double num1 = prior.tasks[0].obs_likelihood(query.obs_code, query.mask_code, 1);
  double num2 = prior.tasks[0].obs_likelihood(query.obs_code, query.mask_code, 2);
  CHECK(got.probs[0] == doctest::Approx(num1 / (num1 + num2)).epsilon(1e-12));
}

TEST_CASE("label-swap symmetric prior gives a 50/50 predictive") {
  DiscreteTask t1 = DiscreteTask::zeros(1, 2);
  t1.at(0, 1, 0) = 0.4;
  t1.at(1, 2, 0) = 0.4;
  t1.at(0, 2, 0) = 0.1;
  t1.at(1, 1, 0) = 0.1;
  DiscreteTask t2 = DiscreteTask::zeros(1, 2);
  t2.at(0, 2, 0) = 0.4;
  t2.at(1, 1, 0) = 0.4;
  t2.at(0, 1, 0) = 0.1;
  t2.at(1, 2, 0) = 0.1;
  DiscretePrior prior{{t1, t2}, {0.5, 0.5}};
  MaskedRow query{0, 1, 0};  // x = 1 observed, empty context
  const DiscreteDistribution got = exact_posterior_predictive(prior, {}, query);
  CHECK(got.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(got.probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("exact PPD matches the independent brute-force route to 1e-10") {
  DiscretePrior prior = fixtures::eight_task_prior();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pairs = draw_eval_pairs(prior, 1, 4, 12, 900 + seed);
    MaskedRow query = pairs[0].query;
    query.label = 0;
    const DiscreteDistribution got =
        exact_posterior_predictive(prior, pairs[0].context, query);
    const std::vector<double> want =
        testing_oracles::brute_force_ppd(prior, pairs[0].context, query);
    for (int c = 0; c < 2; ++c) {
      CHECK(std::abs(got.probs[c] - want[c]) <= 1e-10);
    }
  }
}

TEST_CASE("impossible context raises") {
  DiscreteTask t = DiscreteTask::zeros(1, 2);
  t.at(0, 1, 0) = 1.0;
  DiscretePrior prior{{t}, {1.0}};
  MaskedRow bad{0, 1, 1};  // observes nothing but carries an impossible mask
  CHECK_THROWS_AS(exact_posterior_predictive(prior, {bad}, MaskedRow{0, 0, 0}),
                  std::runtime_error);
}

TEST_CASE("missing posterior: no missing coordinates is a point mass") {
  DiscretePrior prior = fixtures::two_task_prior();
  MaskedRow query{0, 0b01, 0};
  const DiscreteDistribution d = exact_missing_posterior(prior, {}, query);
  CHECK(d.support.size() == 1);
  CHECK(d.support[0].size() == 0);
  CHECK(d.probs[0] == 1.0);
}

TEST_CASE("missing posterior: independent feature falls back to its marginal") {
  DiscreteTask t = DiscreteTask::zeros(2, 2);
  const double p1 = 0.3;  // P(x1 = 1), independent of x0 and y
  for (int x0 = 0; x0 < 2; ++x0) {
    for (int x1 = 0; x1 < 2; ++x1) {
      const double px = 0.5 * (x1 ? p1 : 1 - p1);
      const int x = x0 | (x1 << 1);
      t.at(x, x0 + 1, 0b10) = px;  // mask fixed: x1 missing
    }
  }
  t.normalize();
  DiscretePrior prior{{t}, {1.0}};
  MaskedRow query{0b10, 0b01, 0};
  const DiscreteDistribution d = exact_missing_posterior(prior, {}, query);
  CHECK(d.probs[0] == doctest::Approx(1 - p1).epsilon(1e-12));
  CHECK(d.probs[1] == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("missing posterior matches brute force to 1e-10") {
  DiscretePrior prior = fixtures::eight_task_prior();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pairs = draw_eval_pairs(prior, 1, 4, 10, 1700 + seed);
    MaskedRow query = pairs[0].query;
    query.label = 0;
    if (query.mask_code == 0) continue;
    const DiscreteDistribution got =
        exact_missing_posterior(prior, pairs[0].context, query);
    const std::vector<double> want = testing_oracles::brute_force_missing_posterior(
        prior, pairs[0].context, query);
    for (std::size_t i = 0; i < got.probs.size(); ++i) {
      CHECK(std::abs(got.probs[i] - want[i]) <= 1e-10);
    }
  }
}

TEST_CASE("marginalization identity holds to 1e-12") {
  DiscretePrior prior = fixtures::eight_task_prior();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto pairs = draw_eval_pairs(prior, 1, 4, 10, 2400 + seed);
    MaskedRow query = pairs[0].query;
    query.label = 0;
    CHECK(marginalization_gap(prior, pairs[0].context, query) <= 1e-12);
  }
}

TEST_CASE("divergences: trivial closed forms") {
  auto p = DiscreteDistribution::bernoulli(0.2);
  auto q = DiscreteDistribution::bernoulli(0.5);
  CHECK(kl(p, p) == 0.0);
  CHECK(tv(p, p) == 0.0);
  CHECK(w1(p, p) == 0.0);
  CHECK(tv(p, q) == doctest::Approx(0.3).epsilon(1e-12));
  auto d0 = dist1({0.0}, {1.0});
  auto d1 = dist1({1.0}, {1.0});
  CHECK(w1(d0, d1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kl(d0, d1) == std::numeric_limits<double>::infinity());
}

TEST_CASE("TV matches the subset-sup brute force") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto [p, q] = make_distribution_pair(seed, 6);
    CHECK(std::abs(tv(p, q) - testing_oracles::brute_force_tv(p, q)) <= 1e-12);
  }
}

TEST_CASE("1-D W1: min-cost flow agrees with the quantile closed form") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [p, q] = make_distribution_pair(seed, 8);
    const double closed = w1(p, q);
    // Same pair through the multi-D solver, lifted to 2-D.
    DiscreteDistribution p2 = p, q2 = q;
    for (auto& s : p2.support) {
      Eigen::VectorXd v(2);
      v << s[0], 0.0;
      s = v;
    }
    for (auto& s : q2.support) {
      Eigen::VectorXd v(2);
      v << s[0], 0.0;
      s = v;
    }
    CHECK(std::abs(w1(p2, q2) - closed) <= 1e-9);
  }
}

TEST_CASE("multi-D W1 matches brute-force assignment on uniform supports") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5;
    std::vector<Eigen::VectorXd> a, b;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd x(2), y(2);
      x << rng.uniform(-2, 2), rng.uniform(-2, 2);
      y << rng.uniform(-2, 2), rng.uniform(-2, 2);
      a.push_back(x);
      b.push_back(y);
    }
    DiscreteDistribution p, q;
    p.support = a;
    q.support = b;
    p.probs.assign(n, 1.0 / n);
    q.probs.assign(n, 1.0 / n);
    const double got = w1(p, q);
    const double want = testing_oracles::brute_force_w1_uniform(a, b);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("risk decomposition: exact PPD predictor has zero KL") {
  DiscretePrior prior = fixtures::two_task_prior();
  auto pairs = draw_eval_pairs(prior, 40, 3, 10, 5150);
  const auto rep = verify_pfn_risk_decomposition(prior, pairs,
                                                 exact_ppd_predictor(prior));
  CHECK(rep.pass);
  CHECK(rep.expected_kl <= 1e-12);
  CHECK(rep.cross_entropy == doctest::Approx(rep.bayes_entropy).epsilon(1e-12));
}

TEST_CASE("risk decomposition: uniform predictor risk is ln C exactly") {
  for (const DiscretePrior& prior :
       {fixtures::two_task_prior(), fixtures::three_class_prior()}) {
    auto pairs = draw_eval_pairs(prior, 30, 3, 8, 6000);
    const auto rep =
        verify_pfn_risk_decomposition(prior, pairs, uniform_predictor());
    CHECK(rep.pass);
    CHECK(rep.cross_entropy ==
          doctest::Approx(std::log(prior.tasks[0].classes)).epsilon(1e-12));
  }
}

TEST_CASE("risk decomposition identity for a smoothed predictor") {
  DiscretePrior prior = fixtures::eight_task_prior();
  auto pairs = draw_eval_pairs(prior, 60, 3, 14, 6500);
  LabelPredictor smoothed = [&prior](const std::vector<MaskedRow>& ctx,
                                     const MaskedRow& q, int classes) {
    auto base = exact_ppd_predictor(prior)(ctx, q, classes);
    for (double& v : base) v = 0.85 * v + 0.15 / classes;
    return base;
  };
  const auto rep = verify_pfn_risk_decomposition(prior, pairs, smoothed);
  CHECK(rep.pass);
  CHECK(rep.identity_gap <= 1e-9);
  CHECK(rep.expected_kl > 0.0);
}

TEST_CASE("posterior integration bound: nu = mu and h_hat = h_star is tight") {
  PostIntInstance inst;
  inst.mu = dist1({-1.0, 0.5, 2.0}, {0.3, 0.4, 0.3});
  inst.nu = inst.mu;
  inst.lipschitz = 1.0;
  inst.h_star = [](const Eigen::VectorXd& x) { return std::abs(x[0]); };
  inst.h_hat = inst.h_star;
  const auto rep = verify_posterior_integration_bound(inst);
  CHECK(rep.pass);
  CHECK(rep.lhs == 0.0);
  CHECK(rep.bound == 0.0);
}

TEST_CASE("posterior integration bound: 100 randomized instances, no violation") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PostIntInstance inst = make_post_int_instance(seed);
    const auto rep = verify_posterior_integration_bound(inst);
    CAPTURE(seed);
    CHECK(rep.pass);
  }
}

TEST_CASE("jensen gap: the constructed instance is exactly 1") {
  DiscreteDistribution mu = dist1({-1.0, 1.0}, {0.5, 0.5});
  auto h = [](const Eigen::VectorXd& x) { return x[0] * x[0]; };
  CHECK(jensen_gap(mu, h) == 1.0);
}

TEST_CASE("jensen gap positive for strictly convex targets, 100 instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = Rng::derive(seed, 777);
    const int atoms = rng.uniform_int(2, 5);
    DiscreteDistribution mu;
    double tot = 0.0;
    for (int i = 0; i < atoms; ++i) {
      mu.support.push_back(pt1(rng.uniform(-2, 2) + i * 4.0));
      mu.probs.push_back(0.1 + rng.uniform());
      tot += mu.probs.back();
    }
    for (double& p : mu.probs) p /= tot;
    const double a = rng.uniform(0.2, 3.0);
    auto h = [a](const Eigen::VectorXd& x) { return a * x[0] * x[0]; };
    CAPTURE(seed);
    CHECK(jensen_gap(mu, h) > 0.0);
  }
}

TEST_CASE("forced same-distribution bound: delta instance") {
  auto d0 = dist1({0.0}, {1.0});
  auto d1 = dist1({1.0}, {1.0});
  const auto rep = verify_forced_same_dist_bound(d0, d1, 101);
  CHECK(rep.pass);
  CHECK(rep.tv_p0_p1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.lower_bound == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.midpoint_max_tv == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.best_max_tv == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("forced same-distribution bound degenerates gracefully when P0 = P1") {
  auto d = DiscreteDistribution::bernoulli(0.35);
  const auto rep = verify_forced_same_dist_bound(d, d, 33);
  CHECK(rep.pass);
  CHECK(rep.lower_bound == 0.0);
}

TEST_CASE("forced same-distribution bound: random Bernoulli pairs, 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = Rng::derive(seed, 888);
    auto p0 = DiscreteDistribution::bernoulli(rng.uniform(0.02, 0.98));
    auto p1 = DiscreteDistribution::bernoulli(rng.uniform(0.02, 0.98));
    const auto rep = verify_forced_same_dist_bound(p0, p1, 101);
    CAPTURE(seed);
    CHECK(rep.pass);
  }
}

TEST_CASE("two-term budget: known-W1 perturbation respects the budget") {
  TwoTermInstance inst;
  inst.mu = dist1({0.0, 1.0}, {0.5, 0.5});
  inst.g = dist1({0.0, 1.0}, {0.4, 0.6});  // W1 = 0.1 exactly
  inst.classes = 2;
  inst.lip_h = 2.0;
  inst.h_cond = [](const Eigen::VectorXd& x) {
    const double p = std::clamp(0.5 + 0.5 * x[0], 0.05, 0.95);
    return std::vector<double>{p, 1.0 - p};
  };
  inst.p_cond = inst.h_cond;  // exact conditional predictor
  const auto rep = verify_two_term_budget(inst);
  CHECK(rep.pass);
  CHECK(rep.w1_g_mu == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rep.worst_lhs <= 2.0 * 0.1 + 1e-12);
}

TEST_CASE("two-term budget: 100 randomized instances, no violation") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TwoTermInstance inst = make_two_term_instance(seed);
    const auto rep = verify_two_term_budget(inst);
    CAPTURE(seed);
    CHECK(rep.pass);
  }
}

TEST_CASE("pinsker holds on random pairs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto [p, q] = make_distribution_pair(seed, 6);
    const auto rep = verify_pinsker(p, q);
    CAPTURE(seed);
    CHECK(rep.pass);
  }
}

TEST_CASE("distribution validation catches defects") {
  DiscreteDistribution bad;
  bad.support = {pt1(0.0), pt1(0.0)};
  bad.probs = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  DiscreteDistribution sums;
  sums.support = {pt1(0.0)};
  sums.probs = {0.9};
  CHECK_THROWS_AS(sums.validate(), std::invalid_argument);
}

TEST_CASE("bias demo: plug-in bias dominates posterior integration by >= 5x") {
  const auto demo = fixtures::bias_demo();
  CHECK(demo.plug_in_bias > 0.0);
  CHECK(demo.plug_in_bias >= 5.0 * demo.integration_bias);
}
