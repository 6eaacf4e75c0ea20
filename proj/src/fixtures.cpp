#include "pfnflow/fixtures.hpp"

#include <cmath>
#include <functional>

namespace pfnflow::fixtures {

using oracle::DiscreteDistribution;
using oracle::DiscretePrior;
using oracle::DiscreteTask;

namespace {

int bit(int code, int j) { return (code >> j) & 1; }

// Label rules over 3 bits, one per task.
int rule(int task, int x) {
  const int a = bit(x, 0), b = bit(x, 1), c = bit(x, 2);
  switch (task) {
    case 0: return a;
    case 1: return b;
    case 2: return c;
    case 3: return a ^ b;
    case 4: return a ^ c;
    case 5: return b ^ c;
    case 6: return a ^ b ^ c;
    default: return (a + b + c) >= 2 ? 1 : 0;  // majority
  }
}

DiscreteTask build_task_d3(int task_id, double flip, double mask_base,
                           double mask_gain) {
  DiscreteTask t = DiscreteTask::zeros(3, 2);
  for (int x = 0; x < 8; ++x) {
    const double px = 1.0 / 8.0;
    // P(M_j = 1 | X) depends on the next feature's true value: X -> M edges.
    double pm[3];
    for (int j = 0; j < 3; ++j) {
      pm[j] = mask_base + mask_gain * bit(x, (j + 1) % 3);
    }
    for (int m = 0; m < 8; ++m) {
      double pmask = 1.0;
      for (int j = 0; j < 3; ++j) {
        pmask *= bit(m, j) ? pm[j] : 1.0 - pm[j];
      }
      const int y1 = rule(task_id, x) ? 1 : 0;
      for (int y = 1; y <= 2; ++y) {
        const double py = (y == y1 + 1) ? 1.0 - flip : flip;
        t.at(x, y, m) = px * py * pmask;
      }
    }
  }
  t.normalize();
  return t;
}

DiscreteTask build_task_d2(int d, int classes,
                           const std::function<int(int)>& label_rule,
                           double flip, double mask_base) {
  DiscreteTask t = DiscreteTask::zeros(d, classes);
  const int nx = 1 << d;
  for (int x = 0; x < nx; ++x) {
    const double px = 1.0 / nx;
    for (int m = 0; m < nx; ++m) {
      double pmask = 1.0;
      for (int j = 0; j < d; ++j) {
        const double pj = mask_base + 0.2 * bit(x, (j + 1) % d);
        pmask *= bit(m, j) ? pj : 1.0 - pj;
      }
      const int target = label_rule(x) % classes;
      for (int y = 1; y <= classes; ++y) {
        const double py =
            (y == target + 1) ? 1.0 - flip : flip / (classes - 1);
        t.at(x, y, m) = px * py * pmask;
      }
    }
  }
  t.normalize();
  return t;
}

}  // namespace

DiscretePrior eight_task_prior() {
  DiscretePrior prior;
  for (int k = 0; k < 8; ++k) {
    prior.tasks.push_back(build_task_d3(k, 0.08, 0.08, 0.30));
    prior.weights.push_back(1.0 / 8.0);
  }
  prior.validate(1e-9);
  return prior;
}

DiscretePrior two_task_prior() {
  DiscretePrior prior;
  prior.tasks.push_back(
      build_task_d2(2, 2, [](int x) { return bit(x, 0); }, 0.1, 0.15));
  prior.tasks.push_back(
      build_task_d2(2, 2, [](int x) { return bit(x, 0) ^ bit(x, 1); }, 0.1, 0.15));
  prior.weights = {0.5, 0.5};
  prior.validate(1e-9);
  return prior;
}

DiscretePrior three_class_prior() {
  DiscretePrior prior;
  prior.tasks.push_back(build_task_d2(
      2, 3, [](int x) { return bit(x, 0) + bit(x, 1); }, 0.12, 0.2));
  prior.tasks.push_back(build_task_d2(
      2, 3, [](int x) { return 2 * bit(x, 0); }, 0.12, 0.2));
  prior.tasks.push_back(build_task_d2(
      2, 3, [](int x) { return bit(x, 1) ? 2 : 1; }, 0.12, 0.2));
  prior.weights = {0.4, 0.3, 0.3};
  prior.validate(1e-9);
  return prior;
}

DiscretePrior single_task_prior() {
  DiscretePrior prior;
  prior.tasks.push_back(
      build_task_d2(2, 2, [](int x) { return bit(x, 1); }, 0.05, 0.1));
  prior.weights = {1.0};
  prior.validate(1e-9);
  return prior;
}

BiasDemo bias_demo() {
  // Two-task prior over d=2 binary features; the query observes nothing, so
  // the missing posterior spreads over {0,1}^2 and stays non-degenerate.
  DiscretePrior prior = two_task_prior();
  std::vector<oracle::MaskedRow> context;
  {
    Rng rng(424242);
    context = oracle::draw_rows(prior.tasks[0], 6, rng);
  }
  oracle::MaskedRow query;
  query.mask_code = 0b11;  // both features missing
  query.obs_code = 0;
  query.label = 0;

  const DiscreteDistribution mu =
      oracle::exact_missing_posterior(prior, context, query);

  // Strictly convex complete-data target. The center sits off the lattice
  // midpoint so the target actually varies over the support.
  auto h_star = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd c(2);
    c << 0.15, 0.35;
    return 1.5 * (x[0] - c[0]) * (x[0] - c[0]) +
           (x[1] - c[1]) * (x[1] - c[1]);
  };

  BiasDemo demo;
  demo.true_target = mu.expect(h_star);
  demo.plug_in_pred = h_star(mu.mean());

  // Imperfectly learned posterior: the exact posterior contaminated with 4%
  // uniform mass over the support.
  DiscreteDistribution nu = mu;
  for (double& p : nu.probs) {
    p = 0.96 * p + 0.04 / static_cast<double>(nu.probs.size());
  }
  demo.integration_pred = nu.expect(h_star);

  demo.plug_in_bias = std::abs(demo.plug_in_pred - demo.true_target);
  demo.integration_bias = std::abs(demo.integration_pred - demo.true_target);
  return demo;
}

}  // namespace pfnflow::fixtures
