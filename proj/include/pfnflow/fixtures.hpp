#pragma once

#include "pfnflow/bayes_oracle.hpp"

namespace pfnflow::fixtures {

// Fixed 8-task discrete prior: d=3 binary features, C=2, uniform weights.
// Each task pairs a boolean label rule (with 8% flip noise) with a
// feature-dependent mask law, so masks are informative and labels mostly
// predictable once the task is identified from context.
oracle::DiscretePrior eight_task_prior();

// Smaller enumerable priors for the risk-decomposition fixture set.
oracle::DiscretePrior two_task_prior();     // d=2, C=2
oracle::DiscretePrior three_class_prior();  // d=2, C=3
oracle::DiscretePrior single_task_prior();  // d=2, C=2, one task

// Plug-in vs posterior-integration bias on a constructed convex-target
// instance with a non-degenerate missing-value posterior. The true target and
// the exact posterior come from the enumeration oracle; the integration
// route uses a perturbed prior (an imperfectly learned posterior).
struct BiasDemo {
  double true_target = 0.0;     // E[h* | observed] under the exact posterior
  double plug_in_pred = 0.0;    // h*(posterior mean fill)
  double integration_pred = 0.0;
  double plug_in_bias = 0.0;
  double integration_bias = 0.0;
};

BiasDemo bias_demo();

}  // namespace pfnflow::fixtures
