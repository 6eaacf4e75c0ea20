#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "pfnflow/rng.hpp"

namespace pfnflow::oracle {

// Finite distribution over support points in R^k. Probabilities sum to 1
// within 1e-12; support points are distinct.
struct DiscreteDistribution {
  std::vector<Eigen::VectorXd> support;
  std::vector<double> probs;

  void validate(double tol = 1e-12) const;
  Eigen::VectorXd mean() const;
  double expect(const std::function<double(const Eigen::VectorXd&)>& f) const;

  static DiscreteDistribution bernoulli(double p1);  // atoms {0}, {1}
};

// One task of a finite prior: a full joint table P(X, y, M) over d binary
// features, labels y in {1..C}, and all 2^d masks. Index layout:
// ((x_code * C + (y-1)) << d) | m_code.
struct DiscreteTask {
  int d = 0;
  int classes = 2;
  std::vector<double> joint;

  static DiscreteTask zeros(int d, int classes);
  double prob(int x_code, int y, int m_code) const;
  double& at(int x_code, int y, int m_code);
  double total() const;
  void normalize();
  // P(X_obs matches obs_code on observed coords, M = m_code, Y = y),
  // summing the joint over the missing bits.
  double obs_likelihood(int obs_code, int m_code, int y) const;
};

struct DiscretePrior {
  std::vector<DiscreteTask> tasks;
  std::vector<double> weights;

  void validate(double tol = 1e-12) const;
};

// A row as the predictor sees it: mask bits (1 = missing), observed value
// bits (zero at missing coords), and a label (1..C for context rows, 0 for
// unlabeled queries).
struct MaskedRow {
  int mask_code = 0;
  int obs_code = 0;
  int label = 0;
};

// A fully-resolved draw from a task's joint table (complete feature bits kept
// alongside the mask); used where training needs ground-truth completions.
struct CompleteRow {
  int x_code = 0;
  int mask_code = 0;
  int label = 0;

  MaskedRow masked() const {
    return MaskedRow{mask_code, x_code & ~mask_code, label};
  }
};

std::vector<CompleteRow> draw_complete_rows(const DiscreteTask& task, int n,
                                            Rng& rng);

// Samples n rows (X, y, M) from one task's joint table.
std::vector<MaskedRow> draw_rows(const DiscreteTask& task, int n, Rng& rng);

// A context/query evaluation pair drawn from the prior.
struct EvalPair {
  std::vector<MaskedRow> context;
  MaskedRow query;       // label field is the realized label (for CE draws)
  int task_index = -1;   // which task generated it
};

std::vector<EvalPair> draw_eval_pairs(const DiscretePrior& prior, int n_pairs,
                                      int ctx_min, int ctx_max,
                                      std::uint64_t seed);

// Exact Bayes rule over tasks and missing-value completions. The query's
// observed coordinates and mask are part of the evidence. Throws when the
// context has zero likelihood under every task.
DiscreteDistribution exact_posterior_predictive(
    const DiscretePrior& prior, const std::vector<MaskedRow>& context,
    const MaskedRow& query);

// Posterior over the query's missing coordinates (label marginalized out).
// Support points are vectors over the missing coordinates in feature order;
// with no missing coordinate this is a point mass on the empty completion.
DiscreteDistribution exact_missing_posterior(
    const DiscretePrior& prior, const std::vector<MaskedRow>& context,
    const MaskedRow& query);

// --- divergences -----------------------------------------------------------

// KL in nats; +infinity when q misses mass where p has some.
double kl(const DiscreteDistribution& p, const DiscreteDistribution& q);
// Total variation = 1/2 sum |p - q| over the merged support.
double tv(const DiscreteDistribution& p, const DiscreteDistribution& q);

enum class GroundMetric { kEuclidean, kL1 };

// Exact Wasserstein-1: quantile coupling in 1-D, min-cost flow otherwise.
double w1(const DiscreteDistribution& p, const DiscreteDistribution& q,
          GroundMetric metric = GroundMetric::kEuclidean);

double kl_vec(const std::vector<double>& p, const std::vector<double>& q);
double tv_vec(const std::vector<double>& p, const std::vector<double>& q);
double entropy_vec(const std::vector<double>& p);

// --- theorem verification --------------------------------------------------

// Label predictor interface: probabilities over y = 1..C for a query given a
// context.
using LabelPredictor = std::function<std::vector<double>(
    const std::vector<MaskedRow>& context, const MaskedRow& query, int classes)>;

// Exact PPD wrapped as a LabelPredictor.
LabelPredictor exact_ppd_predictor(const DiscretePrior& prior);
LabelPredictor uniform_predictor();

struct RiskDecompositionReport {
  double cross_entropy = 0.0;
  double bayes_entropy = 0.0;
  double expected_kl = 0.0;
  double identity_gap = 0.0;  // |CE - (H + KL)|
  int pairs = 0;
  bool pass = false;
};

// Computes the cross-entropy risk, the Bayes entropy term, and the expected
// conditional KL over a fixed evaluation set, each along its own route, and
// checks CE = H + KL within tol.
RiskDecompositionReport verify_pfn_risk_decomposition(
    const DiscretePrior& prior, const std::vector<EvalPair>& pairs,
    const LabelPredictor& predictor, double tol = 1e-9);

struct PostIntInstance {
  DiscreteDistribution mu;  // true missing-value posterior
  DiscreteDistribution nu;  // learned approximation
  double lipschitz = 1.0;   // L, supplied (not estimated)
  std::function<double(const Eigen::VectorXd&)> h_star;
  std::function<double(const Eigen::VectorXd&)> h_hat;
};

struct PostIntReport {
  double t_star = 0.0;
  double t_hat = 0.0;
  double w1_mu_nu = 0.0;
  double eps_pred = 0.0;
  double lhs = 0.0;    // |t_star - t_hat|
  double bound = 0.0;  // L * w1 + eps_pred
  bool pass = false;
};

PostIntReport verify_posterior_integration_bound(const PostIntInstance& inst,
                                                 double tol = 1e-12);

// Jensen gap |E_mu[h] - h(E_mu[x])| for a (strictly convex) target.
double jensen_gap(const DiscreteDistribution& mu,
                  const std::function<double(const Eigen::VectorXd&)>& h);

struct ForcedSameDistReport {
  double tv_p0_p1 = 0.0;
  double lower_bound = 0.0;      // tv_p0_p1 / 2
  double best_max_tv = 0.0;      // min over candidates of max{TV0, TV1}
  double midpoint_max_tv = 0.0;  // achieved by the (P0+P1)/2 mixture
  int candidates = 0;
  bool pass = false;  // every candidate respected the lower bound
};

// Sweeps candidate common distributions: the full simplex grid when the
// merged support has two atoms, otherwise the P0/P1 mixture segment; the
// minimax midpoint is always included.
ForcedSameDistReport verify_forced_same_dist_bound(
    const DiscreteDistribution& p0, const DiscreteDistribution& p1,
    int grid_points = 101, double tol = 1e-12);

struct TwoTermInstance {
  DiscreteDistribution mu;  // true posterior over x_m
  DiscreteDistribution g;   // learned generator
  int classes = 2;
  double lip_h = 1.0;  // Lipschitz bound for x -> E_{y~H(.|x)}[phi(y)]
  std::function<std::vector<double>(const Eigen::VectorXd&)> h_cond;
  std::function<std::vector<double>(const Eigen::VectorXd&)> p_cond;
};

struct TwoTermReport {
  double w1_g_mu = 0.0;
  double worst_lhs = 0.0;
  double worst_slack = 0.0;  // min over phi of (bound - lhs)
  bool pass = false;
};

// Checks |E_Phat[phi] - E_Pstar[phi]| <= L_h * W1(G, mu) + eps_H(phi) on all
// sign test functions phi in {-1,+1}^C (the extreme points of the unit ball).
TwoTermReport verify_two_term_budget(const TwoTermInstance& inst,
                                     double tol = 1e-12);

struct PinskerReport {
  double tv_val = 0.0;
  double kl_val = 0.0;
  bool pass = false;  // tv <= sqrt(kl / 2)
};

PinskerReport verify_pinsker(const DiscreteDistribution& p,
                             const DiscreteDistribution& q, double tol = 1e-12);

// Marginalization identity: the exact PPD equals the completion-weighted
// mixture of complete-data conditionals. Returns the max abs gap.
double marginalization_gap(const DiscretePrior& prior,
                           const std::vector<MaskedRow>& context,
                           const MaskedRow& query);

// --- randomized instance generators (used by the verification harness) -----

PostIntInstance make_post_int_instance(std::uint64_t seed);
TwoTermInstance make_two_term_instance(std::uint64_t seed);
std::pair<DiscreteDistribution, DiscreteDistribution> make_distribution_pair(
    std::uint64_t seed, int max_atoms = 6);

}  // namespace pfnflow::oracle
