#include "pfnflow/bayes_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace pfnflow::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct VecLess {
  bool operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    if (a.size() != b.size()) return a.size() < b.size();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) return a[i] < b[i];
    }
    return false;
  }
};

// Merged support with aligned probability vectors (zero where absent).
void merge_supports(const DiscreteDistribution& p, const DiscreteDistribution& q,
                    std::vector<Eigen::VectorXd>& points, std::vector<double>& pp,
                    std::vector<double>& qq) {
  std::map<Eigen::VectorXd, std::pair<double, double>, VecLess> acc;
  for (std::size_t i = 0; i < p.support.size(); ++i) {
    acc[p.support[i]].first += p.probs[i];
  }
  for (std::size_t i = 0; i < q.support.size(); ++i) {
    acc[q.support[i]].second += q.probs[i];
  }
  points.clear();
  pp.clear();
  qq.clear();
  for (const auto& [pt, pr] : acc) {
    points.push_back(pt);
    pp.push_back(pr.first);
    qq.push_back(pr.second);
  }
}

double ground_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       GroundMetric metric) {
  switch (metric) {
    case GroundMetric::kEuclidean: return (a - b).norm();
    case GroundMetric::kL1: return (a - b).lpNorm<1>();
  }
  return (a - b).norm();
}

// Exact transportation cost by successive shortest augmenting paths with
// Johnson potentials. Supports are small (<= 64 atoms) so a dense Dijkstra
// per augmentation is plenty.
double min_cost_transport(const std::vector<Eigen::VectorXd>& sp,
                          const std::vector<double>& pw,
                          const std::vector<Eigen::VectorXd>& sq,
                          const std::vector<double>& qw, GroundMetric metric) {
  const int m = static_cast<int>(sp.size());
  const int n = static_cast<int>(sq.size());
  std::vector<std::vector<double>> cost(m, std::vector<double>(n));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) cost[i][j] = ground_distance(sp[i], sq[j], metric);
  }
  std::vector<double> supply = pw;
  std::vector<double> demand = qw;
  std::vector<std::vector<double>> flow(m, std::vector<double>(n, 0.0));
  std::vector<double> pot_s(m, 0.0), pot_t(n, 0.0);

  // Mass below eps is dust relative to the 1e-9 check tolerances; it is
  // snapped to zero so augmentations cannot crawl.
  const double eps = 1e-13;
  auto remaining_supply = [&]() {
    double acc = 0.0;
    for (double s : supply) acc += s;
    return acc;
  };
  const long max_rounds = 64L * (m + n) * (m + n) + 256;
  long rounds = 0;
  while (remaining_supply() > eps) {
    if (++rounds > max_rounds) {
      throw std::runtime_error("w1: transport solver failed to terminate");
    }
    // Dijkstra over the bipartite residual graph from all sources with
    // remaining supply. Reduced costs are clamped at zero so accumulated
    // potential round-off can never break the label order.
    std::vector<double> dist_s(m, kInf), dist_t(n, kInf);
    std::vector<int> par_t(n, -1);   // source feeding t on the shortest path
    std::vector<int> par_s(m, -1);   // sink feeding s (via residual arc)
    std::vector<bool> done_s(m, false), done_t(n, false);
    using Item = std::pair<double, int>;  // (dist, node); node < m: source
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (int i = 0; i < m; ++i) {
      if (supply[i] > eps) {
        dist_s[i] = 0.0;
        pq.push({0.0, i});
      }
    }
    while (!pq.empty()) {
      auto [dcur, node] = pq.top();
      pq.pop();
      if (node < m) {
        const int i = node;
        if (done_s[i] || dcur > dist_s[i]) continue;
        done_s[i] = true;
        for (int j = 0; j < n; ++j) {
          if (done_t[j]) continue;
          const double red = std::max(0.0, cost[i][j] - pot_s[i] - pot_t[j]);
          if (dist_s[i] + red < dist_t[j]) {
            dist_t[j] = dist_s[i] + red;
            par_t[j] = i;
            pq.push({dist_t[j], m + j});
          }
        }
      } else {
        const int j = node - m;
        if (done_t[j] || dcur > dist_t[j]) continue;
        done_t[j] = true;
        for (int i = 0; i < m; ++i) {
          if (done_s[i]) continue;
          if (flow[i][j] > eps) {
            const double red =
                std::max(0.0, -(cost[i][j] - pot_s[i] - pot_t[j]));
            if (dist_t[j] + red < dist_s[i]) {
              dist_s[i] = dist_t[j] + red;
              par_s[i] = j;
              pq.push({dist_s[i], i});
            }
          }
        }
      }
    }
    // Cheapest reachable sink with remaining demand.
    int best = -1;
    for (int j = 0; j < n; ++j) {
      if (demand[j] > eps && dist_t[j] < kInf &&
          (best < 0 || dist_t[j] < dist_t[best])) {
        best = j;
      }
    }
    if (best < 0) {
      throw std::runtime_error("w1: transport plan infeasible");
    }
    // Trace the path back, find the bottleneck, augment. Parents were only
    // assigned from finalized nodes, so the trace cannot cycle.
    double push = demand[best];
    {
      int j = best;
      while (true) {
        const int i = par_t[j];
        if (par_s[i] < 0) {
          push = std::min(push, supply[i]);
          break;
        }
        push = std::min(push, flow[i][par_s[i]]);
        j = par_s[i];
      }
    }
    {
      int j = best;
      while (true) {
        const int i = par_t[j];
        flow[i][j] += push;
        if (par_s[i] < 0) {
          supply[i] -= push;
          if (supply[i] < eps) supply[i] = 0.0;
          break;
        }
        flow[i][par_s[i]] -= push;
        if (flow[i][par_s[i]] < eps) flow[i][par_s[i]] = 0.0;
        j = par_s[i];
      }
      demand[best] -= push;
      if (demand[best] < eps) demand[best] = 0.0;
    }
    // Potential update, capped at the augmenting distance. With reduced cost
    // c - pot_s - pot_t, tree edges need pot_s to fall by dist_s and pot_t to
    // rise by dist_t so the next pass sees them at zero.
    const double cap = dist_t[best];
    for (int i = 0; i < m; ++i) {
      pot_s[i] -= std::min(dist_s[i], cap);
    }
    for (int j = 0; j < n; ++j) {
      pot_t[j] += std::min(dist_t[j], cap);
    }
  }
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) total += flow[i][j] * cost[i][j];
  }
  return total;
}

double log_safe(double x) { return x > 0.0 ? std::log(x) : -kInf; }

}  // namespace

// --- DiscreteDistribution ----------------------------------------------------

void DiscreteDistribution::validate(double tol) const {
  if (support.size() != probs.size()) {
    throw std::invalid_argument("DiscreteDistribution: size mismatch");
  }
  double total = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("DiscreteDistribution: negative prob");
    total += p;
  }
  if (std::abs(total - 1.0) > tol) {
    throw std::invalid_argument("DiscreteDistribution: probs sum to " +
                                std::to_string(total));
  }
  std::map<Eigen::VectorXd, int, VecLess> seen;
  for (const auto& s : support) {
    if (seen.count(s)) {
      throw std::invalid_argument("DiscreteDistribution: duplicate support point");
    }
    seen[s] = 1;
  }
}

Eigen::VectorXd DiscreteDistribution::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(support.empty() ? 0 : support[0].size());
  for (std::size_t i = 0; i < support.size(); ++i) m += probs[i] * support[i];
  return m;
}

double DiscreteDistribution::expect(
    const std::function<double(const Eigen::VectorXd&)>& f) const {
  double e = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) e += probs[i] * f(support[i]);
  return e;
}

DiscreteDistribution DiscreteDistribution::bernoulli(double p1) {
  DiscreteDistribution d;
  d.support = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  d.probs = {1.0 - p1, p1};
  return d;
}

// --- DiscreteTask ------------------------------------------------------------

DiscreteTask DiscreteTask::zeros(int d, int classes) {
  DiscreteTask t;
  t.d = d;
  t.classes = classes;
  t.joint.assign(static_cast<std::size_t>((1 << d)) * classes * (1 << d), 0.0);
  return t;
}

double DiscreteTask::prob(int x_code, int y, int m_code) const {
  return joint[((static_cast<std::size_t>(x_code) * classes + (y - 1)) << d) |
               m_code];
}

double& DiscreteTask::at(int x_code, int y, int m_code) {
  return joint[((static_cast<std::size_t>(x_code) * classes + (y - 1)) << d) |
               m_code];
}

double DiscreteTask::total() const {
  return std::accumulate(joint.begin(), joint.end(), 0.0);
}

void DiscreteTask::normalize() {
  const double t = total();
  if (t <= 0.0) throw std::invalid_argument("DiscreteTask: empty table");
  for (double& v : joint) v /= t;
}

double DiscreteTask::obs_likelihood(int obs_code, int m_code, int y) const {
  // Sum the joint over the bits hidden by the mask. Iterate subsets of the
  // mask and overwrite the hidden positions of obs_code.
  double total = 0.0;
  int sub = m_code;
  while (true) {
    const int x_code = (obs_code & ~m_code) | sub;
    total += prob(x_code, y, m_code);
    if (sub == 0) break;
    sub = (sub - 1) & m_code;
  }
  return total;
}

void DiscretePrior::validate(double tol) const {
  if (tasks.size() != weights.size() || tasks.empty()) {
    throw std::invalid_argument("DiscretePrior: bad shape");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w <= 0.0) throw std::invalid_argument("DiscretePrior: weight <= 0");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > tol) {
    throw std::invalid_argument("DiscretePrior: weights sum to " +
                                std::to_string(wsum));
  }
  for (const auto& t : tasks) {
    if (std::abs(t.total() - 1.0) > tol) {
      throw std::invalid_argument("DiscretePrior: joint table not normalized");
    }
  }
}

std::vector<CompleteRow> draw_complete_rows(const DiscreteTask& task, int n,
                                            Rng& rng) {
  std::vector<CompleteRow> rows;
  rows.reserve(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CompleteRow row;
    bool placed = false;
    for (int x = 0; x < (1 << task.d) && !placed; ++x) {
      for (int y = 1; y <= task.classes && !placed; ++y) {
        for (int m = 0; m < (1 << task.d) && !placed; ++m) {
          u -= task.prob(x, y, m);
          if (u < 0.0) {
            row.x_code = x;
            row.mask_code = m;
            row.label = y;
            placed = true;
          }
        }
      }
    }
    if (!placed) {
      row.x_code = (1 << task.d) - 1;
      row.mask_code = 0;
      row.label = task.classes;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<MaskedRow> draw_rows(const DiscreteTask& task, int n, Rng& rng) {
  std::vector<MaskedRow> rows;
  rows.reserve(n);
  for (const CompleteRow& r : draw_complete_rows(task, n, rng)) {
    rows.push_back(r.masked());
  }
  return rows;
}

std::vector<EvalPair> draw_eval_pairs(const DiscretePrior& prior, int n_pairs,
                                      int ctx_min, int ctx_max,
                                      std::uint64_t seed) {
  std::vector<EvalPair> out;
  out.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    EvalPair pair;
    pair.task_index = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(prior.tasks.size())));
    const int n_ctx = rng.uniform_int(ctx_min, ctx_max);
    pair.context = draw_rows(prior.tasks[pair.task_index], n_ctx + 1, rng);
    pair.query = pair.context.back();
    pair.context.pop_back();
    out.push_back(std::move(pair));
  }
  return out;
}

// --- exact enumeration -------------------------------------------------------

namespace {

// Log-likelihood of the context under each task.
std::vector<double> context_log_likelihoods(const DiscretePrior& prior,
                                            const std::vector<MaskedRow>& ctx) {
  std::vector<double> ll(prior.tasks.size(), 0.0);
  for (std::size_t k = 0; k < prior.tasks.size(); ++k) {
    const DiscreteTask& t = prior.tasks[k];
    double acc = 0.0;
    for (const MaskedRow& r : ctx) {
      if (r.label < 1 || r.label > t.classes) {
        acc = -kInf;
        break;
      }
      acc += log_safe(t.obs_likelihood(r.obs_code, r.mask_code, r.label));
      if (acc == -kInf) break;
    }
    ll[k] = acc;
  }
  return ll;
}

}  // namespace

DiscreteDistribution exact_posterior_predictive(
    const DiscretePrior& prior, const std::vector<MaskedRow>& context,
    const MaskedRow& query) {
  prior.validate(1e-9);
  const int classes = prior.tasks[0].classes;
  const std::vector<double> ll = context_log_likelihoods(prior, context);
  std::vector<double> log_num(classes, -kInf);
  for (std::size_t k = 0; k < prior.tasks.size(); ++k) {
    if (ll[k] == -kInf) continue;
    const double base = std::log(prior.weights[k]) + ll[k];
    for (int y = 1; y <= classes; ++y) {
      const double lp = log_safe(
          prior.tasks[k].obs_likelihood(query.obs_code, query.mask_code, y));
      if (lp == -kInf) continue;
      const double term = base + lp;
      // log-sum-exp accumulate
      if (term > log_num[y - 1]) {
        log_num[y - 1] =
            term + std::log1p(std::exp(log_num[y - 1] - term));
      } else if (log_num[y - 1] != -kInf) {
        log_num[y - 1] += std::log1p(std::exp(term - log_num[y - 1]));
      }
    }
  }
  const double mx = *std::max_element(log_num.begin(), log_num.end());
  if (mx == -kInf) {
    throw std::runtime_error(
        "exact_posterior_predictive: context/query impossible under prior");
  }
  double z = 0.0;
  std::vector<double> probs(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    probs[c] = log_num[c] == -kInf ? 0.0 : std::exp(log_num[c] - mx);
    z += probs[c];
  }
  DiscreteDistribution out;
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd pt(1);
    pt[0] = static_cast<double>(c + 1);
    out.support.push_back(pt);
    out.probs.push_back(probs[c] / z);
  }
  return out;
}

DiscreteDistribution exact_missing_posterior(
    const DiscretePrior& prior, const std::vector<MaskedRow>& context,
    const MaskedRow& query) {
  prior.validate(1e-9);
  const int d = prior.tasks[0].d;
  const std::vector<double> ll = context_log_likelihoods(prior, context);

  std::vector<int> missing_coords;
  for (int j = 0; j < d; ++j) {
    if (query.mask_code & (1 << j)) missing_coords.push_back(j);
  }
  if (missing_coords.empty()) {
    DiscreteDistribution out;
    out.support.push_back(Eigen::VectorXd(0));
    out.probs.push_back(1.0);
    return out;
  }

  const int n_comp = 1 << missing_coords.size();
  std::vector<double> log_num(n_comp, -kInf);
  for (std::size_t k = 0; k < prior.tasks.size(); ++k) {
    if (ll[k] == -kInf) continue;
    const DiscreteTask& t = prior.tasks[k];
    const double base = std::log(prior.weights[k]) + ll[k];
    for (int comp = 0; comp < n_comp; ++comp) {
      int x_code = query.obs_code & ~query.mask_code;
      for (std::size_t b = 0; b < missing_coords.size(); ++b) {
        if (comp & (1 << b)) x_code |= 1 << missing_coords[b];
      }
      double py = 0.0;
      for (int y = 1; y <= t.classes; ++y) {
        py += t.prob(x_code, y, query.mask_code);
      }
      const double lp = log_safe(py);
      if (lp == -kInf) continue;
      const double term = base + lp;
      if (term > log_num[comp]) {
        log_num[comp] = term + std::log1p(std::exp(log_num[comp] - term));
      } else if (log_num[comp] != -kInf) {
        log_num[comp] += std::log1p(std::exp(term - log_num[comp]));
      }
    }
  }
  const double mx = *std::max_element(log_num.begin(), log_num.end());
  if (mx == -kInf) {
    throw std::runtime_error(
        "exact_missing_posterior: context/query impossible under prior");
  }
  double z = 0.0;
  std::vector<double> probs(n_comp, 0.0);
  for (int c = 0; c < n_comp; ++c) {
    probs[c] = log_num[c] == -kInf ? 0.0 : std::exp(log_num[c] - mx);
    z += probs[c];
  }
  DiscreteDistribution out;
  for (int comp = 0; comp < n_comp; ++comp) {
    Eigen::VectorXd pt(static_cast<Eigen::Index>(missing_coords.size()));
    for (std::size_t b = 0; b < missing_coords.size(); ++b) {
      pt[static_cast<Eigen::Index>(b)] = (comp & (1 << b)) ? 1.0 : 0.0;
    }
    out.support.push_back(pt);
    out.probs.push_back(probs[comp] / z);
  }
  return out;
}

// --- divergences -------------------------------------------------------------

double kl(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  std::vector<Eigen::VectorXd> pts;
  std::vector<double> pp, qq;
  merge_supports(p, q, pts, pp, qq);
  double acc = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pp[i] == 0.0) continue;
    if (qq[i] == 0.0) return kInf;
    acc += pp[i] * std::log(pp[i] / qq[i]);
  }
  return acc;
}

double tv(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  std::vector<Eigen::VectorXd> pts;
  std::vector<double> pp, qq;
  merge_supports(p, q, pts, pp, qq);
  double acc = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) acc += std::abs(pp[i] - qq[i]);
  return 0.5 * acc;
}

double w1(const DiscreteDistribution& p, const DiscreteDistribution& q,
          GroundMetric metric) {
  p.validate(1e-9);
  q.validate(1e-9);
  if (p.support.empty() || q.support.empty()) {
    throw std::invalid_argument("w1: empty support");
  }
  const auto dim = p.support[0].size();
  if (q.support[0].size() != dim) throw std::invalid_argument("w1: dim mismatch");
  if (dim == 1) {
    // Quantile coupling: integral of |F_p - F_q| over the line.
    std::vector<std::pair<double, std::pair<double, double>>> events;
    for (std::size_t i = 0; i < p.support.size(); ++i) {
      events.push_back({p.support[i][0], {p.probs[i], 0.0}});
    }
    for (std::size_t i = 0; i < q.support.size(); ++i) {
      events.push_back({q.support[i][0], {0.0, q.probs[i]}});
    }
    std::sort(events.begin(), events.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double fp = 0.0, fq = 0.0, acc = 0.0;
    for (std::size_t i = 0; i + 1 <= events.size(); ++i) {
      fp += events[i].second.first;
      fq += events[i].second.second;
      if (i + 1 < events.size()) {
        acc += std::abs(fp - fq) * (events[i + 1].first - events[i].first);
      }
    }
    return acc;
  }
  if (p.support.size() > 64 || q.support.size() > 64) {
    throw std::invalid_argument("w1: support capped at 64 atoms");
  }
  return min_cost_transport(p.support, p.probs, q.support, q.probs, metric);
}

double kl_vec(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return kInf;
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

double tv_vec(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

double entropy_vec(const std::vector<double>& p) {
  double acc = 0.0;
  for (double v : p) {
    if (v > 0.0) acc -= v * std::log(v);
  }
  return acc;
}

// --- theorem verification ----------------------------------------------------

LabelPredictor exact_ppd_predictor(const DiscretePrior& prior) {
  return [prior](const std::vector<MaskedRow>& ctx, const MaskedRow& q,
                 int classes) {
    DiscreteDistribution d = exact_posterior_predictive(prior, ctx, q);
    std::vector<double> out(classes, 0.0);
    for (std::size_t i = 0; i < d.support.size(); ++i) {
      out[static_cast<int>(d.support[i][0]) - 1] = d.probs[i];
    }
    return out;
  };
}

LabelPredictor uniform_predictor() {
  return [](const std::vector<MaskedRow>&, const MaskedRow&, int classes) {
    return std::vector<double>(classes, 1.0 / classes);
  };
}

RiskDecompositionReport verify_pfn_risk_decomposition(
    const DiscretePrior& prior, const std::vector<EvalPair>& pairs,
    const LabelPredictor& predictor, double tol) {
  const int classes = prior.tasks[0].classes;
  RiskDecompositionReport rep;
  rep.pairs = static_cast<int>(pairs.size());
  for (const EvalPair& pr : pairs) {
    DiscreteDistribution star =
        exact_posterior_predictive(prior, pr.context, pr.query);
    std::vector<double> pstar(classes, 0.0);
    for (std::size_t i = 0; i < star.support.size(); ++i) {
      pstar[static_cast<int>(star.support[i][0]) - 1] = star.probs[i];
    }
    MaskedRow unlabeled = pr.query;
    unlabeled.label = 0;
    const std::vector<double> r = predictor(pr.context, unlabeled, classes);
    double ce = 0.0;
    for (int c = 0; c < classes; ++c) {
      if (pstar[c] > 0.0) ce -= pstar[c] * std::log(r[c]);
    }
    rep.cross_entropy += ce;
    rep.bayes_entropy += entropy_vec(pstar);
    rep.expected_kl += kl_vec(pstar, r);
  }
  rep.cross_entropy /= rep.pairs;
  rep.bayes_entropy /= rep.pairs;
  rep.expected_kl /= rep.pairs;
  rep.identity_gap =
      std::abs(rep.cross_entropy - (rep.bayes_entropy + rep.expected_kl));
  rep.pass = rep.identity_gap <= tol && rep.expected_kl >= -1e-12;
  return rep;
}

PostIntReport verify_posterior_integration_bound(const PostIntInstance& inst,
                                                 double tol) {
  PostIntReport rep;
  rep.t_star = inst.mu.expect(inst.h_star);
  rep.t_hat = inst.nu.expect(inst.h_hat);
  rep.w1_mu_nu = w1(inst.mu, inst.nu, GroundMetric::kEuclidean);
  rep.eps_pred = std::abs(inst.nu.expect([&](const Eigen::VectorXd& x) {
    return inst.h_hat(x) - inst.h_star(x);
  }));
  rep.lhs = std::abs(rep.t_star - rep.t_hat);
  rep.bound = inst.lipschitz * rep.w1_mu_nu + rep.eps_pred;
  rep.pass = rep.lhs <= rep.bound + tol;
  return rep;
}

double jensen_gap(const DiscreteDistribution& mu,
                  const std::function<double(const Eigen::VectorXd&)>& h) {
  return std::abs(mu.expect(h) - h(mu.mean()));
}

ForcedSameDistReport verify_forced_same_dist_bound(
    const DiscreteDistribution& p0, const DiscreteDistribution& p1,
    int grid_points, double tol) {
  ForcedSameDistReport rep;
  rep.tv_p0_p1 = tv(p0, p1);
  rep.lower_bound = 0.5 * rep.tv_p0_p1;

  std::vector<Eigen::VectorXd> pts;
  std::vector<double> a, b;
  merge_supports(p0, p1, pts, a, b);

  std::vector<DiscreteDistribution> candidates;
  if (pts.size() == 2) {
    for (int g = 0; g < grid_points; ++g) {
      const double w = static_cast<double>(g) / (grid_points - 1);
      DiscreteDistribution c;
      c.support = pts;
      c.probs = {1.0 - w, w};
      candidates.push_back(std::move(c));
    }
  } else {
    for (int g = 0; g < grid_points; ++g) {
      const double lam = static_cast<double>(g) / (grid_points - 1);
      DiscreteDistribution c;
      c.support = pts;
      c.probs.resize(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i) {
        c.probs[i] = lam * a[i] + (1.0 - lam) * b[i];
      }
      candidates.push_back(std::move(c));
    }
  }
  // Minimax midpoint (P0 + P1) / 2.
  DiscreteDistribution mid;
  mid.support = pts;
  mid.probs.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) mid.probs[i] = 0.5 * (a[i] + b[i]);
  rep.midpoint_max_tv = std::max(tv(p0, mid), tv(p1, mid));
  candidates.push_back(std::move(mid));

  rep.candidates = static_cast<int>(candidates.size());
  rep.best_max_tv = kInf;
  rep.pass = true;
  for (const auto& c : candidates) {
    const double mx = std::max(tv(p0, c), tv(p1, c));
    rep.best_max_tv = std::min(rep.best_max_tv, mx);
    if (mx < rep.lower_bound - tol) rep.pass = false;
  }
  return rep;
}

TwoTermReport verify_two_term_budget(const TwoTermInstance& inst, double tol) {
  TwoTermReport rep;
  rep.w1_g_mu = w1(inst.g, inst.mu, GroundMetric::kEuclidean);
  const int C = inst.classes;
  rep.worst_slack = kInf;
  rep.pass = true;
  for (int code = 0; code < (1 << C); ++code) {
    std::vector<double> phi(C);
    for (int c = 0; c < C; ++c) phi[c] = (code & (1 << c)) ? 1.0 : -1.0;
    auto mix = [&](const DiscreteDistribution& dx, const auto& cond) {
      double e = 0.0;
      for (std::size_t i = 0; i < dx.support.size(); ++i) {
        const std::vector<double> py = cond(dx.support[i]);
        double ey = 0.0;
        for (int c = 0; c < C; ++c) ey += phi[c] * py[c];
        e += dx.probs[i] * ey;
      }
      return e;
    };
    const double e_hat = mix(inst.g, inst.h_cond);
    const double e_star = mix(inst.mu, inst.p_cond);
    const double lhs = std::abs(e_hat - e_star);
    double eps_h = 0.0;
    for (std::size_t i = 0; i < inst.mu.support.size(); ++i) {
      const std::vector<double> hy = inst.h_cond(inst.mu.support[i]);
      const std::vector<double> py = inst.p_cond(inst.mu.support[i]);
      double diff = 0.0;
      for (int c = 0; c < C; ++c) diff += phi[c] * (hy[c] - py[c]);
      eps_h += inst.mu.probs[i] * std::abs(diff);
    }
    const double bound = inst.lip_h * rep.w1_g_mu + eps_h;
    rep.worst_lhs = std::max(rep.worst_lhs, lhs);
    rep.worst_slack = std::min(rep.worst_slack, bound - lhs);
    if (lhs > bound + tol) rep.pass = false;
  }
  return rep;
}

PinskerReport verify_pinsker(const DiscreteDistribution& p,
                             const DiscreteDistribution& q, double tol) {
  PinskerReport rep;
  rep.tv_val = tv(p, q);
  rep.kl_val = kl(p, q);
  rep.pass = rep.kl_val == kInf || rep.tv_val <= std::sqrt(rep.kl_val / 2.0) + tol;
  return rep;
}

double marginalization_gap(const DiscretePrior& prior,
                           const std::vector<MaskedRow>& context,
                           const MaskedRow& query) {
  const int classes = prior.tasks[0].classes;
  DiscreteDistribution direct = exact_posterior_predictive(prior, context, query);
  DiscreteDistribution miss = exact_missing_posterior(prior, context, query);

  std::vector<int> missing_coords;
  for (int j = 0; j < prior.tasks[0].d; ++j) {
    if (query.mask_code & (1 << j)) missing_coords.push_back(j);
  }
  std::vector<double> mixture(classes, 0.0);
  for (std::size_t i = 0; i < miss.support.size(); ++i) {
    // Complete the query at this support point and condition on it.
    MaskedRow completed = query;
    completed.mask_code = 0;
    completed.obs_code = query.obs_code & ~query.mask_code;
    for (std::size_t b = 0; b < missing_coords.size(); ++b) {
      if (miss.support[i][static_cast<Eigen::Index>(b)] > 0.5) {
        completed.obs_code |= 1 << missing_coords[b];
      }
    }
    // The conditional predictive must keep the mask as evidence: condition on
    // (X = completed values, M = query mask).
    const std::vector<double> ll = context_log_likelihoods(prior, context);
    std::vector<double> num(classes, 0.0);
    double den = 0.0;
    for (std::size_t k = 0; k < prior.tasks.size(); ++k) {
      if (ll[k] == -kInf) continue;
      const double wk = prior.weights[k] * std::exp(ll[k]);
      for (int y = 1; y <= classes; ++y) {
        const double p = prior.tasks[k].prob(completed.obs_code, y,
                                             query.mask_code);
        num[y - 1] += wk * p;
        den += wk * p;
      }
    }
    if (den <= 0.0) continue;
    for (int c = 0; c < classes; ++c) {
      mixture[c] += miss.probs[i] * num[c] / den;
    }
  }
  double gap = 0.0;
  for (int c = 0; c < classes; ++c) {
    gap = std::max(gap, std::abs(mixture[c] - direct.probs[c]));
  }
  return gap;
}

// --- randomized instances ----------------------------------------------------

namespace {

DiscreteDistribution random_distribution(Rng& rng, int dim, int atoms) {
  DiscreteDistribution d;
  std::map<Eigen::VectorXd, int, VecLess> seen;
  while (static_cast<int>(d.support.size()) < atoms) {
    Eigen::VectorXd pt(dim);
    for (int k = 0; k < dim; ++k) {
      pt[k] = std::round(rng.uniform(-2.0, 2.0) * 8.0) / 8.0;
    }
    if (seen.count(pt)) continue;
    seen[pt] = 1;
    d.support.push_back(pt);
  }
  double total = 0.0;
  for (int i = 0; i < atoms; ++i) {
    d.probs.push_back(0.05 + rng.uniform());
    total += d.probs.back();
  }
  for (double& p : d.probs) p /= total;
  return d;
}

}  // namespace

PostIntInstance make_post_int_instance(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 101);
  const int dim = rng.bernoulli(0.5) ? 1 : 2;
  const int atoms_mu = rng.uniform_int(2, 6);
  const int atoms_nu = rng.uniform_int(2, 6);
  PostIntInstance inst;
  inst.mu = random_distribution(rng, dim, atoms_mu);
  inst.nu = random_distribution(rng, dim, atoms_nu);
  // h* = L * (w1 |x - p1| - w2 |x - p2|) with |w1| + |w2| <= 1 is exactly
  // L-Lipschitz-bounded under the Euclidean metric.
  const double L = rng.uniform(0.5, 4.0);
  inst.lipschitz = L;
  Eigen::VectorXd p1(dim), p2(dim);
  for (int k = 0; k < dim; ++k) {
    p1[k] = rng.uniform(-1.0, 1.0);
    p2[k] = rng.uniform(-1.0, 1.0);
  }
  double w1c = rng.uniform(0.0, 1.0);
  double w2c = rng.uniform(0.0, 1.0 - w1c);
  const double c0 = rng.uniform(-1.0, 1.0);
  inst.h_star = [L, p1, p2, w1c, w2c, c0](const Eigen::VectorXd& x) {
    return L * (w1c * (x - p1).norm() - w2c * (x - p2).norm()) + c0;
  };
  // Arbitrary bounded perturbation; eps_pred is computed exactly under nu.
  const double amp = rng.uniform(0.0, 0.5);
  const double freq = rng.uniform(0.5, 3.0);
  auto h_star = inst.h_star;
  inst.h_hat = [h_star, amp, freq](const Eigen::VectorXd& x) {
    return h_star(x) + amp * std::sin(freq * x.sum());
  };
  return inst;
}

TwoTermInstance make_two_term_instance(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 202);
  TwoTermInstance inst;
  const int atoms = rng.uniform_int(2, 6);
  inst.mu = random_distribution(rng, 1, atoms);
  // Perturb toward an independent distribution on the same support.
  inst.g.support = inst.mu.support;
  double total = 0.0;
  for (int i = 0; i < atoms; ++i) {
    inst.g.probs.push_back(inst.mu.probs[i] + rng.uniform(0.0, 0.3));
    total += inst.g.probs.back();
  }
  for (double& p : inst.g.probs) p /= total;
  inst.classes = rng.uniform_int(2, 3);
  const double lip = rng.uniform(0.5, 3.0);
  inst.lip_h = lip;
  // Piecewise-linear class-1 curve with slope <= lip/2; remaining mass split
  // evenly so the summed per-class Lipschitz constants stay within lip.
  const double slope = rng.uniform(-0.5, 0.5) * lip;
  const double center = rng.uniform(-1.0, 1.0);
  const int classes = inst.classes;
  auto curve = [slope, center, classes](const Eigen::VectorXd& x, double offs) {
    double p1 = 0.5 + 0.5 * std::clamp(offs + slope * (x[0] - center), -0.9, 0.9);
    std::vector<double> out(classes, (1.0 - p1) / (classes - 1));
    out[0] = p1;
    return out;
  };
  inst.h_cond = [curve](const Eigen::VectorXd& x) { return curve(x, 0.0); };
  const double offset = rng.uniform(-0.3, 0.3);
  inst.p_cond = [curve, offset](const Eigen::VectorXd& x) {
    return curve(x, offset);
  };
  return inst;
}

std::pair<DiscreteDistribution, DiscreteDistribution> make_distribution_pair(
    std::uint64_t seed, int max_atoms) {
  Rng rng = Rng::derive(seed, 303);
  const int atoms = rng.uniform_int(2, max_atoms);
  DiscreteDistribution p = random_distribution(rng, 1, atoms);
  DiscreteDistribution q;
  q.support = p.support;
  double total = 0.0;
  for (int i = 0; i < atoms; ++i) {
    q.probs.push_back(0.05 + rng.uniform());
    total += q.probs.back();
  }
  for (double& v : q.probs) v /= total;
  return {p, q};
}

}  // namespace pfnflow::oracle
