#include "pfnflow/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pfnflow {

namespace {

bool is_label_col(int j, const std::vector<int>& label_cols) {
  return std::find(label_cols.begin(), label_cols.end(), j) != label_cols.end();
}

// 1-D convolution with reflective padding, kernel applied along a row.
Eigen::VectorXd conv1d_reflect(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& w, double bias) {
  const int n = static_cast<int>(x.size());
  const int k = static_cast<int>(w.size());
  const int half = k / 2;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    double acc = bias;
    for (int t = 0; t < k; ++t) {
      int p = i + t - half;
      if (p < 0) p = -p;                     // reflect
      if (p >= n) p = 2 * (n - 1) - p;       // reflect
      p = std::clamp(p, 0, n - 1);
      acc += w[t] * x[p];
    }
    y[i] = acc;
  }
  return y;
}

// Two-layer convolutional score network over the feature axis: 1 -> channels
// -> 1, tanh between, reflective padding.
struct ScoreNet {
  std::vector<Eigen::VectorXd> w1;  // per channel
  Eigen::VectorXd b1;
  std::vector<Eigen::VectorXd> w2;
  double b2 = 0.0;

  static ScoreNet sample(const GateConfig& cfg, Rng& rng) {
    ScoreNet net;
    const double sd1 = 1.0 / std::sqrt(static_cast<double>(cfg.kernel));
    const double sd2 =
        1.0 / std::sqrt(static_cast<double>(cfg.kernel) * cfg.channels);
    net.b1.resize(cfg.channels);
    for (int c = 0; c < cfg.channels; ++c) {
      Eigen::VectorXd w(cfg.kernel);
      for (int t = 0; t < cfg.kernel; ++t) w[t] = rng.gaussian() * sd1;
      net.w1.push_back(w);
      net.b1[c] = rng.gaussian() * 0.1;
    }
    for (int c = 0; c < cfg.channels; ++c) {
      Eigen::VectorXd w(cfg.kernel);
      for (int t = 0; t < cfg.kernel; ++t) w[t] = rng.gaussian() * sd2;
      net.w2.push_back(w);
    }
    net.b2 = rng.gaussian() * 0.1;
    return net;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
    for (std::size_t c = 0; c < w1.size(); ++c) {
      Eigen::VectorXd h = conv1d_reflect(x, w1[c], b1[static_cast<int>(c)]);
      h = h.array().tanh();
      acc += conv1d_reflect(h, w2[c], 0.0);
    }
    acc.array() += b2;
    return acc;
  }
};

// ceil(alpha * n)-th smallest value; k == 0 means nothing is below threshold.
double quantile_threshold(std::vector<double> scores, double alpha, int* k_out) {
  const int n = static_cast<int>(scores.size());
  const int k = static_cast<int>(std::ceil(alpha * n));
  if (k_out) *k_out = k;
  if (k <= 0) return -std::numeric_limits<double>::infinity();
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
  return scores[k - 1];
}

Mask gate_impl(const Matrixd& z, const GateConfig& cfg, std::uint64_t seed,
               int n_features, const std::vector<int>& label_cols,
               double alpha_lo, double alpha_hi) {
  const int n = static_cast<int>(z.rows());
  if (n < 1) throw std::invalid_argument("score_quantile_gate: empty sample set");
  if (cfg.kernel % 2 == 0) {
    throw std::invalid_argument("score_quantile_gate: kernel size must be odd");
  }
  if (z.cols() % cfg.n_layers != 0) {
    throw std::invalid_argument("score_quantile_gate: z width not divisible by layers");
  }
  const int seg = static_cast<int>(z.cols()) / cfg.n_layers;
  std::vector<int> coords = cfg.score_coords;
  if (coords.empty()) {
    coords.resize(n_features);
    std::iota(coords.begin(), coords.end(), 0);
  }
  if (static_cast<int>(coords.size()) < n_features) {
    throw std::invalid_argument("score_quantile_gate: too few score coords");
  }
  for (int j = 0; j < n_features; ++j) {
    if (coords[j] < 0 || coords[j] >= seg) {
      throw std::invalid_argument("score_quantile_gate: score coord out of range");
    }
  }

  Rng rng = Rng::derive(seed, 7001);
  // One independent score network per feature: with propagation off, column
  // j's indicators depend only on (z, own network, own layer index, own
  // alpha), so indicators are conditionally independent given z. A shared
  // network would couple columns through its weights and defeat the
  // no-cross-field-propagation ablation.
  std::vector<ScoreNet> nets;
  nets.reserve(n_features);
  for (int j = 0; j < n_features; ++j) {
    nets.push_back(ScoreNet::sample(cfg, rng));
  }

  // Per-feature layer index and quantile level.
  std::vector<int> layer_of(n_features, 0);
  std::vector<double> alpha(n_features);
  for (int j = 0; j < n_features; ++j) {
    layer_of[j] = cfg.sample_layer_per_feature
                      ? static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(cfg.n_layers)))
                      : 0;
    alpha[j] = rng.uniform(alpha_lo, alpha_hi);
  }

  Matrixd scores(n, n_features);
  for (int j = 0; j < n_features; ++j) {
    const int l = layer_of[j];
    for (int i = 0; i < n; ++i) {
      scores(i, j) =
          nets[j].forward(z.row(i).segment(l * seg, seg).transpose())[coords[j]];
    }
  }

  auto threshold_pass = [&](const Matrixd& s) {
    Mask::Grid grid = Mask::Grid::Zero(n, n_features);
    for (int j = 0; j < n_features; ++j) {
      if (is_label_col(j, label_cols)) continue;
      std::vector<double> col(n);
      for (int i = 0; i < n; ++i) col[i] = s(i, j);
      int k = 0;
      const double tau = quantile_threshold(col, alpha[j], &k);
      if (k <= 0) continue;
      for (int i = 0; i < n; ++i) {
        if (s(i, j) <= tau) grid(i, j) = 1;
      }
    }
    return grid;
  };

  Mask::Grid grid = threshold_pass(scores);

  if (cfg.propagate) {
    // Second pass: the drawn indicators flow through one convolution over the
    // feature axis and shift the scores, so masks depend on other masks.
    Eigen::VectorXd w_prop(cfg.kernel);
    {
      const double sd = cfg.propagation_scale / std::sqrt(cfg.kernel);
      for (int t = 0; t < cfg.kernel; ++t) w_prop[t] = rng.gaussian() * sd;
    }
    Matrixd adjusted = scores;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd ind(n_features);
      for (int j = 0; j < n_features; ++j) ind[j] = grid(i, j) ? 1.0 : 0.0;
      adjusted.row(i) += conv1d_reflect(ind, w_prop, 0.0).transpose();
    }
    grid = threshold_pass(adjusted);
  }

  Mask mask;
  mask.m = std::move(grid);
  mask.mechanism = cfg.propagate ? "gate" : "gate-nsm";
  mask.seed = seed;
  std::ostringstream p;
  p << "alpha=[" << alpha_lo << "," << alpha_hi << "] layers=" << cfg.n_layers;
  mask.params = p.str();
  return mask;
}

}  // namespace

double Mask::rate_of_cols(const std::vector<int>& cols) const {
  if (cols.empty()) return 0.0;
  double total = 0.0;
  for (int j : cols) total += m.col(j).cast<double>().sum();
  return total / (static_cast<double>(m.rows()) * cols.size());
}

Mask mcar_mask(int n, int d, double p, std::uint64_t seed,
               const std::vector<int>& label_cols) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("mcar_mask: p outside [0,1]");
  Rng rng = Rng::derive(seed, 7100);
  Mask mask;
  mask.m = Mask::Grid::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      if (is_label_col(j, label_cols)) continue;
      mask.m(i, j) = rng.bernoulli(p) ? 1 : 0;
    }
  }
  mask.mechanism = "mcar";
  mask.seed = seed;
  mask.params = "p=" + std::to_string(p);
  return mask;
}

Mask score_quantile_gate(const Matrixd& z, int step, const GateConfig& cfg,
                         std::uint64_t seed, int n_features,
                         const std::vector<int>& label_cols) {
  return gate_impl(z, cfg, seed, n_features, label_cols, cfg.alpha_min,
                   cfg.alpha_max(step));
}

Mask score_quantile_gate_fixed_alpha(const Matrixd& z, double alpha,
                                     const GateConfig& cfg, std::uint64_t seed,
                                     int n_features,
                                     const std::vector<int>& label_cols) {
  return gate_impl(z, cfg, seed, n_features, label_cols, alpha, alpha);
}

std::vector<int> mnar_input_columns(int d, const MnarConfig& cfg,
                                    std::uint64_t seed,
                                    const std::vector<int>& label_cols) {
  std::vector<int> eligible;
  for (int j = 0; j < d; ++j) {
    if (!is_label_col(j, label_cols)) eligible.push_back(j);
  }
  const int de = static_cast<int>(eligible.size());
  if (de < 2) {
    throw std::invalid_argument("mnar_logistic_m2m: needs at least 2 columns");
  }
  int d_in = std::max(static_cast<int>(std::floor(cfg.q() * de)), 1);
  d_in = std::min(d_in, de - 1);
  Rng rng = Rng::derive(seed, 7200);
  rng.shuffle(eligible);
  eligible.resize(d_in);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

Mask mnar_logistic_m2m(const Matrixd& x, const MnarConfig& cfg,
                       std::uint64_t seed,
                       const std::vector<int>& label_cols) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const double p = cfg.target_rate;
  if (p <= 0.0 || p >= 1.0) {
    throw std::invalid_argument("mnar_logistic_m2m: p outside (0,1)");
  }
  if (!x.allFinite()) {
    throw std::invalid_argument("mnar_logistic_m2m: x must be fully observed");
  }
  const std::vector<int> s_cols = mnar_input_columns(d, cfg, seed, label_cols);
  Rng rng = Rng::derive(seed, 7201);

  // Standardize columns so the Gaussian weight law and the rate calibration
  // are scale-free.
  Matrixd xs = x;
  for (int j = 0; j < d; ++j) {
    const double mu = xs.col(j).mean();
    double sd = std::sqrt((xs.col(j).array() - mu).square().mean());
    if (sd < 1e-12) sd = 1.0;
    xs.col(j) = (xs.col(j).array() - mu) / sd;
  }

  Mask mask;
  mask.m = Mask::Grid::Zero(n, d);
  // MCAR(p) on the input columns.
  for (int i = 0; i < n; ++i) {
    for (int j : s_cols) mask.m(i, j) = rng.bernoulli(p) ? 1 : 0;
  }

  const int ds = static_cast<int>(s_cols.size());
  auto sigmoid = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };

  for (int j = 0; j < d; ++j) {
    if (is_label_col(j, label_cols)) continue;
    if (std::find(s_cols.begin(), s_cols.end(), j) != s_cols.end()) continue;
    Eigen::VectorXd w(ds), v(ds);
    for (int t = 0; t < ds; ++t) {
      w[t] = rng.gaussian();
      v[t] = rng.gaussian();
    }
    // Base logits without the intercept.
    Eigen::VectorXd base(n);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int t = 0; t < ds; ++t) {
        const double mis = mask.m(i, s_cols[t]) ? 1.0 : 0.0;
        acc += xs(i, s_cols[t]) * mis * w[t] + (1.0 - mis) * v[t];
      }
      base[i] = acc;
    }
    // Bisection on the intercept: the mean sigmoid is monotone in b.
    double lo = -50.0, hi = 50.0;
    auto mean_rate = [&](double b) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += sigmoid(base[i] + b);
      return acc / n;
    };
    double b = 0.0;
    bool converged = false;
    for (int it = 0; it < cfg.bisection_max_iter; ++it) {
      b = 0.5 * (lo + hi);
      const double r = mean_rate(b);
      if (std::abs(r - p) <= cfg.bisection_tol) {
        converged = true;
        break;
      }
      if (r < p) {
        lo = b;
      } else {
        hi = b;
      }
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "mnar_logistic_m2m: bisection did not converge for column " << j
          << " (bracket [" << lo << ", " << hi << "], rate(lo)=" << mean_rate(lo)
          << ", rate(hi)=" << mean_rate(hi) << ", target " << p << ")";
      throw std::runtime_error(msg.str());
    }
    for (int i = 0; i < n; ++i) {
      mask.m(i, j) = rng.bernoulli(sigmoid(base[i] + b)) ? 1 : 0;
    }
  }

  mask.mechanism = "mnar-logistic-m2m";
  mask.seed = seed;
  std::ostringstream pr;
  pr << "p=" << p << " |S|=" << ds;
  mask.params = pr.str();
  return mask;
}

DependenceReport mask_dependence_probe(const std::vector<Mask>& draws,
                                       int permutations, std::uint64_t seed) {
  DependenceReport rep;
  if (draws.empty()) return rep;
  rep.draws = static_cast<int>(draws.size());
  rep.rows = static_cast<int>(draws[0].rows());
  rep.cols = static_cast<int>(draws[0].cols());
  if (rep.cols < 2) return rep;

  const int K = rep.draws;
  const int n = rep.rows;
  const int d = rep.cols;

  // values[j]: n x K matrix of indicators.
  std::vector<Matrixd> values(d, Matrixd(n, K));
  for (int k = 0; k < K; ++k) {
    if (draws[k].rows() != n || draws[k].cols() != d) {
      throw std::invalid_argument("mask_dependence_probe: inconsistent shapes");
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        values[j](i, k) = draws[k].m(i, j) ? 1.0 : 0.0;
      }
    }
  }

  // Pooled Pearson correlation over all (row, draw) units.
  rep.pooled_corr = Eigen::MatrixXd::Identity(d, d);
  std::vector<double> mean_j(d), sd_j(d);
  for (int j = 0; j < d; ++j) {
    mean_j[j] = values[j].mean();
    sd_j[j] = std::sqrt((values[j].array() - mean_j[j]).square().mean());
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      double cov =
          ((values[a].array() - mean_j[a]) * (values[b].array() - mean_j[b]))
              .mean();
      double corr = 0.0;
      if (sd_j[a] > 0.0 && sd_j[b] > 0.0) corr = cov / (sd_j[a] * sd_j[b]);
      rep.pooled_corr(a, b) = rep.pooled_corr(b, a) = corr;
    }
  }

  // Permutation test on T = sum_i <a_i, b_i> with rows centered per row
  // (conditioning on the latent behind that row). Draw labels of the second
  // column are permuted jointly across rows: draws are i.i.d., so relabeling
  // them is null-invariant while preserving each draw's internal cross-row
  // structure. M->M propagation couples columns within a draw and breaks
  // under the relabeling, which is what the test detects.
  std::vector<Matrixd> centered(d);
  for (int j = 0; j < d; ++j) {
    centered[j] = values[j];
    for (int i = 0; i < n; ++i) {
      centered[j].row(i).array() -= values[j].row(i).mean();
    }
  }
  rep.perm_p = Eigen::MatrixXd::Ones(d, d);
  Rng rng = Rng::derive(seed, 7300);
  std::vector<int> perm(K);
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      const double t_obs =
          std::abs((centered[a].array() * centered[b].array()).sum());
      int ge = 0;
      for (int rep_i = 0; rep_i < permutations; ++rep_i) {
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        double t_perm = 0.0;
        for (int i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int k = 0; k < K; ++k) {
            acc += centered[a](i, k) * centered[b](i, perm[k]);
          }
          t_perm += acc;
        }
        if (std::abs(t_perm) >= t_obs) ++ge;
      }
      const double pval = (1.0 + ge) / (1.0 + permutations);
      rep.perm_p(a, b) = rep.perm_p(b, a) = pval;
      if (pval < rep.min_p) {
        rep.min_p = pval;
        rep.min_p_a = a;
        rep.min_p_b = b;
      }
    }
  }
  return rep;
}

}  // namespace pfnflow
