#include "pfnflow/scm_prior.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pfnflow {

namespace {

Matrixd gaussian_matrix(int rows, int cols, double sd, Rng& rng) {
  Matrixd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.gaussian() * sd;
  }
  return m;
}

// Orthogonal matrix from the QR decomposition of a Gaussian matrix, with the
// sign convention fixed by R's diagonal so the draw is deterministic.
Matrixd random_orthogonal(int n, Rng& rng) {
  Matrixd g = gaussian_matrix(n, n, 1.0, rng);
  Eigen::HouseholderQR<Matrixd> qr(g);
  Matrixd q = qr.householderQ();
  Matrixd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

void MechanismConfig::validate() const {
  if (d < 1) throw std::invalid_argument("MechanismConfig: d < 1");
  if (depth < 2) throw std::invalid_argument("MechanismConfig: depth must be >= 2");
  if (c_min < 2 || c_max < c_min) {
    throw std::invalid_argument("MechanismConfig: bad class range");
  }
  for (double k : keep_prob) {
    if (k <= 0.0 || k > 1.0) {
      throw std::invalid_argument("MechanismConfig: keep probability outside (0,1]");
    }
  }
  if (hidden > 0 && hidden < c_max + 2 * d) {
    throw std::invalid_argument(
        "MechanismConfig: hidden width must satisfy H >= d_y + 2d");
  }
}

std::vector<int> quantile_bin(const Eigen::VectorXd& scores, int bins) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  std::vector<int> out(n, 0);
  for (int r = 0; r < n; ++r) {
    out[order[r]] = std::min(bins - 1, static_cast<int>(
                                            (static_cast<long long>(r) * bins) / n));
  }
  return out;
}

Mechanism sample_mechanism(const MechanismConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng::derive(seed, 8001);

  Mechanism m;
  m.classes = rng.uniform_int(config.c_min, config.c_max);
  const int H = config.hidden_for(m.classes);
  const int L = config.depth;
  m.d_u = H;
  m.activation = config.random_activation
                     ? std::array<Activation, 3>{Activation::kTanh,
                                                 Activation::kIdentity,
                                                 Activation::kRelu}
                           [rng.uniform_int(static_cast<std::uint64_t>(3))]
                     : config.activation;

  for (int l = 1; l <= L; ++l) {
    const int fan_in = H;  // first layer consumes the H-dim exogenous vector
    m.weights.push_back(gaussian_matrix(H, fan_in, 1.0 / std::sqrt(fan_in), rng));
    Eigen::VectorXd b(H);
    for (int i = 0; i < H; ++i) b[i] = rng.gaussian() * 0.1;
    m.biases.push_back(b);
    Matrixd mask = Matrixd::Ones(H, fan_in);
    if (l >= 2) {
      const double keep = config.keep_prob_for_layer(l);
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < fan_in; ++j) {
          if (!rng.bernoulli(keep)) mask(i, j) = 0.0;
        }
      }
      if (config.block_sparsify && rng.bernoulli(0.5)) {
        // Zero one contiguous block of rows x cols.
        const int bh = 1 + static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(std::max(1, H / 4))));
        const int bw = 1 + static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(std::max(1, fan_in / 4))));
        const int r0 = static_cast<int>(
            rng.uniform_int(static_cast<std::uint64_t>(H - bh + 1)));
        const int c0 = static_cast<int>(
            rng.uniform_int(static_cast<std::uint64_t>(fan_in - bw + 1)));
        mask.block(r0, c0, bh, bw).setZero();
      }
    }
    m.weight_masks.push_back(mask);
  }

  m.rotation = random_orthogonal(H, rng);

  // Distinct coordinate selection: d_y for the label block, d for features,
  // d for missingness scores.
  std::vector<int> all(H);
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  int at = 0;
  m.label_coords.assign(all.begin() + at, all.begin() + at + m.classes);
  at += m.classes;
  m.feature_coords.assign(all.begin() + at, all.begin() + at + config.d);
  at += config.d;
  m.score_coords.assign(all.begin() + at, all.begin() + at + config.d);

  m.noise_scale.resize(config.d);
  for (int j = 0; j < config.d; ++j) {
    m.noise_scale[j] = rng.log_uniform(config.noise_scale_min, config.noise_scale_max);
  }

  m.exo_mean = Eigen::VectorXd::Zero(m.d_u);
  m.exo_scale = Eigen::VectorXd::Ones(m.d_u);
  for (int j = 0; j < m.d_u; ++j) {
    if (config.randomize_exo_mean) m.exo_mean[j] = rng.gaussian();
    if (config.randomize_exo_scale) m.exo_scale[j] = rng.log_uniform(0.5, 2.0);
  }

  m.categorical_levels.assign(config.d, 0);
  for (int j = 0; j < config.d; ++j) {
    if (rng.bernoulli(config.categorical_prob)) {
      m.categorical_levels[j] = rng.uniform_int(config.categorical_levels_min,
                                                config.categorical_levels_max);
    }
  }
  return m;
}

CompleteData generate_complete_data(const Mechanism& m, int n,
                                    std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("generate_complete_data: n < 2");
  const int H = m.hidden();
  const int L = m.depth();
  const int d = m.n_features();

  for (int attempt = 0; attempt < 8; ++attempt) {
    Rng rng = Rng::derive(seed, 8100 + static_cast<std::uint64_t>(attempt));
    Matrixd u(n, m.d_u);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m.d_u; ++j) {
        u(i, j) = m.exo_mean[j] + m.exo_scale[j] * rng.gaussian();
      }
    }
    Matrixd z(n, L * H);
    Matrixd h = u;
    for (int l = 0; l < L; ++l) {
      const Matrixd w = m.weights[l].cwiseProduct(m.weight_masks[l]);
      Matrixd next = h * w.transpose();
      next.rowwise() += m.biases[l].transpose();
      next = next.unaryExpr(
          [&](double v) { return activation_scalar(v, m.activation); });
      h = std::move(next);
      z.middleCols(l * H, H) = h;
    }
    Matrixd rotated = h * m.rotation.transpose();
    if (!rotated.allFinite()) continue;

    CompleteData out;
    out.z = std::move(z);
    out.x.resize(n, d);
    for (int j = 0; j < d; ++j) {
      for (int i = 0; i < n; ++i) {
        out.x(i, j) = rotated(i, m.feature_coords[j]) +
                      m.noise_scale[j] * rng.gaussian();
      }
      if (m.categorical_levels[j] > 0) {
        const std::vector<int> bins =
            quantile_bin(out.x.col(j), m.categorical_levels[j]);
        for (int i = 0; i < n; ++i) out.x(i, j) = static_cast<double>(bins[i]);
      }
    }
    if (!out.x.allFinite()) continue;

    const Eigen::VectorXd label_score = rotated.col(m.label_coords[0]);
    const std::vector<int> bins = quantile_bin(label_score, m.classes);
    out.labels.resize(n);
    for (int i = 0; i < n; ++i) out.labels[i] = bins[i] + 1;
    return out;
  }
  throw std::runtime_error(
      "generate_complete_data: non-finite forward after 8 reseeded retries");
}

SyntheticTask sample_task(const TaskConfig& config, std::uint64_t seed) {
  SyntheticTask task;
  task.mechanism = sample_mechanism(config.mechanism, seed);
  CompleteData data = generate_complete_data(task.mechanism, config.n,
                                             Rng::derive(seed, 8200).next_u64());
  task.x = std::move(data.x);
  task.labels = std::move(data.labels);
  task.z = std::move(data.z);
  const int d = task.mechanism.n_features();
  if (config.gate_enabled) {
    GateConfig gate = config.gate;
    gate.n_layers = task.mechanism.depth();
    gate.score_coords = task.mechanism.score_coords;
    task.mask = score_quantile_gate(task.z, config.gate_step, gate,
                                    Rng::derive(seed, 8300).next_u64(), d);
  } else {
    task.mask.m = Mask::Grid::Zero(config.n, d);
    task.mask.mechanism = "none";
    task.mask.seed = seed;
  }
  task.split = static_cast<int>(std::floor(0.95 * config.n));
  return task;
}

}  // namespace pfnflow
