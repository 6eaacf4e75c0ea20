#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "pfnflow/rng.hpp"
#include "pfnflow/tensor.hpp"

namespace pfnflow {

// Binary missingness matrix, 1 = missing. Label columns are always forced
// observed by every generator.
struct Mask {
  using Grid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
  Grid m;
  std::string mechanism;
  std::uint64_t seed = 0;
  std::string params;

  Eigen::Index rows() const { return m.rows(); }
  Eigen::Index cols() const { return m.cols(); }
  double rate() const {
    return m.size() == 0 ? 0.0 : m.cast<double>().sum() / m.size();
  }
  double rate_of_cols(const std::vector<int>& cols) const;
  Matrixd as_double() const { return m.cast<double>(); }
};

// Score-and-quantile gate configuration. alpha_max warms up linearly from
// warmup_start to warmup_end over warmup_steps optimization steps.
struct GateConfig {
  double alpha_min = 0.0;
  double warmup_start = 0.3;
  double warmup_end = 0.8;
  int warmup_steps = 1000;
  // Score network: two feature-axis convolutions, kernel 7, tanh between.
  int kernel = 7;
  int channels = 4;
  // Latent layout: z holds n_layers segments of equal width; per feature a
  // layer index is drawn uniformly when sample_layer_per_feature is set.
  int n_layers = 1;
  bool sample_layer_per_feature = true;
  // Indices into a segment where feature scores are read; empty = identity.
  std::vector<int> score_coords;
  // M -> M propagation: one extra convolution over the drawn indicators.
  // Off = the no-cross-field-propagation ablation.
  bool propagate = true;
  double propagation_scale = 1.0;

  double alpha_max(int step) const {
    const double f =
        warmup_steps <= 0
            ? 1.0
            : std::min(static_cast<double>(step), static_cast<double>(warmup_steps)) /
                  warmup_steps;
    return warmup_start + (warmup_end - warmup_start) * f;
  }
};

struct MnarConfig {
  double target_rate = 0.3;  // p in (0,1)
  // Input-column fraction; negative = paper rule (0.3 if p <= 0.3 else 0.1).
  double input_fraction = -1.0;
  double bisection_tol = 1e-3;
  int bisection_max_iter = 100;

  double q() const {
    if (input_fraction >= 0.0) return input_fraction;
    return target_rate <= 0.3 ? 0.3 : 0.1;
  }
};

// i.i.d. Bernoulli(p) per non-label entry.
Mask mcar_mask(int n, int d, double p, std::uint64_t seed,
               const std::vector<int>& label_cols = {});

// Randomized score-and-quantile gate driven by the latent z (one row per
// sample). A score network is freshly sampled from `seed`; per feature j a
// layer index and a quantile level alpha_j ~ U[alpha_min, alpha_max(step)]
// are drawn, the threshold is the ceil(alpha_j * n)-th smallest score, and
// entries with score <= threshold become missing. With propagation on, the
// drawn indicators are fed back through one more convolution and the adjusted
// scores are re-thresholded at the same alpha_j.
Mask score_quantile_gate(const Matrixd& z, int step, const GateConfig& cfg,
                         std::uint64_t seed, int n_features,
                         const std::vector<int>& label_cols = {});

// Fixed-alpha variant used by tests and calibration checks.
Mask score_quantile_gate_fixed_alpha(const Matrixd& z, double alpha,
                                     const GateConfig& cfg, std::uint64_t seed,
                                     int n_features,
                                     const std::vector<int>& label_cols = {});

// Logistic MNAR with M->M propagation: |S| = max(floor(q d), 1) input columns
// are masked MCAR(p); each remaining column j gets
//   P(M_ij = 1) = sigmoid((X_iS .* M_iS)' w_j + (1 - M_iS)' v_j + b_j)
// with b_j calibrated by bisection so the mean sigmoid matches p. X columns
// are standardized before the logits so the calibration is scale-free.
Mask mnar_logistic_m2m(const Matrixd& x, const MnarConfig& cfg,
                       std::uint64_t seed,
                       const std::vector<int>& label_cols = {});

// Columns chosen as logistic inputs for a given (x, cfg, seed); exposed so
// protocols can report |S|.
std::vector<int> mnar_input_columns(int d, const MnarConfig& cfg,
                                    std::uint64_t seed,
                                    const std::vector<int>& label_cols = {});

// Pairwise dependence probe over repeated mask draws from one mechanism.
// pooled_corr is the Pearson correlation over all (draw, row) units;
// perm_p is a stratified permutation test (draws permuted within each row)
// that is sensitive to M->M coupling but blind to dependence explained by
// the shared latent z.
struct DependenceReport {
  int draws = 0;
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd pooled_corr;
  Eigen::MatrixXd perm_p;
  double min_p = 1.0;
  int min_p_a = -1;
  int min_p_b = -1;
  bool empty() const { return cols < 2; }
};

DependenceReport mask_dependence_probe(const std::vector<Mask>& draws,
                                       int permutations = 200,
                                       std::uint64_t seed = 0);

}  // namespace pfnflow
