#pragma once

#include <cstdint>
#include <vector>

#include "pfnflow/missingness.hpp"
#include "pfnflow/rng.hpp"
#include "pfnflow/tensor.hpp"

namespace pfnflow {

// Prior over data-generating mechanisms: a depth-L MLP over Gaussian
// exogenous causes, sparsified by Bernoulli weight masks (layers >= 2) and
// optional block sparsification, with a random rotation and a random
// selection of feature / label / missingness-score coordinates from the
// shared latent representation.
struct MechanismConfig {
  int d = 8;                 // feature count
  int c_min = 2, c_max = 10; // class-count range
  int depth = 2;             // L >= 2
  int hidden = 0;            // H; 0 = auto: max(d_y + 2d, 32)
  bool random_activation = true;            // tanh / identity / relu
  Activation activation = Activation::kTanh;  // used when not random
  std::vector<double> keep_prob;  // per layer 2..L; empty = all 0.8
  bool block_sparsify = true;
  bool randomize_exo_mean = true;   // mean ~ N(0,1)
  bool randomize_exo_scale = true;  // scale ~ LogUniform[0.5, 2]
  double noise_scale_min = 1e-3;    // output noise, log-uniform range
  double noise_scale_max = 3e-1;
  double categorical_prob = 0.2;
  int categorical_levels_min = 2;
  int categorical_levels_max = 6;

  int hidden_for(int classes) const {
    const int floor_h = classes + 2 * d;
    if (hidden > 0) return std::max(hidden, floor_h);
    return std::max(floor_h, 32);
  }
  double keep_prob_for_layer(int layer_ge2) const {
    if (keep_prob.empty()) return 0.8;
    const int idx = std::min<int>(layer_ge2 - 2, static_cast<int>(keep_prob.size()) - 1);
    return keep_prob[idx];
  }
  void validate() const;
};

struct Mechanism {
  std::vector<Matrixd> weights;      // W^(l), l = 1..L, each H x fan_in
  std::vector<Eigen::VectorXd> biases;
  std::vector<Matrixd> weight_masks; // first layer all ones
  Matrixd rotation;                  // H x H orthogonal
  std::vector<int> feature_coords;   // d distinct indices into the latent
  std::vector<int> label_coords;     // d_y distinct indices
  std::vector<int> score_coords;     // d distinct indices (missingness gate)
  Eigen::VectorXd noise_scale;       // per feature, > 0
  Activation activation = Activation::kTanh;
  int classes = 2;
  int d_u = 0;                       // exogenous dimension (= H)
  Eigen::VectorXd exo_mean, exo_scale;
  std::vector<int> categorical_levels;  // per feature, 0 = continuous

  int hidden() const { return static_cast<int>(rotation.rows()); }
  int depth() const { return static_cast<int>(weights.size()); }
  int n_features() const { return static_cast<int>(feature_coords.size()); }
};

struct CompleteData {
  Matrixd x;               // n x d
  std::vector<int> labels; // 1..C
  Matrixd z;               // n x (L*H) concatenated hidden states
};

struct SyntheticTask {
  Mechanism mechanism;
  Matrixd x;               // complete features
  std::vector<int> labels;
  Matrixd z;
  Mask mask;
  int split = 0;           // context rows = [0, split)
};

struct TaskConfig {
  MechanismConfig mechanism;
  GateConfig gate;
  bool gate_enabled = true;
  int gate_step = 1000000;  // fully warmed up by default
  int n = 1152;
};

Mechanism sample_mechanism(const MechanismConfig& config, std::uint64_t seed);

// Exogenous draw, depth-L forward pass, coordinate selection plus output
// noise, rank-based quantile binning for the label block and categorical
// features. Non-finite forwards retry with a reseeded draw (8 attempts).
CompleteData generate_complete_data(const Mechanism& m, int n,
                                    std::uint64_t seed);

SyntheticTask sample_task(const TaskConfig& config, std::uint64_t seed);

// Rank-based quantile binning into `bins` classes; returns values in
// [0, bins). Balanced up to rounding when scores are distinct.
std::vector<int> quantile_bin(const Eigen::VectorXd& scores, int bins);

}  // namespace pfnflow
