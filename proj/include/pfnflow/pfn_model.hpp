#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfnflow/bayes_oracle.hpp"
#include "pfnflow/optimizer.hpp"
#include "pfnflow/rng.hpp"
#include "pfnflow/scm_prior.hpp"
#include "pfnflow/tensor.hpp"

namespace pfnflow {

// Paper-scale values in comments; desk defaults keep CPU runs tractable.
struct PfnConfig {
  int width = 64;        // 512
  int layers = 3;        // 12
  int heads = 2;         // 4
  int ff_width = 128;    // 1024
  double dropout = 0.0;  // paper uses 0; kept as a gated ablation knob
  Activation activation = Activation::kGelu;
  int max_classes = 10;
  int max_features = 16;
  double self_distill_weight = 0.0;  // paper mentions 0.1; form undefined, off

  void validate() const {
    if (width % heads != 0) {
      throw std::invalid_argument("PfnConfig: width must divide into heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("PfnConfig: dropout outside [0,1)");
    }
    if (layers < 1 || max_classes < 2 || max_features < 1) {
      throw std::invalid_argument("PfnConfig: bad sizes");
    }
  }
};

// One task as the model consumes it. x_obs holds zeros at missing entries;
// labels are 1..C for all rows (query labels are the training targets).
template <class S>
struct TaskInput {
  Matrix<S> x_obs;     // n x d
  Matrix<S> mask;      // n x d, 1 = missing
  Matrix<S> x_full;    // n x d complete values (training only; may be empty)
  std::vector<int> labels;  // 1..C, empty when unlabeled
  int n_ctx = 0;
  int classes = 2;
  bool label_conditioning = true;
  // Nonzero enables dropout draws for this forward pass (training only and
  // only when the config's dropout rate is positive; the paper setting is 0).
  std::uint64_t dropout_seed = 0;

  int rows() const { return static_cast<int>(x_obs.rows()); }
  int features() const { return static_cast<int>(x_obs.cols()); }
};

template <class S>
TaskInput<S> task_input_from_synthetic(const SyntheticTask& task) {
  TaskInput<S> in;
  const Matrixd m = task.mask.as_double();
  in.x_obs = (task.x.array() * (1.0 - m.array())).matrix().template cast<S>();
  in.mask = m.template cast<S>();
  in.x_full = task.x.template cast<S>();
  in.labels = task.labels;
  in.n_ctx = task.split;
  in.classes = task.mechanism.classes;
  return in;
}

// Builds a model input from discrete-prior rows (context followed by one or
// more query rows).
template <class S>
TaskInput<S> task_input_from_rows(const std::vector<oracle::MaskedRow>& rows,
                                  int n_ctx, int d, int classes) {
  TaskInput<S> in;
  const int n = static_cast<int>(rows.size());
  in.x_obs = Matrix<S>::Zero(n, d);
  in.mask = Matrix<S>::Zero(n, d);
  in.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const bool missing = rows[i].mask_code & (1 << j);
      in.mask(i, j) = missing ? S(1) : S(0);
      if (!missing && (rows[i].obs_code & (1 << j))) in.x_obs(i, j) = S(1);
    }
    in.labels[i] = rows[i].label;
  }
  in.n_ctx = n_ctx;
  in.classes = classes;
  return in;
}

// Transformer encoder mapping an incomplete context dataset plus incomplete
// queries to per-query class logits. Tokens are per-row sums of a feature
// value projection (missing entries zeroed), a mask-indicator projection, a
// label embedding on context rows, and a context/query type embedding. The
// attention pattern keeps query rows independent of one another, and all
// attention reductions are canonically ordered, so context permutations leave
// query outputs bit-identical.
template <class S>
class PfnModel {
 public:
  using Mat = Matrix<S>;
  using V = Var<S>;

  PfnModel(PfnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::derive(seed, 9001);
    const int W = cfg_.width;
    const int F = cfg_.max_features;
    const int C = cfg_.max_classes;
    idx_.value_w = add_gaussian("embed.value_w", F, W, rng);
    idx_.mask_w = add_gaussian("embed.mask_w", F, W, rng);
    idx_.bias = add_zeros("embed.bias", 1, W);
    idx_.label_emb = add_gaussian("embed.label", C + 1, W, rng);
    idx_.type_emb = add_gaussian("embed.type", 2, W, rng);
    idx_.layers.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& L = idx_.layers[l];
      L.ln1_g = add_ones(p + "ln1.g", 1, W);
      L.ln1_b = add_zeros(p + "ln1.b", 1, W);
      L.wq = add_gaussian(p + "attn.wq", W, W, rng);
      L.bq = add_zeros(p + "attn.bq", 1, W);
      L.wk = add_gaussian(p + "attn.wk", W, W, rng);
      L.bk = add_zeros(p + "attn.bk", 1, W);
      L.wv = add_gaussian(p + "attn.wv", W, W, rng);
      L.bv = add_zeros(p + "attn.bv", 1, W);
      L.wo = add_gaussian(p + "attn.wo", W, W, rng);
      L.bo = add_zeros(p + "attn.bo", 1, W);
      L.ln2_g = add_ones(p + "ln2.g", 1, W);
      L.ln2_b = add_zeros(p + "ln2.b", 1, W);
      L.w1 = add_gaussian(p + "ff.w1", W, cfg_.ff_width, rng);
      L.b1 = add_zeros(p + "ff.b1", 1, cfg_.ff_width);
      L.w2 = add_gaussian(p + "ff.w2", cfg_.ff_width, W, rng);
      L.b2 = add_zeros(p + "ff.b2", 1, W);
    }
    idx_.lnf_g = add_ones("final.ln.g", 1, W);
    idx_.lnf_b = add_zeros("final.ln.b", 1, W);
    idx_.head_w = add_gaussian("head.w", W, C, rng);
    idx_.head_b = add_zeros("head.b", 1, C);
  }

  const PfnConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  // Per-tape view of the parameters (leaf vars in store order).
  struct Bound {
    std::vector<V> vars;
  };

  Bound bind(Tape<S>& tape) const {
    Bound b;
    b.vars.reserve(params_.count());
    for (int i = 0; i < params_.count(); ++i) {
      b.vars.push_back(tape.leaf(params_.value(i)));
    }
    return b;
  }

  struct ForwardVars {
    V states;  // n x width, final layer-normed token states
    V logits;  // n x max_classes
  };

  // Token embeddings for a task; one token per row.
  V embed_rows(Tape<S>& tape, const Bound& b, const TaskInput<S>& in) const {
    const int n = in.rows();
    if (in.features() > cfg_.max_features) {
      throw std::invalid_argument("PfnModel: feature count exceeds max_features");
    }
    if (in.n_ctx < 1 || in.n_ctx >= n) {
      throw std::invalid_argument("PfnModel: need >= 1 context and >= 1 query row");
    }
    Mat xp = Mat::Zero(n, cfg_.max_features);
    Mat mp = Mat::Zero(n, cfg_.max_features);
    xp.leftCols(in.features()) = in.x_obs;
    mp.leftCols(in.features()) = in.mask;
    V x = tape.leaf(std::move(xp));
    V m = tape.leaf(std::move(mp));
    V tok = tape.add(tape.matmul(x, b.vars[idx_.value_w]),
                     tape.matmul(m, b.vars[idx_.mask_w]));
    tok = tape.add_row(tok, b.vars[idx_.bias]);
    // Label embedding: context rows use their label, queries the "none" row.
    std::vector<int> lab_idx(n, cfg_.max_classes);
    if (in.label_conditioning && !in.labels.empty()) {
      for (int i = 0; i < in.n_ctx; ++i) {
        if (in.labels[i] < 1 || in.labels[i] > in.classes) {
          throw std::invalid_argument("PfnModel: context label out of range");
        }
        lab_idx[i] = in.labels[i] - 1;
      }
    }
    tok = tape.add(tok, tape.gather_rows(b.vars[idx_.label_emb], lab_idx));
    std::vector<int> type_idx(n, 1);
    for (int i = 0; i < in.n_ctx; ++i) type_idx[i] = 0;
    tok = tape.add(tok, tape.gather_rows(b.vars[idx_.type_emb], type_idx));
    return tok;
  }

  ForwardVars forward(Tape<S>& tape, const Bound& b,
                      const TaskInput<S>& in) const {
    V t = embed_rows(tape, b, in);
    const AttnPattern pattern = AttnPattern::context_query(in.n_ctx);
    const int dh = cfg_.width / cfg_.heads;
    const bool use_dropout = cfg_.dropout > 0.0 && in.dropout_seed != 0;
    Rng drop_rng = Rng::derive(in.dropout_seed, 1234567);
    auto maybe_dropout = [&](V x) {
      if (!use_dropout) return x;
      const Mat& X = tape.value(x);
      const S keep = S(1) - static_cast<S>(cfg_.dropout);
      Mat m(X.rows(), X.cols());
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
          m(r, c) = drop_rng.bernoulli(1.0 - cfg_.dropout) ? S(1) / keep : S(0);
        }
      }
      return tape.cmul(x, tape.leaf(std::move(m)));
    };
    for (const auto& L : idx_.layers) {
      V a = tape.layer_norm(t, b.vars[L.ln1_g], b.vars[L.ln1_b]);
      V q = tape.add_row(tape.matmul(a, b.vars[L.wq]), b.vars[L.bq]);
      V k = tape.add_row(tape.matmul(a, b.vars[L.wk]), b.vars[L.bk]);
      V v = tape.add_row(tape.matmul(a, b.vars[L.wv]), b.vars[L.bv]);
      std::vector<V> heads;
      for (int h = 0; h < cfg_.heads; ++h) {
        heads.push_back(tape.attention(tape.slice_cols(q, h * dh, dh),
                                       tape.slice_cols(k, h * dh, dh),
                                       tape.slice_cols(v, h * dh, dh), pattern));
      }
      V o = cfg_.heads == 1 ? heads[0] : tape.concat_cols(heads);
      o = tape.add_row(tape.matmul(o, b.vars[L.wo]), b.vars[L.bo]);
      t = tape.add(t, maybe_dropout(o));
      V f = tape.layer_norm(t, b.vars[L.ln2_g], b.vars[L.ln2_b]);
      f = tape.activation(tape.add_row(tape.matmul(f, b.vars[L.w1]), b.vars[L.b1]),
                          cfg_.activation);
      f = tape.add_row(tape.matmul(f, b.vars[L.w2]), b.vars[L.b2]);
      t = tape.add(t, maybe_dropout(f));
    }
    ForwardVars out;
    out.states = tape.layer_norm(t, b.vars[idx_.lnf_g], b.vars[idx_.lnf_b]);
    out.logits = tape.add_row(tape.matmul(out.states, b.vars[idx_.head_w]),
                              b.vars[idx_.head_b]);
    return out;
  }

  // Mean negative log-probability over query rows, invalid classes excluded.
  V ce_loss(Tape<S>& tape, V logits, const TaskInput<S>& in) const {
    if (in.labels.empty()) {
      throw std::invalid_argument("PfnModel: ce_loss needs labels");
    }
    std::vector<int> query_labels;
    for (int i = in.n_ctx; i < in.rows(); ++i) {
      query_labels.push_back(in.labels[i] - 1);
    }
    return tape.softmax_cross_entropy(logits, query_labels, in.classes, in.n_ctx);
  }

  // Inference: softmax probabilities over the task's valid classes for each
  // query row. Rows sum to 1 within 1e-9.
  Matrixd predict_probs(const TaskInput<S>& in) const {
    Tape<S> tape;
    Bound b = bind(tape);
    ForwardVars f = forward(tape, b, in);
    const Mat& logits = tape.value(f.logits);
    const int n_q = in.rows() - in.n_ctx;
    Matrixd probs(n_q, in.classes);
    for (int r = 0; r < n_q; ++r) {
      const auto row = logits.row(in.n_ctx + r).head(in.classes);
      const double mx = static_cast<double>(row.maxCoeff());
      double z = 0.0;
      for (int c = 0; c < in.classes; ++c) {
        probs(r, c) = std::exp(static_cast<double>(row(c)) - mx);
        z += probs(r, c);
      }
      probs.row(r) /= z;
    }
    return probs;
  }

  // Final token states with gradients discarded (used for flow conditioning
  // at sampling time).
  Mat encode_states(const TaskInput<S>& in) const {
    Tape<S> tape;
    Bound b = bind(tape);
    ForwardVars f = forward(tape, b, in);
    return tape.value(f.states);
  }

  struct Idx {
    int value_w, mask_w, bias, label_emb, type_emb;
    struct Layer {
      int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
      int ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    int lnf_g, lnf_b, head_w, head_b;
  };
  const Idx& index() const { return idx_; }

 private:
  int add_gaussian(const std::string& name, int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    const S sd = S(1) / std::sqrt(static_cast<S>(rows));
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.gaussian()) * sd;
    }
    return params_.add(name, std::move(m));
  }
  int add_zeros(const std::string& name, int rows, int cols) {
    return params_.add(name, Mat::Zero(rows, cols));
  }
  int add_ones(const std::string& name, int rows, int cols) {
    return params_.add(name, Mat::Ones(rows, cols));
  }

  PfnConfig cfg_;
  ParamStore<S> params_;
  Idx idx_;
};

}  // namespace pfnflow
