#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pfnflow/pfn_model.hpp"

namespace pfnflow {

struct FlowConfig {
  int depth = 2;  // lightweight transformer layers
  enum class Solver { kEuler, kRk4 };
  Solver solver = Solver::kEuler;
  int steps = 32;
  int samples_per_imputation = 16;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("FlowConfig: steps < 1");
    if (depth < 1) throw std::invalid_argument("FlowConfig: depth < 1");
    if (samples_per_imputation < 1) {
      throw std::invalid_argument("FlowConfig: samples_per_imputation < 1");
    }
  }
};

// Sinusoidal time features at the model width for t in [0,1].
template <class S>
Matrix<S> time_features(const Matrix<S>& t_col, int width) {
  Matrix<S> out(t_col.rows(), width);
  for (Eigen::Index r = 0; r < t_col.rows(); ++r) {
    const double pos = static_cast<double>(t_col(r, 0)) * 1000.0;
    for (int i = 0; i < width; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(width));
      out(r, i) = static_cast<S>(i % 2 == 0 ? std::sin(pos * freq)
                                            : std::cos(pos * freq));
    }
  }
  return out;
}

// Integrates dx/dt = field(x, t) from t=0 to t=1. Entries with mask=0
// (observed) are clamped to x_obs at initialization and after every solver
// step; the field is also zeroed there so intermediate Runge-Kutta states
// never drift off the observed values. Throws when the state exceeds 1e6.
template <class S>
Matrix<S> integrate_flow(
    const std::function<Matrix<S>(const Matrix<S>&, double)>& field,
    Matrix<S> x, const Matrix<S>& mask, const Matrix<S>& x_obs,
    typename FlowConfig::Solver solver, int steps) {
  auto clamp = [&](Matrix<S>& state) {
    state = state.cwiseProduct(mask) + x_obs.cwiseProduct(Matrix<S>::Ones(
                                           mask.rows(), mask.cols()) -
                                       mask);
  };
  auto masked_field = [&](const Matrix<S>& state, double t) {
    return field(state, t).cwiseProduct(mask).eval();
  };
  clamp(x);
  const double h = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    if (solver == FlowConfig::Solver::kEuler) {
      x += static_cast<S>(h) * masked_field(x, t);
    } else {
      Matrix<S> k1 = masked_field(x, t);
      Matrix<S> k2 = masked_field(x + static_cast<S>(h / 2) * k1, t + h / 2);
      Matrix<S> k3 = masked_field(x + static_cast<S>(h / 2) * k2, t + h / 2);
      Matrix<S> k4 = masked_field(x + static_cast<S>(h) * k3, t + h);
      x += static_cast<S>(h / 6) * (k1 + S(2) * k2 + S(2) * k3 + k4);
    }
    clamp(x);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > S(1e6)) {
      throw std::runtime_error("integrate_flow: solver divergence (|x| > 1e6)");
    }
  }
  return x;
}

// Conditional flow-matching head: a 2-layer transformer over per-row flow
// tokens that cross-attend to the backbone's context states. The token mixes
// the current state x_t, the mask, the row's own backbone state, and a
// sinusoidal time embedding. Output is a velocity for every feature entry;
// the loss reads only masked entries.
template <class S>
class FlowHead {
 public:
  using Mat = Matrix<S>;
  using V = Var<S>;

  FlowHead(const PfnConfig& pfn_cfg, FlowConfig cfg, ParamStore<S>& store,
           std::uint64_t seed)
      : pfn_cfg_(pfn_cfg), cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::derive(seed, 9500);
    const int W = pfn_cfg_.width;
    const int F = pfn_cfg_.max_features;
    idx_.in_x = add_gaussian(store, "flow.in_x", F, W, rng);
    idx_.in_m = add_gaussian(store, "flow.in_m", F, W, rng);
    idx_.in_h = add_gaussian(store, "flow.in_h", W, W, rng);
    idx_.in_t = add_gaussian(store, "flow.in_t", W, W, rng);
    idx_.in_b = store.add("flow.in_b", Mat::Zero(1, W));
    idx_.layers.resize(cfg_.depth);
    for (int l = 0; l < cfg_.depth; ++l) {
      const std::string p = "flow.layer" + std::to_string(l) + ".";
      auto& L = idx_.layers[l];
      L.ln1_g = store.add(p + "ln1.g", Mat::Ones(1, W));
      L.ln1_b = store.add(p + "ln1.b", Mat::Zero(1, W));
      L.wq = add_gaussian(store, p + "attn.wq", W, W, rng);
      L.bq = store.add(p + "attn.bq", Mat::Zero(1, W));
      L.wk = add_gaussian(store, p + "attn.wk", W, W, rng);
      L.bk = store.add(p + "attn.bk", Mat::Zero(1, W));
      L.wv = add_gaussian(store, p + "attn.wv", W, W, rng);
      L.bv = store.add(p + "attn.bv", Mat::Zero(1, W));
      L.wo = add_gaussian(store, p + "attn.wo", W, W, rng);
      L.bo = store.add(p + "attn.bo", Mat::Zero(1, W));
      L.ln2_g = store.add(p + "ln2.g", Mat::Ones(1, W));
      L.ln2_b = store.add(p + "ln2.b", Mat::Zero(1, W));
      L.w1 = add_gaussian(store, p + "ff.w1", W, pfn_cfg_.ff_width, rng);
      L.b1 = store.add(p + "ff.b1", Mat::Zero(1, pfn_cfg_.ff_width));
      L.w2 = add_gaussian(store, p + "ff.w2", pfn_cfg_.ff_width, W, rng);
      L.b2 = store.add(p + "ff.b2", Mat::Zero(1, W));
    }
    idx_.out_ln_g = store.add("flow.out.ln.g", Mat::Ones(1, W));
    idx_.out_ln_b = store.add("flow.out.ln.b", Mat::Zero(1, W));
    idx_.out_w = add_gaussian(store, "flow.out.w", W, F, rng);
    idx_.out_b = store.add("flow.out.b", Mat::Zero(1, F));
  }

  const FlowConfig& config() const { return cfg_; }
  FlowConfig& config() { return cfg_; }

  // Velocity for flow tokens. x_t / mask are (nq x max_features) tape vars,
  // t_col holds per-row times, ctx_states is (n_ctx x width), query_states
  // (nq x width).
  V velocity(Tape<S>& tape, const std::vector<V>& b, V x_t, const Mat& t_col,
             V mask, V ctx_states, V query_states) const {
    V tfeat = tape.leaf(time_features<S>(t_col, pfn_cfg_.width));
    V tok = tape.add(tape.matmul(x_t, b[idx_.in_x]),
                     tape.matmul(mask, b[idx_.in_m]));
    tok = tape.add(tok, tape.matmul(query_states, b[idx_.in_h]));
    tok = tape.add(tok, tape.matmul(tfeat, b[idx_.in_t]));
    tok = tape.add_row(tok, b[idx_.in_b]);
    const int dh = pfn_cfg_.width / pfn_cfg_.heads;
    for (const auto& L : idx_.layers) {
      V a = tape.layer_norm(tok, b[L.ln1_g], b[L.ln1_b]);
      V q = tape.add_row(tape.matmul(a, b[L.wq]), b[L.bq]);
      V k = tape.add_row(tape.matmul(ctx_states, b[L.wk]), b[L.bk]);
      V v = tape.add_row(tape.matmul(ctx_states, b[L.wv]), b[L.bv]);
      std::vector<V> heads;
      for (int h = 0; h < pfn_cfg_.heads; ++h) {
        heads.push_back(tape.attention(
            tape.slice_cols(q, h * dh, dh), tape.slice_cols(k, h * dh, dh),
            tape.slice_cols(v, h * dh, dh), AttnPattern::cross()));
      }
      V o = pfn_cfg_.heads == 1 ? heads[0] : tape.concat_cols(heads);
      o = tape.add_row(tape.matmul(o, b[L.wo]), b[L.bo]);
      tok = tape.add(tok, o);
      V f = tape.layer_norm(tok, b[L.ln2_g], b[L.ln2_b]);
      f = tape.activation(tape.add_row(tape.matmul(f, b[L.w1]), b[L.b1]),
                          Activation::kGelu);
      f = tape.add_row(tape.matmul(f, b[L.w2]), b[L.b2]);
      tok = tape.add(tok, f);
    }
    V s = tape.layer_norm(tok, b[idx_.out_ln_g], b[idx_.out_ln_b]);
    return tape.add_row(tape.matmul(s, b[idx_.out_w]), b[idx_.out_b]);
  }

  struct CfmDraws {
    Mat x0;     // base noise, every entry
    Mat t_col;  // per-row time in [0,1]
  };

  static CfmDraws draw_cfm(int rows, int features, Rng& rng) {
    CfmDraws d;
    d.x0.resize(rows, features);
    d.t_col.resize(rows, 1);
    for (int i = 0; i < rows; ++i) {
      d.t_col(i, 0) = static_cast<S>(rng.uniform());
      for (int j = 0; j < features; ++j) {
        d.x0(i, j) = static_cast<S>(rng.gaussian());
      }
    }
    return d;
  }

  // CFM regression loss for one task, on its query rows. x_t interpolates the
  // complete row against base noise on every entry; the squared error against
  // the straight-line target u = x1 - x0 is summed over masked entries only
  // and averaged over rows. Returns an invalid Var when no query entry is
  // masked (the caller logs a warning and skips the term).
  V cfm_loss(Tape<S>& tape, const std::vector<V>& b, const TaskInput<S>& in,
             V states, const CfmDraws& draws, bool freeze_backbone) const {
    if (in.x_full.size() == 0) {
      throw std::invalid_argument("FlowHead: cfm_loss needs complete values");
    }
    const int n = in.rows();
    const int nq = n - in.n_ctx;
    const int F = pfn_cfg_.max_features;
    Mat x1 = Mat::Zero(nq, F);
    Mat mq = Mat::Zero(nq, F);
    x1.leftCols(in.features()) = in.x_full.middleRows(in.n_ctx, nq);
    mq.leftCols(in.features()) = in.mask.middleRows(in.n_ctx, nq);
    if (mq.sum() == S(0)) return V{};

    Mat xt(nq, F);
    Mat u(nq, F);
    for (int i = 0; i < nq; ++i) {
      const S t = draws.t_col(i, 0);
      xt.row(i) = (S(1) - t) * draws.x0.row(i) + t * x1.row(i);
      u.row(i) = x1.row(i) - draws.x0.row(i);
    }

    V ctx_states = tape.slice_rows(states, 0, in.n_ctx);
    V query_states = tape.slice_rows(states, in.n_ctx, nq);
    if (freeze_backbone) {
      ctx_states = tape.leaf(tape.value(ctx_states));
      query_states = tape.leaf(tape.value(query_states));
    }
    V x_t = tape.leaf(xt);
    V mask = tape.leaf(mq);
    V v = velocity(tape, b, x_t, draws.t_col, mask, ctx_states, query_states);
    V diff = tape.sub(v, tape.leaf(u));
    V sq = tape.cmul(diff, diff);
    V masked = tape.cmul(sq, mask);
    return tape.scale(tape.sum_all(masked), S(1) / static_cast<S>(nq));
  }

  // Velocity with gradients discarded, for ODE integration. The x rows all
  // describe the same query row (sample batch); ctx_states and query_state
  // are precomputed backbone values.
  Mat velocity_values(const ParamStore<S>& store, const Mat& x,
                      const Mat& t_col, const Mat& mask, const Mat& ctx_states,
                      const Mat& query_state) const {
    Tape<S> tape;
    std::vector<V> b;
    b.reserve(store.count());
    for (int i = 0; i < store.count(); ++i) b.push_back(tape.leaf(store.value(i)));
    Mat qs(x.rows(), query_state.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) qs.row(r) = query_state.row(0);
    V out = velocity(tape, b, tape.leaf(x), t_col, tape.leaf(mask),
                     tape.leaf(ctx_states), tape.leaf(qs));
    return tape.value(out);
  }

  // Draws `n_samples` completions of one query row by integrating the learned
  // field from Gaussian noise; observed entries stay clamped.
  Mat sample_posterior(const ParamStore<S>& store, const Mat& ctx_states,
                       const Mat& query_state, const Mat& x_obs_row,
                       const Mat& mask_row, int n_samples, Rng& rng) const {
    if (mask_row.sum() == S(0)) {
      throw std::invalid_argument("sample_posterior: query row has no masked entry");
    }
    const int F = static_cast<int>(x_obs_row.cols());
    Mat x(n_samples, F);
    Mat mask(n_samples, F);
    Mat x_obs(n_samples, F);
    for (int s = 0; s < n_samples; ++s) {
      for (int j = 0; j < F; ++j) x(s, j) = static_cast<S>(rng.gaussian());
      mask.row(s) = mask_row.row(0);
      x_obs.row(s) = x_obs_row.row(0);
    }
    auto field = [&](const Mat& state, double t) {
      Mat t_col = Mat::Constant(state.rows(), 1, static_cast<S>(t));
      return velocity_values(store, state, t_col, mask, ctx_states, query_state);
    };
    return integrate_flow<S>(field, std::move(x), mask, x_obs, cfg_.solver,
                             cfg_.steps);
  }

 private:
  int add_gaussian(ParamStore<S>& store, const std::string& name, int rows,
                   int cols, Rng& rng) {
    Mat m(rows, cols);
    const S sd = S(1) / std::sqrt(static_cast<S>(rows));
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.gaussian()) * sd;
    }
    return store.add(name, std::move(m));
  }

  struct Idx {
    int in_x, in_m, in_h, in_t, in_b;
    struct Layer {
      int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
      int ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    int out_ln_g, out_ln_b, out_w, out_b;
  };

  PfnConfig pfn_cfg_;
  FlowConfig cfg_;
  Idx idx_;
};

}  // namespace pfnflow
