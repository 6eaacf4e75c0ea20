#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "pfnflow/flow_head.hpp"
#include "pfnflow/pfn_model.hpp"

namespace pfnflow {

// Static partition; worker rngs must be derived per item, not per thread.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

// Backbone plus optional flow head sharing one parameter store.
template <class S>
struct PfnFlowModel {
  PfnModel<S> pfn;
  std::optional<FlowHead<S>> flow;

  PfnFlowModel(const PfnConfig& pfn_cfg, std::uint64_t seed)
      : pfn(pfn_cfg, seed) {}

  PfnFlowModel(const PfnConfig& pfn_cfg, const FlowConfig& flow_cfg,
               std::uint64_t seed)
      : pfn(pfn_cfg, seed) {
    flow.emplace(pfn.config(), flow_cfg, pfn.params(), seed + 1);
  }
};

struct TrainConfig {
  double lr = 3e-5;
  int warmup_epochs = 20;
  double min_lr = 1e-8;
  double weight_decay = 0.0;
  int batch_tasks = 64;
  double cfm_weight = 0.1;
  int steps = 1000;
  int steps_per_epoch = 100;
  std::uint64_t seed = 0;
  int threads = 1;
  bool train_flow = true;
  bool freeze_backbone_for_flow = false;
};

struct TrainResult {
  std::vector<double> loss_curve;  // total loss per step
  std::vector<double> ce_curve;
  long steps_completed = 0;
  bool aborted_nan = false;
  int cfm_skipped_batches = 0;  // batches whose tasks had no masked query entry
};

// Yields the task for a given derived seed; called once per (step, slot).
// The current optimization step is passed through so sources can implement
// step-dependent behavior (the missingness gate's alpha warmup).
template <class S>
using TaskSource =
    std::function<TaskInput<S>(std::uint64_t task_seed, long step)>;

// Optional per-step observer; returning false stops training early.
using TrainObserver = std::function<bool(long step, double loss, double ce)>;

// Streaming prior-fitted training: every batch draws fresh tasks, gradients
// are averaged in slot order (deterministic for any thread count), and a
// non-finite loss or gradient aborts with the parameters restored to the last
// completed step.
template <class S>
TrainResult train(PfnFlowModel<S>& model, const TaskSource<S>& source,
                  const TrainConfig& cfg, const TrainObserver& observer = {}) {
  ParamStore<S>& params = model.pfn.params();
  LrSchedule schedule{cfg.lr, cfg.warmup_epochs, cfg.min_lr,
                      std::max(1, cfg.steps / std::max(1, cfg.steps_per_epoch))};
  typename AdamOptimizer<S>::Config adam_cfg;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamOptimizer<S> opt(params, schedule, adam_cfg);

  const bool with_flow = model.flow.has_value() && cfg.train_flow;
  TrainResult result;

  struct TaskGrads {
    std::vector<Matrix<S>> grads;
    double loss = 0.0;
    double ce = 0.0;
    bool has_cfm = false;
    bool finite = true;
  };

  std::vector<Matrix<S>> snapshot;
  auto take_snapshot = [&]() {
    snapshot.clear();
    for (int i = 0; i < params.count(); ++i) snapshot.push_back(params.value(i));
  };
  auto restore_snapshot = [&]() {
    for (int i = 0; i < params.count(); ++i) params.value(i) = snapshot[i];
  };

  for (long step = 0; step < cfg.steps; ++step) {
    take_snapshot();
    const int B = cfg.batch_tasks;
    std::vector<TaskGrads> per_task(B);
    parallel_for(B, cfg.threads, [&](int slot) {
      const std::uint64_t task_seed =
          Rng::derive(cfg.seed, static_cast<std::uint64_t>(step) * 1000003ULL +
                                    static_cast<std::uint64_t>(slot))
              .next_u64();
      TaskInput<S> task = source(task_seed, step);
      task.dropout_seed = task_seed;  // only acts when cfg dropout > 0
      Tape<S> tape;
      typename PfnModel<S>::Bound bound = model.pfn.bind(tape);
      typename PfnModel<S>::ForwardVars fw = model.pfn.forward(tape, bound, task);
      Var<S> ce = model.pfn.ce_loss(tape, fw.logits, task);
      Var<S> total = ce;
      if (with_flow) {
        Rng cfm_rng = Rng::derive(task_seed, 42);
        const int nq = task.rows() - task.n_ctx;
        auto draws = FlowHead<S>::draw_cfm(nq, model.pfn.config().max_features,
                                           cfm_rng);
        Var<S> cfm = model.flow->cfm_loss(tape, bound.vars, task, fw.states,
                                          draws, cfg.freeze_backbone_for_flow);
        if (cfm.valid()) {
          per_task[slot].has_cfm = true;
          total = tape.add(total, tape.scale(cfm, static_cast<S>(cfg.cfm_weight)));
        }
      }
      per_task[slot].ce = static_cast<double>(tape.value(ce)(0, 0));
      per_task[slot].loss = static_cast<double>(tape.value(total)(0, 0));
      if (!std::isfinite(per_task[slot].loss)) {
        per_task[slot].finite = false;
        return;
      }
      tape.backward(total);
      per_task[slot].grads.reserve(params.count());
      for (int i = 0; i < params.count(); ++i) {
        per_task[slot].grads.push_back(tape.grad(bound.vars[i]));
      }
    });

    params.zero_grads();
    double loss_sum = 0.0, ce_sum = 0.0;
    bool any_cfm = false;
    bool all_finite = true;
    for (int slot = 0; slot < B; ++slot) {
      const TaskGrads& tg = per_task[slot];
      if (!tg.finite) {
        all_finite = false;
        break;
      }
      loss_sum += tg.loss;
      ce_sum += tg.ce;
      any_cfm = any_cfm || tg.has_cfm;
      for (int i = 0; i < params.count(); ++i) {
        params.grad(i) += tg.grads[i];
      }
    }
    if (!all_finite) {
      restore_snapshot();
      result.aborted_nan = true;
      break;
    }
    for (int i = 0; i < params.count(); ++i) {
      params.grad(i) /= static_cast<S>(B);
    }
    if (with_flow && !any_cfm) ++result.cfm_skipped_batches;

    try {
      opt.step(static_cast<int>(step / cfg.steps_per_epoch));
    } catch (const std::runtime_error&) {
      restore_snapshot();
      result.aborted_nan = true;
      break;
    }
    result.loss_curve.push_back(loss_sum / B);
    result.ce_curve.push_back(ce_sum / B);
    result.steps_completed = step + 1;
    if (observer && !observer(step, loss_sum / B, ce_sum / B)) break;
  }
  return result;
}

struct ImputeResult {
  Matrixd completed;  // observed entries passed through bitwise
  Matrixd spread;     // per-entry posterior sample std, 0 at observed
  int imputed_rows = 0;
};

// Posterior-mean imputation of every row with missing entries. The whole
// table conditions the backbone (rows appear once as context; incomplete rows
// again as queries). Column `levels` (when nonzero) snaps imputed values to
// the nearest integer level.
template <class S>
ImputeResult impute(PfnFlowModel<S>& model, const Matrixd& values,
                    const Mask::Grid& miss,
                    const std::vector<int>& labels = {},
                    const std::vector<int>& levels = {},
                    std::uint64_t seed = 0, int threads = 1) {
  if (!model.flow.has_value()) {
    throw std::invalid_argument("impute: model has no flow head");
  }
  const int n = static_cast<int>(values.rows());
  const int d = static_cast<int>(values.cols());
  std::vector<int> rows_to_fill;
  for (int i = 0; i < n; ++i) {
    if (miss.row(i).cast<int>().sum() > 0) rows_to_fill.push_back(i);
  }
  ImputeResult out;
  out.completed = values;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      if (miss(i, j)) out.completed(i, j) = 0.0;
    }
  }
  out.spread = Matrixd::Zero(n, d);
  out.imputed_rows = static_cast<int>(rows_to_fill.size());
  if (rows_to_fill.empty()) {
    out.completed = values;
    return out;
  }

  // One backbone pass: all rows as context, incomplete rows again as queries.
  const int nq = static_cast<int>(rows_to_fill.size());
  TaskInput<S> in;
  in.x_obs = Matrix<S>::Zero(n + nq, d);
  in.mask = Matrix<S>::Zero(n + nq, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const bool m = miss(i, j) != 0;
      in.mask(i, j) = m ? S(1) : S(0);
      in.x_obs(i, j) = m ? S(0) : static_cast<S>(values(i, j));
    }
  }
  for (int r = 0; r < nq; ++r) {
    in.x_obs.row(n + r) = in.x_obs.row(rows_to_fill[r]);
    in.mask.row(n + r) = in.mask.row(rows_to_fill[r]);
  }
  in.n_ctx = n;
  in.classes = model.pfn.config().max_classes;
  in.label_conditioning = !labels.empty();
  if (!labels.empty()) {
    in.labels = labels;
    for (int r = 0; r < nq; ++r) in.labels.push_back(labels[rows_to_fill[r]]);
  }
  const Matrix<S> states = model.pfn.encode_states(in);
  const Matrix<S> ctx_states = states.topRows(n);

  const int F = model.pfn.config().max_features;
  const int samples = model.flow->config().samples_per_imputation;
  parallel_for(nq, threads, [&](int r) {
    const int row = rows_to_fill[r];
    Matrix<S> query_state = states.row(n + r);
    Matrix<S> x_obs_row = Matrix<S>::Zero(1, F);
    Matrix<S> mask_row = Matrix<S>::Zero(1, F);
    x_obs_row.leftCols(d) = in.x_obs.row(row).leftCols(d);
    mask_row.leftCols(d) = in.mask.row(row).leftCols(d);
    Rng rng = Rng::derive(seed, 9600 + static_cast<std::uint64_t>(row));
    Matrix<S> draws = model.flow->sample_posterior(
        model.pfn.params(), ctx_states, query_state, x_obs_row, mask_row,
        samples, rng);
    for (int j = 0; j < d; ++j) {
      if (!miss(row, j)) continue;
      const Eigen::VectorXd col = draws.col(j).template cast<double>();
      double mean = col.mean();
      const double sd = samples > 1
                            ? std::sqrt((col.array() - mean).square().sum() /
                                        (samples - 1))
                            : 0.0;
      if (j < static_cast<int>(levels.size()) && levels[j] > 0) {
        mean = std::clamp(std::round(mean), 0.0,
                          static_cast<double>(levels[j] - 1));
      }
      out.completed(row, j) = mean;
      out.spread(row, j) = sd;
    }
  });
  // Observed entries pass through bitwise.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      if (!miss(i, j)) out.completed(i, j) = values(i, j);
    }
  }
  return out;
}

}  // namespace pfnflow
