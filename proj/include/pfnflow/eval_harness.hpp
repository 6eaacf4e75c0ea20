#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pfnflow/missingness.hpp"
#include "pfnflow/tensor.hpp"

namespace pfnflow {

struct ColumnMeta {
  std::string name;
  int levels = 0;  // 0 = continuous, else integer-coded categorical
};

// Feature table with companion mask and optional labels. Categorical columns
// are integer-coded with the coding recorded in the metadata.
struct MaskedDataset {
  Matrixd values;   // NaN allowed at missing entries
  Mask::Grid miss;  // 1 = missing
  std::vector<int> labels;  // optional, 1..C
  std::vector<ColumnMeta> columns;
  std::vector<int> train_idx, test_idx;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  void validate() const;
};

struct SplitIndices {
  std::vector<int> train, test;
};

// Uniform shuffle-then-cut split; stratified by label when requested.
SplitIndices split_dataset(int n, double train_ratio, std::uint64_t seed,
                           const std::vector<int>* stratify_labels = nullptr);

// Imputation method under benchmark: sees the train split (with its own
// missingness) and the masked test split, returns completed test values.
struct ImputeMethod {
  std::string name;
  std::function<Matrixd(const Matrixd& train_vals, const Mask::Grid& train_miss,
                        const Matrixd& test_vals, const Mask::Grid& test_miss)>
      run;
};

ImputeMethod mean_imputer();
ImputeMethod median_imputer();
ImputeMethod zero_imputer();
// Returns the captured ground truth at masked entries (test oracle).
ImputeMethod oracle_imputer(const Matrixd& truth_test);

// Train-split column statistics used to standardize MAE across datasets.
struct ColumnStats {
  Eigen::VectorXd mean, sd;  // sd floored at 1e-12; all-missing columns flagged
  std::vector<int> degenerate_cols;
};
ColumnStats train_column_stats(const Matrixd& train_vals,
                               const Mask::Grid& train_miss);

// Out-of-sample MAE over masked test entries only, after standardizing
// columns by train statistics. Throws when no entry is masked.
double oos_mae(const Matrixd& imputed, const Matrixd& truth,
               const Mask::Grid& eval_mask, const ColumnStats& stats);

// Rank-statistic AUC with tie correction (average ranks). Binary labels.
double auc(const std::vector<double>& scores, const std::vector<int>& labels01);
// Macro one-vs-rest AUC for multiclass probability tables (labels 1..C).
double auc_macro_ovr(const Matrixd& probs, const std::vector<int>& labels);

// Per-method average rank over a methods x datasets score table; ties receive
// the average rank. NaN cells are excluded pairwise; `had_missing` reports
// whether any cell was skipped.
struct AvgRankResult {
  std::vector<double> rank;
  bool had_missing = false;
};
AvgRankResult avg_rank(const std::vector<std::vector<double>>& table,
                       bool lower_is_better);

// One dataset's repeated-mask MNAR protocol: mask the test split K times with
// mnar_logistic_m2m at rate p, run the method, score standardized OOS MAE on
// the masked test entries.
struct ProtocolResult {
  std::string method;
  std::vector<double> per_mask_mae;  // K entries; NaN marks a failed mask
  double mean = 0.0;
  double sd = 0.0;
  int failed_masks = 0;
};

ProtocolResult run_mnar_protocol(const MaskedDataset& ds, int k, double p,
                                 const ImputeMethod& method, std::uint64_t seed);

// Cross-dataset benchmark report: per-dataset per-mask MAE per method, the
// AVG column (per-mask dataset averages, mean +/- std over masks), and Avg
// Rank on mask-averaged MAE.
struct BenchmarkReport {
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  // per_mask[m][d][k]
  std::vector<std::vector<std::vector<double>>> per_mask;
  int k = 0;
  double p = 0.0;
  std::uint64_t seed = 0;
  std::string note;

  std::vector<std::vector<double>> mask_mean() const;  // methods x datasets
  std::vector<std::vector<double>> mask_sd() const;
  void avg_column(std::vector<double>& mean_out, std::vector<double>& sd_out) const;
  std::vector<double> avg_ranks() const;  // lower MAE is better

  std::string to_json() const;
  static BenchmarkReport from_json(const std::string& text);
  std::string render_text() const;
};

// Grouped-bar SVG (per-dataset bars, AVG column, Avg Rank on a secondary
// axis).
std::string render_svg(const BenchmarkReport& report);

struct RuntimeResult {
  std::string method;
  std::vector<double> seconds;  // raw repeats
  double mean = 0.0;
  double sd = 0.0;
};

// Wall-clock for one end-to-end run (fit on train + impute test) on a fixed
// synthetic n x d fixture with MCAR(rate) missingness.
RuntimeResult bench_runtime(const ImputeMethod& method, int n = 1000, int d = 50,
                            int repeats = 5, double rate = 0.3,
                            std::uint64_t seed = 1);

}  // namespace pfnflow
