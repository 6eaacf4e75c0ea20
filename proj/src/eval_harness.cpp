#include "pfnflow/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pfnflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Average ranks (1-based) with ties averaged.
std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> rank(n, 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
    for (int t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  return rank;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / (v.size() - 1));
}

}  // namespace

void MaskedDataset::validate() const {
  if (miss.rows() != values.rows() || miss.cols() != values.cols()) {
    throw std::invalid_argument("MaskedDataset: mask shape mismatch");
  }
  if (!labels.empty() && static_cast<int>(labels.size()) != rows()) {
    throw std::invalid_argument("MaskedDataset: label count mismatch");
  }
  std::set<int> train(train_idx.begin(), train_idx.end());
  for (int t : test_idx) {
    if (train.count(t)) {
      throw std::invalid_argument("MaskedDataset: train/test overlap");
    }
  }
}

SplitIndices split_dataset(int n, double train_ratio, std::uint64_t seed,
                           const std::vector<int>* stratify_labels) {
  if (n < 10) throw std::invalid_argument("split_dataset: n < 10");
  if (train_ratio <= 0.0 || train_ratio >= 1.0) {
    throw std::invalid_argument("split_dataset: ratio outside (0,1)");
  }
  Rng rng = Rng::derive(seed, 6001);
  SplitIndices out;
  if (!stratify_labels) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const int n_train = static_cast<int>(std::round(train_ratio * n));
    out.train.assign(idx.begin(), idx.begin() + n_train);
    out.test.assign(idx.begin() + n_train, idx.end());
  } else {
    // Shuffle within each class, then cut each class at the ratio.
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[(*stratify_labels)[i]].push_back(i);
    for (auto& [cls, idx] : by_class) {
      rng.shuffle(idx);
      const int n_train = static_cast<int>(std::round(train_ratio * idx.size()));
      for (int t = 0; t < static_cast<int>(idx.size()); ++t) {
        (t < n_train ? out.train : out.test).push_back(idx[t]);
      }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
  }
  return out;
}

ColumnStats train_column_stats(const Matrixd& train_vals,
                               const Mask::Grid& train_miss) {
  const int d = static_cast<int>(train_vals.cols());
  ColumnStats st;
  st.mean = Eigen::VectorXd::Zero(d);
  st.sd = Eigen::VectorXd::Ones(d);
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    int cnt = 0;
    for (Eigen::Index i = 0; i < train_vals.rows(); ++i) {
      if (train_miss(i, j)) continue;
      acc += train_vals(i, j);
      ++cnt;
    }
    if (cnt == 0) {
      st.degenerate_cols.push_back(j);
      continue;
    }
    st.mean[j] = acc / cnt;
    double var = 0.0;
    for (Eigen::Index i = 0; i < train_vals.rows(); ++i) {
      if (train_miss(i, j)) continue;
      var += (train_vals(i, j) - st.mean[j]) * (train_vals(i, j) - st.mean[j]);
    }
    st.sd[j] = std::max(std::sqrt(var / cnt), 1e-12);
  }
  return st;
}

double oos_mae(const Matrixd& imputed, const Matrixd& truth,
               const Mask::Grid& eval_mask, const ColumnStats& stats) {
  if (imputed.rows() != truth.rows() || imputed.cols() != truth.cols() ||
      eval_mask.rows() != truth.rows() || eval_mask.cols() != truth.cols()) {
    throw std::invalid_argument("oos_mae: shape mismatch");
  }
  double acc = 0.0;
  long cnt = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (!eval_mask(i, j)) continue;
      const double scale = stats.sd[j];
      acc += std::abs(imputed(i, j) - truth(i, j)) / scale;
      ++cnt;
    }
  }
  if (cnt == 0) throw std::invalid_argument("oos_mae: no masked entries");
  return acc / cnt;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels01) {
  if (scores.size() != labels01.size() || scores.empty()) {
    throw std::invalid_argument("auc: bad input");
  }
  long n_pos = 0, n_neg = 0;
  for (int l : labels01) {
    if (l == 1) {
      ++n_pos;
    } else if (l == 0) {
      ++n_neg;
    } else {
      throw std::invalid_argument("auc: labels must be 0/1");
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: needs both classes");
  }
  const std::vector<double> r = ranks_with_ties(scores);
  double rank_pos = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels01[i] == 1) rank_pos += r[i];
  }
  return (rank_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
         (static_cast<double>(n_pos) * n_neg);
}

double auc_macro_ovr(const Matrixd& probs, const std::vector<int>& labels) {
  const int C = static_cast<int>(probs.cols());
  double acc = 0.0;
  int used = 0;
  for (int c = 1; c <= C; ++c) {
    std::vector<double> s;
    std::vector<int> l;
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s.push_back(probs(static_cast<Eigen::Index>(i), c - 1));
      const int li = labels[i] == c ? 1 : 0;
      l.push_back(li);
      (li ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    acc += auc(s, l);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("auc_macro_ovr: single-class labels");
  return acc / used;
}

AvgRankResult avg_rank(const std::vector<std::vector<double>>& table,
                       bool lower_is_better) {
  const int m = static_cast<int>(table.size());
  if (m == 0) return {};
  const int nd = static_cast<int>(table[0].size());
  std::vector<double> sum(m, 0.0);
  std::vector<int> cnt(m, 0);
  AvgRankResult out;
  for (int d = 0; d < nd; ++d) {
    std::vector<int> present;
    std::vector<double> vals;
    for (int i = 0; i < m; ++i) {
      const double v = table[i][d];
      if (std::isnan(v)) {
        out.had_missing = true;
        continue;
      }
      present.push_back(i);
      vals.push_back(lower_is_better ? v : -v);
    }
    const std::vector<double> r = ranks_with_ties(vals);
    for (std::size_t t = 0; t < present.size(); ++t) {
      sum[present[t]] += r[t];
      cnt[present[t]] += 1;
    }
  }
  out.rank.resize(m, kNaN);
  for (int i = 0; i < m; ++i) {
    if (cnt[i] > 0) out.rank[i] = sum[i] / cnt[i];
  }
  return out;
}

ImputeMethod mean_imputer() {
  ImputeMethod m;
  m.name = "mean";
  m.run = [](const Matrixd& train_vals, const Mask::Grid& train_miss,
             const Matrixd& test_vals, const Mask::Grid& test_miss) {
    const ColumnStats st = train_column_stats(train_vals, train_miss);
    Matrixd out = test_vals;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (test_miss(i, j)) out(i, j) = st.mean[j];
      }
    }
    return out;
  };
  return m;
}

ImputeMethod median_imputer() {
  ImputeMethod m;
  m.name = "median";
  m.run = [](const Matrixd& train_vals, const Mask::Grid& train_miss,
             const Matrixd& test_vals, const Mask::Grid& test_miss) {
    const int d = static_cast<int>(train_vals.cols());
    Eigen::VectorXd med = Eigen::VectorXd::Zero(d);
    for (int j = 0; j < d; ++j) {
      std::vector<double> col;
      for (Eigen::Index i = 0; i < train_vals.rows(); ++i) {
        if (!train_miss(i, j)) col.push_back(train_vals(i, j));
      }
      if (col.empty()) continue;
      std::sort(col.begin(), col.end());
      const std::size_t h = col.size() / 2;
      med[j] = col.size() % 2 ? col[h] : 0.5 * (col[h - 1] + col[h]);
    }
    Matrixd out = test_vals;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (test_miss(i, j)) out(i, j) = med[j];
      }
    }
    return out;
  };
  return m;
}

ImputeMethod zero_imputer() {
  ImputeMethod m;
  m.name = "zero";
  m.run = [](const Matrixd&, const Mask::Grid&, const Matrixd& test_vals,
             const Mask::Grid& test_miss) {
    Matrixd out = test_vals;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (test_miss(i, j)) out(i, j) = 0.0;
      }
    }
    return out;
  };
  return m;
}

ImputeMethod oracle_imputer(const Matrixd& truth_test) {
  ImputeMethod m;
  m.name = "oracle";
  m.run = [truth_test](const Matrixd&, const Mask::Grid&,
                       const Matrixd& test_vals, const Mask::Grid& test_miss) {
    Matrixd out = test_vals;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.cols(); ++j) {
        if (test_miss(i, j)) out(i, j) = truth_test(i, j);
      }
    }
    return out;
  };
  return m;
}

ProtocolResult run_mnar_protocol(const MaskedDataset& ds, int k, double p,
                                 const ImputeMethod& method,
                                 std::uint64_t seed) {
  ds.validate();
  if (ds.train_idx.empty() || ds.test_idx.empty()) {
    throw std::invalid_argument("run_mnar_protocol: dataset not split");
  }
  const int d = ds.cols();
  Matrixd train_vals(static_cast<int>(ds.train_idx.size()), d);
  Mask::Grid train_miss(ds.train_idx.size(), d);
  for (std::size_t r = 0; r < ds.train_idx.size(); ++r) {
    train_vals.row(static_cast<Eigen::Index>(r)) = ds.values.row(ds.train_idx[r]);
    train_miss.row(static_cast<Eigen::Index>(r)) = ds.miss.row(ds.train_idx[r]);
  }
  Matrixd test_truth(static_cast<int>(ds.test_idx.size()), d);
  for (std::size_t r = 0; r < ds.test_idx.size(); ++r) {
    test_truth.row(static_cast<Eigen::Index>(r)) = ds.values.row(ds.test_idx[r]);
    if (ds.miss.row(ds.test_idx[r]).cast<int>().sum() > 0) {
      throw std::invalid_argument(
          "run_mnar_protocol: test split must be fully observed ground truth");
    }
  }
  const ColumnStats stats = train_column_stats(train_vals, train_miss);

  ProtocolResult res;
  res.method = method.name;
  MnarConfig mnar;
  mnar.target_rate = p;
  for (int rep = 0; rep < k; ++rep) {
    const std::uint64_t mask_seed = Rng::derive(seed, 100 + rep).next_u64();
    const Mask mask = mnar_logistic_m2m(test_truth, mnar, mask_seed);
    Matrixd test_vals = test_truth;
    for (Eigen::Index i = 0; i < test_vals.rows(); ++i) {
      for (int j = 0; j < d; ++j) {
        if (mask.m(i, j)) test_vals(i, j) = kNaN;
      }
    }
    try {
      Matrixd imputed = method.run(train_vals, train_miss, test_vals, mask.m);
      // Categorical columns: snap imputations to the nearest valid level
      // before scoring.
      for (int j = 0; j < d; ++j) {
        if (j >= static_cast<int>(ds.columns.size())) break;
        const int levels = ds.columns[j].levels;
        if (levels <= 0) continue;
        for (Eigen::Index i = 0; i < imputed.rows(); ++i) {
          if (mask.m(i, j)) {
            imputed(i, j) = std::clamp(std::round(imputed(i, j)), 0.0,
                                       static_cast<double>(levels - 1));
          }
        }
      }
      res.per_mask_mae.push_back(oos_mae(imputed, test_truth, mask.m, stats));
    } catch (const std::exception&) {
      res.per_mask_mae.push_back(kNaN);
      ++res.failed_masks;
    }
  }
  std::vector<double> ok;
  for (double v : res.per_mask_mae) {
    if (!std::isnan(v)) ok.push_back(v);
  }
  res.mean = ok.empty() ? kNaN : mean_of(ok);
  res.sd = ok.empty() ? kNaN : sd_of(ok);
  return res;
}

std::vector<std::vector<double>> BenchmarkReport::mask_mean() const {
  std::vector<std::vector<double>> out(methods.size(),
                                       std::vector<double>(datasets.size(), kNaN));
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      std::vector<double> ok;
      for (double v : per_mask[m][d]) {
        if (!std::isnan(v)) ok.push_back(v);
      }
      if (!ok.empty()) out[m][d] = mean_of(ok);
    }
  }
  return out;
}

std::vector<std::vector<double>> BenchmarkReport::mask_sd() const {
  std::vector<std::vector<double>> out(methods.size(),
                                       std::vector<double>(datasets.size(), kNaN));
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      std::vector<double> ok;
      for (double v : per_mask[m][d]) {
        if (!std::isnan(v)) ok.push_back(v);
      }
      if (!ok.empty()) out[m][d] = sd_of(ok);
    }
  }
  return out;
}

void BenchmarkReport::avg_column(std::vector<double>& mean_out,
                                 std::vector<double>& sd_out) const {
  // Per mask: average across datasets; then mean +/- std over masks.
  mean_out.assign(methods.size(), kNaN);
  sd_out.assign(methods.size(), kNaN);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> per_mask_avgs;
    for (int rep = 0; rep < k; ++rep) {
      std::vector<double> ok;
      for (std::size_t d = 0; d < datasets.size(); ++d) {
        const double v = per_mask[m][d][rep];
        if (!std::isnan(v)) ok.push_back(v);
      }
      if (!ok.empty()) per_mask_avgs.push_back(mean_of(ok));
    }
    if (!per_mask_avgs.empty()) {
      mean_out[m] = mean_of(per_mask_avgs);
      sd_out[m] = sd_of(per_mask_avgs);
    }
  }
}

std::vector<double> BenchmarkReport::avg_ranks() const {
  return avg_rank(mask_mean(), /*lower_is_better=*/true).rank;
}

std::string BenchmarkReport::to_json() const {
  nlohmann::json j;
  j["methods"] = methods;
  j["datasets"] = datasets;
  j["k"] = k;
  j["p"] = p;
  j["seed"] = seed;
  j["note"] = note;
  j["mae_normalization"] = "per-column train-split standardization";
  j["per_mask"] = per_mask;
  const auto mm = mask_mean();
  const auto ms = mask_sd();
  j["mask_mean"] = mm;
  j["mask_sd"] = ms;
  std::vector<double> am, as;
  avg_column(am, as);
  j["avg_mean"] = am;
  j["avg_sd"] = as;
  j["avg_rank"] = avg_ranks();
  return j.dump(2);
}

BenchmarkReport BenchmarkReport::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  BenchmarkReport r;
  r.methods = j.at("methods").get<std::vector<std::string>>();
  r.datasets = j.at("datasets").get<std::vector<std::string>>();
  r.k = j.at("k").get<int>();
  r.p = j.at("p").get<double>();
  r.seed = j.value("seed", 0ull);
  r.note = j.value("note", std::string());
  r.per_mask = j.at("per_mask")
                   .get<std::vector<std::vector<std::vector<double>>>>();
  return r;
}

std::string BenchmarkReport::render_text() const {
  const auto mm = mask_mean();
  const auto ms = mask_sd();
  std::vector<double> am, as;
  avg_column(am, as);
  const auto ranks = avg_ranks();
  std::ostringstream out;
  out << "MNAR protocol: K=" << k << " masks, p=" << p << ", seed=" << seed
      << "\n";
  out << "MAE normalization: per-column train-split standardization\n\n";
  auto cell = [](double mean, double sd) {
    std::ostringstream c;
    if (std::isnan(mean)) {
      c << "failed";
    } else {
      c.setf(std::ios::fixed);
      c.precision(4);
      c << mean << "+/-" << sd;
    }
    return c.str();
  };
  out << "method";
  for (const auto& d : datasets) out << "\t" << d;
  out << "\tAVG\tAvgRank\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out << methods[m];
    for (std::size_t d = 0; d < datasets.size(); ++d) {
      out << "\t" << cell(mm[m][d], ms[m][d]);
    }
    out << "\t" << cell(am[m], as[m]);
    out << "\t";
    if (std::isnan(ranks[m])) {
      out << "-";
    } else {
      out.setf(std::ios::fixed);
      out.precision(2);
      out << ranks[m];
    }
    out << "\n";
  }
  return out.str();
}

RuntimeResult bench_runtime(const ImputeMethod& method, int n, int d,
                            int repeats, double rate, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 6100);
  Matrixd x(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.gaussian();
  }
  SplitIndices split = split_dataset(n, 0.7, seed);
  Matrixd train(static_cast<int>(split.train.size()), d);
  for (std::size_t r = 0; r < split.train.size(); ++r) {
    train.row(static_cast<Eigen::Index>(r)) = x.row(split.train[r]);
  }
  Matrixd test(static_cast<int>(split.test.size()), d);
  for (std::size_t r = 0; r < split.test.size(); ++r) {
    test.row(static_cast<Eigen::Index>(r)) = x.row(split.test[r]);
  }
  Mask::Grid train_miss = Mask::Grid::Zero(train.rows(), d);
  const Mask test_mask =
      mcar_mask(static_cast<int>(test.rows()), d, rate, seed + 1);
  Matrixd test_masked = test;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    for (int j = 0; j < d; ++j) {
      if (test_mask.m(i, j)) test_masked(i, j) = kNaN;
    }
  }
  RuntimeResult res;
  res.method = method.name;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    volatile double sink =
        method.run(train, train_miss, test_masked, test_mask.m).sum();
    (void)sink;
    const auto t1 = std::chrono::steady_clock::now();
    res.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  res.mean = mean_of(res.seconds);
  res.sd = sd_of(res.seconds);
  return res;
}

}  // namespace pfnflow
