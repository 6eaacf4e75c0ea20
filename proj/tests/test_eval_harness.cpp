#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "pfnflow/eval_harness.hpp"

using namespace pfnflow;

namespace {

ColumnStats identity_stats(int d) {
  ColumnStats st;
  st.mean = Eigen::VectorXd::Zero(d);
  st.sd = Eigen::VectorXd::Ones(d);
  return st;
}

MaskedDataset gaussian_dataset(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  MaskedDataset ds;
  ds.values.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.values(i, j) = rng.gaussian() * (1.0 + 0.2 * j);
  }
  ds.miss = Mask::Grid::Zero(n, d);
  for (int j = 0; j < d; ++j) {
    ds.columns.push_back({"c" + std::to_string(j), 0});
  }
  const SplitIndices split = split_dataset(n, 0.7, seed);
  ds.train_idx = split.train;
  ds.test_idx = split.test;
  return ds;
}

}  // namespace

TEST_CASE("split: sizes, determinism, disjointness") {
  const SplitIndices s = split_dataset(10, 0.7, 5);
  CHECK(s.train.size() == 7);
  CHECK(s.test.size() == 3);
  const SplitIndices s2 = split_dataset(10, 0.7, 5);
  CHECK(s.train == s2.train);
  CHECK(s.test == s2.test);
  std::set<int> seen(s.train.begin(), s.train.end());
  for (int t : s.test) CHECK(!seen.count(t));
  CHECK_THROWS_AS(split_dataset(5, 0.7, 1), std::invalid_argument);
}

TEST_CASE("split: stratification preserves class proportions within 2%") {
  Rng rng(7);
  const int n = 1000;
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = rng.bernoulli(0.9) ? 1 : 2;
  const SplitIndices s = split_dataset(n, 0.7, 11, &labels);
  auto frac_of = [&](const std::vector<int>& idx) {
    int ones = 0;
    for (int i : idx) {
      if (labels[i] == 1) ++ones;
    }
    return static_cast<double>(ones) / idx.size();
  };
  int total_ones = 0;
  for (int l : labels) {
    if (l == 1) ++total_ones;
  }
  const double overall = static_cast<double>(total_ones) / n;
  CHECK(std::abs(frac_of(s.train) - overall) <= 0.02);
  CHECK(std::abs(frac_of(s.test) - overall) <= 0.02);
}

TEST_CASE("oos_mae: trivial fixtures") {
  Matrixd truth(1, 3), imputed(1, 3);
  truth << 1, 1, 1;
  imputed << 1, 1, 1;
  Mask::Grid m = Mask::Grid::Ones(1, 3);
  CHECK(oos_mae(imputed, truth, m, identity_stats(3)) == 0.0);
  imputed.setZero();
  CHECK(oos_mae(imputed, truth, m, identity_stats(3)) == 1.0);
  // {|e|} = {0.5, 1.0, 1.5} -> mean 1.0
  imputed << 0.5, 0.0, -0.5;
  CHECK(oos_mae(imputed, truth, m, identity_stats(3)) ==
        doctest::Approx(1.0).epsilon(1e-15));
  Mask::Grid none = Mask::Grid::Zero(1, 3);
  CHECK_THROWS_AS(oos_mae(imputed, truth, none, identity_stats(3)),
                  std::invalid_argument);
}

TEST_CASE("oos_mae: unmasked entries never contribute") {
  Rng rng(13);
  Matrixd truth(4, 3), imputed(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      truth(i, j) = rng.gaussian();
      imputed(i, j) = rng.gaussian();
    }
  }
  Mask::Grid m = Mask::Grid::Zero(4, 3);
  m(0, 0) = m(2, 1) = 1;
  const double base = oos_mae(imputed, truth, m, identity_stats(3));
  Matrixd perturbed = imputed;
  perturbed(3, 2) += 100.0;  // unmasked entry
  CHECK(oos_mae(perturbed, truth, m, identity_stats(3)) == base);
}

TEST_CASE("auc: trivial and fixture values") {
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  CHECK(auc(s, l) == doctest::Approx(testing_oracles::brute_force_auc(s, l))
                         .epsilon(1e-15));
  CHECK_THROWS_AS(auc({0.3, 0.4}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auc: matches the all-pairs oracle on random score sets with ties") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 30;
    std::vector<double> s(n);
    std::vector<int> l(n);
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // force ties
      l[i] = rng.bernoulli(0.4) ? 1 : 0;
      (l[i] ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    CHECK(auc(s, l) ==
          doctest::Approx(testing_oracles::brute_force_auc(s, l)).epsilon(1e-12));
  }
}

TEST_CASE("auc: invariant to strictly monotone score transforms") {
  Rng rng(19);
  std::vector<double> s(40);
  std::vector<int> l(40);
  for (int i = 0; i < 40; ++i) {
    s[i] = rng.gaussian();
    l[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  l[0] = 1;
  l[1] = 0;
  std::vector<double> t = s;
  for (double& v : t) v = std::exp(3.0 * v) + 7.0;
  CHECK(auc(s, l) == doctest::Approx(auc(t, l)).epsilon(1e-12));
}

TEST_CASE("macro one-vs-rest AUC") {
  Matrixd probs(6, 3);
  probs << 0.8, 0.1, 0.1, 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.6, 0.2, 0.1, 0.2,
      0.7, 0.2, 0.1, 0.7;
  const std::vector<int> labels = {1, 1, 2, 2, 3, 3};
  CHECK(auc_macro_ovr(probs, labels) == 1.0);
  CHECK_THROWS_AS(auc_macro_ovr(probs, std::vector<int>(6, 1)),
                  std::invalid_argument);
}

TEST_CASE("avg_rank: dominance, exact ties, hand-computed 3x2 fixture") {
  // A better on every dataset.
  const auto r1 = avg_rank({{0.1, 0.2}, {0.3, 0.4}}, true);
  CHECK(r1.rank[0] == 1.0);
  CHECK(r1.rank[1] == 2.0);
  // Exact tie on one dataset -> both get 1.5 there.
  const auto r2 = avg_rank({{0.5, 0.1}, {0.5, 0.2}}, true);
  CHECK(r2.rank[0] == doctest::Approx((1.5 + 1.0) / 2.0).epsilon(1e-15));
  CHECK(r2.rank[1] == doctest::Approx((1.5 + 2.0) / 2.0).epsilon(1e-15));
  // 3 methods x 2 datasets, hand-computed:
  //   dataset 0: values 0.3, 0.1, 0.2 -> ranks 3, 1, 2
  //   dataset 1: values 0.2, 0.2, 0.5 -> ranks 1.5, 1.5, 3
  const auto r3 = avg_rank({{0.3, 0.2}, {0.1, 0.2}, {0.2, 0.5}}, true);
  CHECK(r3.rank[0] == doctest::Approx(2.25).epsilon(1e-15));
  CHECK(r3.rank[1] == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(r3.rank[2] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("avg_rank: invariant to per-dataset monotone transforms; NaN pairwise") {
  const std::vector<std::vector<double>> base = {{0.3, 0.9}, {0.1, 0.5},
                                                 {0.2, 0.7}};
  std::vector<std::vector<double>> warped = base;
  for (auto& row : warped) {
    row[0] = std::log(row[0]);
    row[1] = row[1] * row[1] * 5.0;
  }
  CHECK(avg_rank(base, true).rank == avg_rank(warped, true).rank);

  std::vector<std::vector<double>> holey = base;
  holey[1][1] = std::numeric_limits<double>::quiet_NaN();
  const auto r = avg_rank(holey, true);
  CHECK(r.had_missing);
  // Method 1 is ranked only on dataset 0 where it is best.
  CHECK(r.rank[1] == 1.0);
}

TEST_CASE("protocol: oracle imputer scores zero on all K masks") {
  MaskedDataset ds = gaussian_dataset(300, 6, 21);
  Matrixd truth_test(static_cast<int>(ds.test_idx.size()), ds.cols());
  for (std::size_t r = 0; r < ds.test_idx.size(); ++r) {
    truth_test.row(static_cast<Eigen::Index>(r)) = ds.values.row(ds.test_idx[r]);
  }
  const ProtocolResult res =
      run_mnar_protocol(ds, 10, 0.3, oracle_imputer(truth_test), 23);
  CHECK(res.per_mask_mae.size() == 10);
  CHECK(res.failed_masks == 0);
  for (double v : res.per_mask_mae) CHECK(v == 0.0);
  CHECK(res.mean == 0.0);
}

TEST_CASE("protocol: constant-zero imputer matches direct computation") {
  MaskedDataset ds = gaussian_dataset(200, 5, 29);
  const ProtocolResult res = run_mnar_protocol(ds, 3, 0.3, zero_imputer(), 31);
  // Recompute the first mask's MAE directly.
  Matrixd train_vals(static_cast<int>(ds.train_idx.size()), ds.cols());
  Mask::Grid train_miss = Mask::Grid::Zero(ds.train_idx.size(), ds.cols());
  for (std::size_t r = 0; r < ds.train_idx.size(); ++r) {
    train_vals.row(static_cast<Eigen::Index>(r)) = ds.values.row(ds.train_idx[r]);
  }
  Matrixd test_truth(static_cast<int>(ds.test_idx.size()), ds.cols());
  for (std::size_t r = 0; r < ds.test_idx.size(); ++r) {
    test_truth.row(static_cast<Eigen::Index>(r)) = ds.values.row(ds.test_idx[r]);
  }
  const ColumnStats stats = train_column_stats(train_vals, train_miss);
  MnarConfig mnar;
  mnar.target_rate = 0.3;
  const Mask mask =
      mnar_logistic_m2m(test_truth, mnar, Rng::derive(31, 100).next_u64());
  double acc = 0.0;
  long cnt = 0;
  for (Eigen::Index i = 0; i < test_truth.rows(); ++i) {
    for (int j = 0; j < ds.cols(); ++j) {
      if (!mask.m(i, j)) continue;
      acc += std::abs(test_truth(i, j)) / stats.sd[j];
      ++cnt;
    }
  }
  CHECK(res.per_mask_mae[0] == doctest::Approx(acc / cnt).epsilon(1e-12));
}

TEST_CASE("protocol: failing method is recorded and flagged") {
  MaskedDataset ds = gaussian_dataset(120, 4, 37);
  ImputeMethod bad;
  bad.name = "always-throws";
  bad.run = [](const Matrixd&, const Mask::Grid&, const Matrixd&,
               const Mask::Grid&) -> Matrixd {
    throw std::runtime_error("nope");
  };
  const ProtocolResult res = run_mnar_protocol(ds, 4, 0.3, bad, 39);
  CHECK(res.failed_masks == 4);
  for (double v : res.per_mask_mae) CHECK(std::isnan(v));
}

TEST_CASE("report: AVG equals a direct recomputation; JSON round-trips") {
  BenchmarkReport rep;
  rep.methods = {"alpha", "beta"};
  rep.datasets = {"d0", "d1", "d2"};
  rep.k = 2;
  rep.p = 0.3;
  rep.per_mask = {
      {{0.10, 0.12}, {0.20, 0.22}, {0.30, 0.28}},
      {{0.15, 0.13}, {0.25, 0.27}, {0.35, 0.37}},
  };
  std::vector<double> am, as;
  rep.avg_column(am, as);
  // Direct recomputation: mask 0 and mask 1 dataset-averages per method.
  const double a0 = (0.10 + 0.20 + 0.30) / 3.0;
  const double a1 = (0.12 + 0.22 + 0.28) / 3.0;
  CHECK(am[0] == doctest::Approx((a0 + a1) / 2).epsilon(1e-15));
  const double want_sd = std::sqrt(((a0 - am[0]) * (a0 - am[0]) +
                                    (a1 - am[0]) * (a1 - am[0])) /
                                   1.0);
  CHECK(as[0] == doctest::Approx(want_sd).epsilon(1e-12));
  const auto ranks = rep.avg_ranks();
  CHECK(ranks[0] == 1.0);
  CHECK(ranks[1] == 2.0);

  const std::string json = rep.to_json();
  const BenchmarkReport back = BenchmarkReport::from_json(json);
  CHECK(back.methods == rep.methods);
  CHECK(back.per_mask == rep.per_mask);
  CHECK(rep.render_text().find("alpha") != std::string::npos);
  const std::string svg = render_svg(rep);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("AVG") != std::string::npos);
}

TEST_CASE("bench_runtime: produces the requested repeats, nonnegative") {
  ImputeMethod noop = zero_imputer();
  const RuntimeResult res = bench_runtime(noop, 200, 10, 5, 0.3, 3);
  CHECK(res.seconds.size() == 5);
  for (double s : res.seconds) CHECK(s >= 0.0);
  CHECK(res.mean < 1.0);  // a no-op fill on 200x10 is near-instant
}

TEST_CASE("baseline imputers: mean fill and identity on complete data") {
  Matrixd train(4, 2);
  train << 1, 10, 3, 10, 2, 10, 2, 10;  // column means: 2, 10
  Mask::Grid train_miss = Mask::Grid::Zero(4, 2);
  Matrixd test(2, 2);
  test << 5, 5, 7, 7;
  Mask::Grid test_miss = Mask::Grid::Zero(2, 2);
  test_miss(0, 0) = 1;
  const Matrixd out = mean_imputer().run(train, train_miss, test, test_miss);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(1, 0) == 7.0);
  // No missing entries: identity.
  Mask::Grid none = Mask::Grid::Zero(2, 2);
  CHECK(mean_imputer().run(train, train_miss, test, none) == test);
  // All-missing train column: flagged degenerate, filled via zero mean.
  Mask::Grid degenerate = train_miss;
  degenerate.col(1).setOnes();
  const ColumnStats st = train_column_stats(train, degenerate);
  CHECK(st.degenerate_cols == std::vector<int>{1});
  CHECK(st.mean[1] == 0.0);
}

TEST_CASE("median imputer uses train medians") {
  Matrixd train(5, 1);
  train << 1, 9, 2, 8, 3;  // median 3
  Mask::Grid tm = Mask::Grid::Zero(5, 1);
  Matrixd test(1, 1);
  test << 0;
  Mask::Grid miss = Mask::Grid::Ones(1, 1);
  CHECK(median_imputer().run(train, tm, test, miss)(0, 0) == 3.0);
}
