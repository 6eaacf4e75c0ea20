#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfnflow {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrixd = Matrix<double>;
using Matrixf = Matrix<float>;
using Vectord = Eigen::VectorXd;

enum class Activation { kIdentity, kTanh, kRelu, kGelu };

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw std::invalid_argument("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
  }
  return "?";
}

// GELU, tanh approximation. The same constants are used by the analytic
// gradient and by finite-difference checks.
template <class S>
S gelu_scalar(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S a = S(0.044715);
  return S(0.5) * x * (S(1) + std::tanh(c * (x + a * x * x * x)));
}

template <class S>
S gelu_grad_scalar(S x) {
  const S c = S(0.7978845608028654);
  const S a = S(0.044715);
  const S u = c * (x + a * x * x * x);
  const S t = std::tanh(u);
  return S(0.5) * (S(1) + t) +
         S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3) * a * x * x);
}

template <class S>
S activation_scalar(S x, Activation k) {
  switch (k) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > S(0) ? x : S(0);
    case Activation::kGelu: return gelu_scalar(x);
  }
  return x;
}

template <class S>
S activation_grad_scalar(S x, Activation k) {
  switch (k) {
    case Activation::kIdentity: return S(1);
    case Activation::kTanh: {
      const S t = std::tanh(x);
      return S(1) - t * t;
    }
    case Activation::kRelu: return x > S(0) ? S(1) : S(0);
    case Activation::kGelu: return gelu_grad_scalar(x);
  }
  return S(1);
}

// Attention pattern over a row-stacked token matrix.
//   kContextQuery: rows [0, n_ctx) are context, the rest are queries.
//     Context rows attend to all context rows; query rows attend to the
//     context plus themselves; queries never attend to other queries.
//   kCross: every query row attends to every key/value row.
struct AttnPattern {
  enum Kind { kContextQuery, kCross } kind = kContextQuery;
  int n_ctx = 0;

  static AttnPattern context_query(int n_ctx) {
    return AttnPattern{kContextQuery, n_ctx};
  }
  static AttnPattern cross() { return AttnPattern{kCross, 0}; }
};

template <class S>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense row-major matrices. Nodes are appended in
// forward order (a topological order by construction); backward replays the
// recorded closures in reverse. Nodes never touched by the forward pass keep
// zero gradient.
template <class S>
class Tape {
 public:
  using Mat = Matrix<S>;
  using V = Var<S>;

  V leaf(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), nullptr});
    return V{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(V v) const { return nodes_.at(v.id).value; }

  const Mat& grad(V v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      zero_like_ = Mat::Zero(n.value.rows(), n.value.cols());
      return zero_like_;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  V matmul(V a, V b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.rows()) {
      throw std::invalid_argument(
          "matmul: inner dimensions disagree (" + std::to_string(A.cols()) +
          " vs " + std::to_string(B.rows()) + ")");
    }
    // Row-wise products: each output row depends only on its input row's
    // content, never on its position or the matrix height. Token rows with
    // equal content stay bit-identical wherever they sit, which the
    // permutation-invariance and query-isolation contracts rely on.
    Mat y(A.rows(), B.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      y.row(r).noalias() = A.row(r) * B;
    }
    V out = leaf(std::move(y));
    record(out, [this, a, b, out]() {
      const Mat& g = nodes_[out.id].grad;
      grad_ref(a).noalias() += g * nodes_[b.id].value.transpose();
      grad_ref(b).noalias() += nodes_[a.id].value.transpose() * g;
    });
    return out;
  }

  V add(V a, V b) {
    require_same_shape(a, b, "add");
    V out = leaf(value(a) + value(b));
    record(out, [this, a, b, out]() {
      const Mat& g = nodes_[out.id].grad;
      grad_ref(a) += g;
      grad_ref(b) += g;
    });
    return out;
  }

  V sub(V a, V b) {
    require_same_shape(a, b, "sub");
    V out = leaf(value(a) - value(b));
    record(out, [this, a, b, out]() {
      const Mat& g = nodes_[out.id].grad;
      grad_ref(a) += g;
      grad_ref(b) -= g;
    });
    return out;
  }

  // Elementwise product.
  V cmul(V a, V b) {
    require_same_shape(a, b, "cmul");
    V out = leaf(value(a).cwiseProduct(value(b)));
    record(out, [this, a, b, out]() {
      const Mat& g = nodes_[out.id].grad;
      grad_ref(a).array() += g.array() * nodes_[b.id].value.array();
      grad_ref(b).array() += g.array() * nodes_[a.id].value.array();
    });
    return out;
  }

  V scale(V a, S c) {
    V out = leaf(value(a) * c);
    record(out, [this, a, c, out]() {
      grad_ref(a) += nodes_[out.id].grad * c;
    });
    return out;
  }

  // x + row broadcast over every row of x; row must be 1 x cols.
  V add_row(V x, V row) {
    const Mat& X = value(x);
    const Mat& R = value(row);
    if (R.rows() != 1 || R.cols() != X.cols()) {
      throw std::invalid_argument("add_row: row must be 1 x cols of x");
    }
    Mat y = X;
    y.rowwise() += R.row(0);
    V out = leaf(std::move(y));
    record(out, [this, x, row, out]() {
      const Mat& g = nodes_[out.id].grad;
      grad_ref(x) += g;
      grad_ref(row).row(0) += g.colwise().sum();
    });
    return out;
  }

  V activation(V x, Activation k) {
    const Mat& X = value(x);
    Mat y = X.unaryExpr([k](S v) { return activation_scalar(v, k); });
    V out = leaf(std::move(y));
    record(out, [this, x, k, out]() {
      const Mat& g = nodes_[out.id].grad;
      const Mat& X2 = nodes_[x.id].value;
      grad_ref(x).array() +=
          g.array() *
          X2.unaryExpr([k](S v) { return activation_grad_scalar(v, k); }).array();
    });
    return out;
  }

  // Per-row layer norm with learned gain/bias (each 1 x cols).
  V layer_norm(V x, V gain, V bias, S eps = S(1e-5)) {
    const Mat& X = value(x);
    const Mat& G = value(gain);
    const Mat& B = value(bias);
    const auto rows = X.rows();
    const auto cols = X.cols();
    Mat xhat(rows, cols);
    Mat inv_sigma(rows, 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const S mu = X.row(r).mean();
      const S var = (X.row(r).array() - mu).square().mean();
      const S is = S(1) / std::sqrt(var + eps);
      inv_sigma(r, 0) = is;
      xhat.row(r) = (X.row(r).array() - mu) * is;
    }
    Mat y(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      y.row(r) = xhat.row(r).cwiseProduct(G.row(0)) + B.row(0);
    }
    V out = leaf(std::move(y));
    record(out, [this, x, gain, bias, out, xhat, inv_sigma]() {
      const Mat& g = nodes_[out.id].grad;
      const Mat& G2 = nodes_[gain.id].value;
      const auto rows = g.rows();
      const auto cols = g.cols();
      Mat& dx = grad_ref(x);
      Mat& dg = grad_ref(gain);
      Mat& db = grad_ref(bias);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto gy = g.row(r).cwiseProduct(G2.row(0));
        const S mean_gy = gy.mean();
        const S mean_gy_xhat = gy.cwiseProduct(xhat.row(r)).mean();
        dx.row(r).array() +=
            inv_sigma(r, 0) * (gy.array() - mean_gy -
                               xhat.row(r).array() * mean_gy_xhat);
        dg.row(0) += g.row(r).cwiseProduct(xhat.row(r));
        db.row(0) += g.row(r);
        (void)cols;
      }
    });
    return out;
  }

  V slice_cols(V x, int start, int count) {
    const Mat& X = value(x);
    if (start < 0 || count < 0 || start + count > X.cols()) {
      throw std::invalid_argument("slice_cols: out of range");
    }
    V out = leaf(X.middleCols(start, count));
    record(out, [this, x, start, count, out]() {
      grad_ref(x).middleCols(start, count) += nodes_[out.id].grad;
    });
    return out;
  }

  V slice_rows(V x, int start, int count) {
    const Mat& X = value(x);
    if (start < 0 || count < 0 || start + count > X.rows()) {
      throw std::invalid_argument("slice_rows: out of range");
    }
    V out = leaf(X.middleRows(start, count));
    record(out, [this, x, start, count, out]() {
      grad_ref(x).middleRows(start, count) += nodes_[out.id].grad;
    });
    return out;
  }

  V concat_cols(const std::vector<V>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (V p : parts) {
      if (value(p).rows() != rows) {
        throw std::invalid_argument("concat_cols: row mismatch");
      }
      cols += value(p).cols();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (V p : parts) {
      y.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    V out = leaf(std::move(y));
    record(out, [this, parts, out]() {
      const Mat& g = nodes_[out.id].grad;
      Eigen::Index at = 0;
      for (V p : parts) {
        const Eigen::Index c = nodes_[p.id].value.cols();
        grad_ref(p) += g.middleCols(at, c);
        at += c;
      }
    });
    return out;
  }

  // Row gather from an embedding table; backward scatter-adds.
  V gather_rows(V table, std::vector<int> idx) {
    const Mat& T = value(table);
    Mat y(static_cast<Eigen::Index>(idx.size()), T.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= T.rows()) {
        throw std::invalid_argument("gather_rows: index out of range");
      }
      y.row(static_cast<Eigen::Index>(i)) = T.row(idx[i]);
    }
    V out = leaf(std::move(y));
    record(out, [this, table, idx = std::move(idx), out]() {
      const Mat& g = nodes_[out.id].grad;
      Mat& dt = grad_ref(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
      }
    });
    return out;
  }

  // Sum of all entries -> 1x1.
  V sum_all(V x) {
    Mat y(1, 1);
    y(0, 0) = value(x).sum();
    V out = leaf(std::move(y));
    record(out, [this, x, out]() {
      grad_ref(x).array() += nodes_[out.id].grad(0, 0);
    });
    return out;
  }

  // Scaled dot-product attention with the pattern above. All reductions over
  // the key axis run in a canonical order (score-sorted, ties broken by the
  // value-row bytes), so permuting context rows leaves every output row
  // bit-identical.
  V attention(V q, V k, V v, AttnPattern pattern) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& Vm = value(v);
    if (K.rows() != Vm.rows() || Q.cols() != K.cols()) {
      throw std::invalid_argument("attention: shape mismatch");
    }
    const int nq = static_cast<int>(Q.rows());
    const int nk = static_cast<int>(K.rows());
    const int dh = static_cast<int>(Q.cols());
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    if (pattern.kind == AttnPattern::kContextQuery) {
      if (nq != nk) {
        throw std::invalid_argument("attention: context pattern needs q==k rows");
      }
      if (pattern.n_ctx < 1 || pattern.n_ctx > nq) {
        throw std::invalid_argument("attention: bad n_ctx");
      }
    }

    auto allowed = [&](int i, std::vector<int>& out_idx) {
      out_idx.clear();
      if (pattern.kind == AttnPattern::kCross) {
        for (int j = 0; j < nk; ++j) out_idx.push_back(j);
      } else {
        for (int j = 0; j < pattern.n_ctx; ++j) out_idx.push_back(j);
        if (i >= pattern.n_ctx) out_idx.push_back(i);
      }
    };

    Mat Y = Mat::Zero(nq, static_cast<Eigen::Index>(Vm.cols()));
    // Per query row: canonically ordered key indices and softmax weights,
    // cached for backward.
    std::vector<std::vector<int>> order(nq);
    std::vector<std::vector<S>> weights(nq);

    std::vector<int> idx;
    for (int i = 0; i < nq; ++i) {
      allowed(i, idx);
      const int m = static_cast<int>(idx.size());
      std::vector<S> scores(m);
      for (int t = 0; t < m; ++t) {
        scores[t] = Q.row(i).dot(K.row(idx[t])) * inv_sqrt;
      }
      // Canonical order: score descending; exact score ties broken by the
      // value rows' bytes so equal-content keys stay interchangeable.
      std::vector<int> ord(m);
      std::iota(ord.begin(), ord.end(), 0);
      std::sort(ord.begin(), ord.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        const S* ra = Vm.row(idx[a]).data();
        const S* rb = Vm.row(idx[b]).data();
        const int c = std::memcmp(ra, rb, sizeof(S) * Vm.cols());
        if (c != 0) return c < 0;
        const S* ka = K.row(idx[a]).data();
        const S* kb = K.row(idx[b]).data();
        return std::memcmp(ka, kb, sizeof(S) * K.cols()) < 0;
      });
      S mx = scores[ord[0]];
      std::vector<S> e(m);
      S z = S(0);
      for (int t = 0; t < m; ++t) {
        e[t] = std::exp(scores[ord[t]] - mx);
        z += e[t];
      }
      order[i].resize(m);
      weights[i].resize(m);
      for (int t = 0; t < m; ++t) {
        order[i][t] = idx[ord[t]];
        weights[i][t] = e[t] / z;
        Y.row(i) += weights[i][t] * Vm.row(idx[ord[t]]);
      }
    }

    V out = leaf(std::move(Y));
    record(out, [this, q, k, v, out, order = std::move(order),
                 weights = std::move(weights), inv_sqrt]() {
      const Mat& g = nodes_[out.id].grad;
      const Mat& Q = nodes_[q.id].value;
      const Mat& K = nodes_[k.id].value;
      const Mat& Vm = nodes_[v.id].value;
      Mat& dq = grad_ref(q);
      Mat& dk = grad_ref(k);
      Mat& dv = grad_ref(v);
      const int nq = static_cast<int>(Q.rows());
      for (int i = 0; i < nq; ++i) {
        const auto& ord = order[i];
        const auto& w = weights[i];
        const int m = static_cast<int>(ord.size());
        // dL/dw_t and the softmax Jacobian contraction.
        std::vector<S> dw(m);
        S wdw = S(0);
        for (int t = 0; t < m; ++t) {
          dw[t] = g.row(i).dot(Vm.row(ord[t]));
          wdw += w[t] * dw[t];
        }
        for (int t = 0; t < m; ++t) {
          dv.row(ord[t]) += w[t] * g.row(i);
          const S ds = w[t] * (dw[t] - wdw) * inv_sqrt;
          dq.row(i) += ds * K.row(ord[t]);
          dk.row(ord[t]) += ds * Q.row(i);
        }
      }
    });
    return out;
  }

  // Mean cross-entropy over rows [row_begin, rows) of the logits, restricted
  // to the first valid_classes columns; remaining columns act as -inf logits.
  V softmax_cross_entropy(V logits, const std::vector<int>& labels0,
                          int valid_classes, int row_begin) {
    const Mat& L = value(logits);
    const int rows = static_cast<int>(L.rows());
    if (valid_classes < 1 || valid_classes > L.cols()) {
      throw std::invalid_argument("softmax_cross_entropy: bad class count");
    }
    if (row_begin < 0 || row_begin >= rows) {
      throw std::invalid_argument("softmax_cross_entropy: bad row range");
    }
    const int n = rows - row_begin;
    if (static_cast<int>(labels0.size()) != n) {
      throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    }
    S total = S(0);
    for (int r = 0; r < n; ++r) {
      const int lab = labels0[r];
      if (lab < 0 || lab >= valid_classes) {
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
      }
      const auto row = L.row(row_begin + r).head(valid_classes);
      const S mx = row.maxCoeff();
      S z = S(0);
      for (int c = 0; c < valid_classes; ++c) z += std::exp(row(c) - mx);
      total += (mx + std::log(z)) - row(lab);
    }
    Mat y(1, 1);
    y(0, 0) = total / static_cast<S>(n);
    V out = leaf(std::move(y));
    record(out, [this, logits, labels0, valid_classes, row_begin, n, out]() {
      const S gscale = nodes_[out.id].grad(0, 0) / static_cast<S>(n);
      const Mat& L = nodes_[logits.id].value;
      Mat& dl = grad_ref(logits);
      for (int r = 0; r < n; ++r) {
        const auto row = L.row(row_begin + r).head(valid_classes);
        const S mx = row.maxCoeff();
        S z = S(0);
        for (int c = 0; c < valid_classes; ++c) z += std::exp(row(c) - mx);
        for (int c = 0; c < valid_classes; ++c) {
          S p = std::exp(row(c) - mx) / z;
          if (c == labels0[r]) p -= S(1);
          dl(row_begin + r, c) += gscale * p;
        }
      }
    });
    return out;
  }

  void backward(V loss) {
    const Mat& L = value(loss);
    if (L.rows() != 1 || L.cols() != 1) {
      throw std::invalid_argument("backward: loss must be a 1x1 scalar");
    }
    grad_ref(loss)(0, 0) = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].backward && nodes_[i].grad.size() != 0) {
        nodes_[i].backward();
      }
    }
  }

  bool all_finite(V v) const { return value(v).allFinite(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;
  };

  Mat& grad_ref(V v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  void record(V out, std::function<void()> fn) {
    nodes_[out.id].backward = std::move(fn);
  }

  void require_same_shape(V a, V b, const char* op) const {
    if (value(a).rows() != value(b).rows() ||
        value(a).cols() != value(b).cols()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
  }

  std::vector<Node> nodes_;
  mutable Mat zero_like_;
};

}  // namespace pfnflow
