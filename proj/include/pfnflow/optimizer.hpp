#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfnflow/tensor.hpp"

namespace pfnflow {

// Linear warmup for `warmup_epochs`, then cosine decay to `min_lr`.
// During warmup, lr(e) = base * (e + 1) / warmup_epochs.
struct LrSchedule {
  double base_lr = 3e-5;
  int warmup_epochs = 20;
  double min_lr = 1e-8;
  int total_epochs = 100;

  double at(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("LrSchedule: negative epoch");
    if (warmup_epochs > 0 && epoch < warmup_epochs) {
      return base_lr * static_cast<double>(epoch + 1) /
             static_cast<double>(warmup_epochs);
    }
    const int span = total_epochs - warmup_epochs;
    if (span <= 0) return base_lr;
    double progress = static_cast<double>(epoch - warmup_epochs) /
                      static_cast<double>(span);
    progress = std::min(progress, 1.0);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
  }
};

// Named dense parameters with paired gradient buffers, kept in registration
// order so updates and serialization are deterministic.
template <class S>
class ParamStore {
 public:
  using Mat = Matrix<S>;

  int add(const std::string& name, Mat value) {
    if (index_.count(name)) {
      throw std::invalid_argument("ParamStore: duplicate name " + name);
    }
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    grads_.push_back(Mat::Zero(value.rows(), value.cols()));
    values_.push_back(std::move(value));
    return static_cast<int>(names_.size()) - 1;
  }

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(i); }
  Mat& value(int i) { return values_.at(i); }
  const Mat& value(int i) const { return values_.at(i); }
  Mat& grad(int i) { return grads_.at(i); }
  const Mat& grad(int i) const { return grads_.at(i); }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("ParamStore: unknown name " + name);
    }
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grads() {
    for (auto& g : grads_) g.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::vector<Mat> grads_;
  std::map<std::string, int> index_;
};

// Adam with bias correction. Moments are kept in double regardless of the
// parameter scalar type so the f32 training mode stays well-conditioned.
template <class S>
class AdamOptimizer {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamOptimizer(ParamStore<S>& params, LrSchedule schedule, Config cfg = {})
      : params_(params), schedule_(schedule), cfg_(cfg) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (int i = 0; i < params.count(); ++i) {
      m_[i] = Matrixd::Zero(params.value(i).rows(), params.value(i).cols());
      v_[i] = Matrixd::Zero(params.value(i).rows(), params.value(i).cols());
    }
  }

  long step_count() const { return step_; }
  double last_lr() const { return last_lr_; }

  // Applies one update using the gradients currently held in the store.
  // Throws on non-finite gradients; the trainer catches this and aborts with
  // its last-good checkpoint.
  void step(int epoch) {
    for (int i = 0; i < params_.count(); ++i) {
      if (!params_.grad(i).allFinite()) {
        throw std::runtime_error("AdamOptimizer: non-finite gradient in " +
                                 params_.name(i));
      }
    }
    ++step_;
    const double lr = schedule_.at(epoch);
    last_lr_ = lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (int i = 0; i < params_.count(); ++i) {
      Matrixd g = params_.grad(i).template cast<double>();
      if (cfg_.weight_decay != 0.0) {
        g += cfg_.weight_decay * params_.value(i).template cast<double>();
      }
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Matrixd mhat = m_[i] / bc1;
      Matrixd vhat = v_[i] / bc2;
      Matrixd upd =
          mhat.array() / (vhat.array().sqrt() + cfg_.eps) * lr;
      params_.value(i) -= upd.template cast<S>();
    }
  }

 private:
  ParamStore<S>& params_;
  LrSchedule schedule_;
  Config cfg_;
  std::vector<Matrixd> m_;
  std::vector<Matrixd> v_;
  long step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace pfnflow
