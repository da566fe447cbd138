#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "layoutdetr/autodiff/tensor.hpp"
#include "layoutdetr/core/random.hpp"

namespace layoutdetr::ad {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// Ordered collection of trainable leaves. Order is construction order and
// is what checkpoints and optimizers key on.
template <class T>
class ParamRegistry {
 public:
  Tensor<T> add(std::string name, int rows, int cols, std::vector<T> init) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigurationError("duplicate parameter name " + name);
    auto t = Tensor<T>::parameter(rows, cols, std::move(init));
    params_.push_back({std::move(name), t});
    return t;
  }

  // Glorot-uniform weights.
  Tensor<T> add_glorot(std::string name, int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / double(rows + cols));
    std::vector<T> v(std::size_t(rows) * cols);
    for (auto& x : v) x = T(rng.uniform(-limit, limit));
    return add(std::move(name), rows, cols, std::move(v));
  }

  Tensor<T> add_normal(std::string name, int rows, int cols, double stddev, Rng& rng) {
    std::vector<T> v(std::size_t(rows) * cols);
    for (auto& x : v) x = T(stddev * rng.normal());
    return add(std::move(name), rows, cols, std::move(v));
  }

  Tensor<T> add_constant(std::string name, int rows, int cols, T value) {
    return add(std::move(name), rows, cols, std::vector<T>(std::size_t(rows) * cols, value));
  }

  std::vector<NamedParam<T>>& params() { return params_; }
  const std::vector<NamedParam<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // FNV-1a over raw parameter bytes; used to prove a half-step left a
  // parameter group untouched.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.tensor.data());
      for (std::size_t i = 0; i < p.tensor.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::vector<NamedParam<T>> params_;
};

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
};

template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamRegistry<T>* registry, AdamConfig config) : registry_(registry), config_(config) {
    for (const auto& p : registry_->params()) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  // Applies one update from the accumulated gradients, then clears them.
  void step() {
    auto& params = registry_->params();
    double scale = 1.0;
    if (config_.clip_norm > 0) {
      double sq = 0;
      for (auto& p : params)
        for (T g : p.tensor.grad()) sq += double(g) * double(g);
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& tensor = params[k].tensor;
      const auto& grad = tensor.grad();
      if (grad.empty()) continue;
      T* w = tensor.mutable_data();
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = double(grad[i]) * scale;
        m_[k][i] = config_.beta1 * m_[k][i] + (1 - config_.beta1) * g;
        v_[k][i] = config_.beta2 * v_[k][i] + (1 - config_.beta2) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        w[i] = T(double(w[i]) - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
      }
    }
    registry_->zero_grad();
  }

  std::int64_t steps_taken() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore(std::int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ConfigurationError("optimizer state size mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  const AdamConfig& config() const { return config_; }

 private:
  ParamRegistry<T>* registry_ = nullptr;
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace layoutdetr::ad
