#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/model/params.hpp"

namespace tnet {

enum class OptimizerKind { adam, sgd };

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}})

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

// Adam or momentum SGD over the trainable entries of a ParamStore. State
// tensors are kept in the store's registration order.
template <typename S>
class Optimizer {
 public:
  Optimizer(const ParamStore<S>& store, OptimizerSettings settings) : settings_(settings) {
    for (const auto& p : store.all()) {
      first_.emplace_back(p->value.channels(), p->value.batch(), p->value.length());
      second_.emplace_back(p->value.channels(), p->value.batch(), p->value.length());
    }
  }

  void step(ParamStore<S>& store, double lr) {
    const auto& ps = store.all();
    if (ps.size() != first_.size()) throw ContractError("optimizer: parameter set changed");
    ++steps_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& p = *ps[k];
      if (!p.trainable()) continue;
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        if (settings_.kind == OptimizerKind::adam) {
          const double mi = b1 * m[i] + (1 - b1) * g;
          const double vi = b2 * v[i] + (1 - b2) * g * g;
          m[i] = static_cast<S>(mi);
          v[i] = static_cast<S>(vi);
          p.value[i] = static_cast<S>(p.value[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + settings_.eps));
        } else {
          const double mi = settings_.momentum * m[i] + g;
          m[i] = static_cast<S>(mi);
          p.value[i] = static_cast<S>(p.value[i] - lr * mi);
        }
      }
    }
  }

  const OptimizerSettings& settings() const noexcept { return settings_; }
  std::int64_t steps() const noexcept { return steps_; }
  void set_steps(std::int64_t s) noexcept { steps_ = s; }
  std::vector<Tensor<S>>& first_moments() noexcept { return first_; }
  std::vector<Tensor<S>>& second_moments() noexcept { return second_; }
  const std::vector<Tensor<S>>& first_moments() const noexcept { return first_; }
  const std::vector<Tensor<S>>& second_moments() const noexcept { return second_; }

 private:
  OptimizerSettings settings_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<S>> first_, second_;
};

// Scales trainable gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before scaling.
template <typename S>
double clip_grad_norm(ParamStore<S>& store, double max_norm) {
  double sq = 0;
  for (const auto& p : store.all())
    if (p->trainable())
      for (S g : p->grad.vec()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double f = max_norm / norm;
    for (auto& p : store.all())
      if (p->trainable())
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] = static_cast<S>(p->grad[i] * f);
  }
  return norm;
}

}  // namespace tnet
