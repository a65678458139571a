#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tnet/core/tensor.hpp"

namespace tnet {

enum class ParamKind { weight, bias, norm_affine, norm_stat };

inline const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::norm_affine: return "norm_affine";
    case ParamKind::norm_stat: return "norm_stat";
  }
  return "?";
}

template <typename S>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::weight;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter(std::string n, ParamKind k, Tensor<S> v)
      : name(std::move(n)), kind(k), value(std::move(v)), grad(value.channels(), value.batch(), value.length()) {}

  bool trainable() const noexcept { return kind != ParamKind::norm_stat; }
  // Entries penalized by the L2 term: weights only, never biases or norm parameters.
  bool regularized() const noexcept { return kind == ParamKind::weight; }
  void zero_grad() { grad.fill(S(0)); }
};

template <typename S>
using ParamPtr = std::shared_ptr<Parameter<S>>;

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  ParamPtr<S> param;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  const Tensor<S>& val() const noexcept { return param ? param->value : value; }

  Tensor<S>& ensure_grad() {
    if (param) return param->grad;
    if (grad.empty() && !value.empty()) grad = Tensor<S>(value.channels(), value.batch(), value.length());
    return grad;
  }
  bool has_grad() const noexcept { return param || !grad.empty(); }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

// Reverse-mode tape. Nodes are appended in creation order, which is already
// a topological order, so backward is a reverse sweep.
template <typename S>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<S> constant(Tensor<S> value) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    return n;
  }

  Var<S> param(const ParamPtr<S>& p) {
    auto n = std::make_shared<Node<S>>();
    n->param = p;
    n->requires_grad = grad_enabled_ && param_grads_ && p->trainable();
    return n;
  }

  // Network input; receives a gradient only when input gradients are enabled.
  Var<S> input(Tensor<S> value) {
    auto n = constant(std::move(value));
    n->requires_grad = grad_enabled_ && input_grads_;
    return n;
  }

  // Attribution mode: gradients flow to activations and inputs but parameter
  // gradients are left untouched.
  void set_param_grads(bool on) noexcept { param_grads_ = on; }
  void set_input_grads(bool on) noexcept { input_grads_ = on; }

  // Creates an op output. `backward` receives the output node and must
  // accumulate into inputs that require grad.
  Var<S> make(Tensor<S> value, std::initializer_list<Var<S>> inputs, std::function<void(Node<S>&)> backward) {
    return make(std::move(value), std::vector<Var<S>>(inputs), std::move(backward));
  }

  Var<S> make(Tensor<S> value, const std::vector<Var<S>>& inputs, std::function<void(Node<S>&)> backward) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    if (!grad_enabled_) return n;
    bool any = false;
    for (const auto& in : inputs) any = any || (in && in->requires_grad);
    if (!any) return n;
    n->requires_grad = true;
    n->backward = std::move(backward);
    tape_.push_back(n);
    return n;
  }

  void backward(const Var<S>& root, S seed = S(1)) {
    if (!root->requires_grad) return;
    auto& g = root->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<S>& node = **it;
      if (node.has_grad() && node.backward) node.backward(node);
    }
  }

  // Branch signature of every non-smooth decision taken during forward
  // (ReLU masks, pooling argmax, clamps, selections). Two evaluations with
  // equal signatures lie on the same smooth piece.
  void set_track_branches(bool on) noexcept { track_ = on; }
  bool tracking_branches() const noexcept { return track_; }
  void branch(std::uint64_t v) noexcept {
    if (!track_) return;
    signature_ ^= v + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t signature() const noexcept { return signature_; }

  // Test hook: scales the weight gradient emitted by conv layers.
  void set_backward_fault(S scale) noexcept { fault_ = scale; }
  S backward_fault() const noexcept { return fault_; }

 private:
  bool grad_enabled_;
  bool param_grads_ = true;
  bool input_grads_ = false;
  bool track_ = false;
  std::uint64_t signature_ = 0;
  S fault_ = S(1);
  std::vector<Var<S>> tape_;
};

}  // namespace tnet
