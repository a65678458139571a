#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tnet/core/graph.hpp"
#include "tnet/core/rng.hpp"

namespace tnet {

// Named parameter registry. Entries are unique objects; a shared encoder is
// represented by layers holding the same ParamPtr, not by duplicate entries.
template <typename S>
class ParamStore {
 public:
  ParamPtr<S> add(const std::string& name, ParamKind kind, Tensor<S> value) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter " + name);
    auto p = std::make_shared<Parameter<S>>(name, kind, std::move(value));
    by_name_[name] = p;
    ordered_.push_back(p);
    return p;
  }

  const std::vector<ParamPtr<S>>& all() const noexcept { return ordered_; }
  ParamPtr<S> find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : ordered_)
      if (p->trainable()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : ordered_) p->zero_grad();
  }

  // Sum of squares over regularized entries.
  double l2() const {
    double s = 0;
    for (const auto& p : ordered_)
      if (p->regularized())
        for (S v : p->value.vec()) s += double(v) * v;
    return s;
  }

 private:
  std::map<std::string, ParamPtr<S>> by_name_;
  std::vector<ParamPtr<S>> ordered_;
};

template <typename S>
Tensor<S> normal_tensor(int c, int n, int l, double stddev, std::uint64_t seed) {
  Tensor<S> t(c, n, l);
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<S>(stddev * rng.normal());
  return t;
}

}  // namespace tnet
