#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "duodepth/core/grid.hpp"
#include "duodepth/core/rng.hpp"

namespace duodepth::nn {

template <class S>
struct Param {
  std::vector<int> dims;
  Eigen::Array<S, Eigen::Dynamic, 1> value;
  Eigen::Array<S, Eigen::Dynamic, 1> grad;

  std::int64_t count() const { return value.size(); }
};

// Named parameter arrays with deterministic (sorted) iteration order.
template <class S>
class ParamStore {
 public:
  Param<S>& create(const std::string& name, std::vector<int> dims) {
    if (params_.count(name)) throw ContractViolation("param exists: " + name);
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    Param<S> p;
    p.dims = std::move(dims);
    p.value = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(n);
    p.grad = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(n);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Param<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("no such param: " + name);
    return it->second;
  }
  const Param<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("no such param: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [k, p] : params_) p.grad.setZero();
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : params_) n += p.count();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param<S>> params_;
};

// He-normal conv kernel [kh, kw, cin, cout] plus zero bias [cout].
template <class S>
void init_conv(ParamStore<S>& store, const std::string& name, int kh, int kw, int cin, int cout,
               Rng& rng) {
  Param<S>& w = store.create(name + ".w", {kh, kw, cin, cout});
  const double stddev = std::sqrt(2.0 / double(kh * kw * cin));
  for (std::int64_t i = 0; i < w.count(); ++i) w.value[i] = S(rng.normal() * stddev);
  store.create(name + ".b", {cout});
}

}  // namespace duodepth::nn
