#pragma once

#include <cmath>
#include <map>
#include <string>

#include "duodepth/nn/params.hpp"

namespace duodepth::nn {

// Elementwise clamp of every stored gradient into [lo, hi].
template <class S>
void clip_gradients(ParamStore<S>& store, S lo, S hi) {
  for (auto& [name, p] : store) p.grad = p.grad.min(hi).max(lo);
}

template <class S>
bool gradients_within(const ParamStore<S>& store, S lo, S hi) {
  for (const auto& [name, p] : store)
    if ((p.grad < lo).any() || (p.grad > hi).any()) return false;
  return true;
}

// Adam with decoupled weight decay. Moment buffers live here, keyed by
// parameter name, so they can be serialized with checkpoints.
template <class S>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-4;

  void step(ParamStore<S>& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (auto& [name, p] : store) {
      auto& m = moment(m_, name, p.count());
      auto& v = moment(v_, name, p.count());
      m = S(beta1) * m + S(1.0 - beta1) * p.grad;
      v = S(beta2) * v + S(1.0 - beta2) * p.grad * p.grad;
      for (std::int64_t i = 0; i < p.count(); ++i) {
        const double mh = double(m[i]) / bc1;
        const double vh = double(v[i]) / bc2;
        p.value[i] -= S(lr * (mh / (std::sqrt(vh) + eps) + weight_decay * double(p.value[i])));
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

  std::map<std::string, Eigen::Array<S, Eigen::Dynamic, 1>>& first_moments() { return m_; }
  std::map<std::string, Eigen::Array<S, Eigen::Dynamic, 1>>& second_moments() { return v_; }

 private:
  Eigen::Array<S, Eigen::Dynamic, 1>& moment(
      std::map<std::string, Eigen::Array<S, Eigen::Dynamic, 1>>& bank, const std::string& name,
      std::int64_t n) {
    auto it = bank.find(name);
    if (it == bank.end())
      it = bank.emplace(name, Eigen::Array<S, Eigen::Dynamic, 1>::Zero(n)).first;
    return it->second;
  }

  std::int64_t t_ = 0;
  std::map<std::string, Eigen::Array<S, Eigen::Dynamic, 1>> m_, v_;
};

// Single-peak schedule: linear warmup to lr_max, cosine decay afterwards.
// lr_at(peak_step()) == lr_max exactly.
struct OneCycleSchedule {
  double lr_max = 2e-4;
  int total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  int peak_step() const {
    return std::max(0, int(std::floor(pct_start * double(total_steps - 1))));
  }

  double lr_at(int step) const {
    if (total_steps <= 1) return lr_max;
    const int sp = peak_step();
    const double lr0 = lr_max / div_factor;
    const double lrf = lr_max / final_div_factor;
    if (step <= sp) return sp == 0 ? lr_max : lr0 + (lr_max - lr0) * double(step) / double(sp);
    const double u = double(step - sp) / double(total_steps - 1 - sp);
    return lrf + (lr_max - lrf) * 0.5 * (1.0 + std::cos(M_PI * u));
  }
};

}  // namespace duodepth::nn
