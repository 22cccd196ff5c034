#pragma once

#include <vector>

#include "duodepth/nn/ops.hpp"

namespace duodepth::train {

using nn::Var;

struct LossTerm {
  int iteration = 0;
  double weight = 0;
  double value = 0;  // unweighted per-term L1
};

struct LossBreakdown {
  std::vector<LossTerm> stereo_terms;
  std::vector<LossTerm> mono_terms;
  double total = 0;
};

// Weighted L1 over the stereo histories: the first n1 entries are the
// stereo-phase iterations, the remaining n2 the dual-round outputs; term i
// carries gamma^(n1+n2-i). Every L1 is a mean over valid pixels.
template <class S>
Var stereo_loss(nn::Tape<S>& t, const std::vector<Var>& history, const Grid<S>& gt,
                const Grid<S>& valid, double gamma, int n1, int n2,
                LossBreakdown* breakdown = nullptr) {
  if (int(history.size()) != n1 + n2)
    throw ContractViolation("stereo_loss: history length must be n1 + n2");
  Var total = t.constant(Grid<S>(1, 1, 1));
  for (int i = 0; i < n1 + n2; ++i) {
    const double w = std::pow(gamma, double(n1 + n2 - i));
    Var term = nn::masked_mean_abs(t, history[std::size_t(i)], gt, valid);
    if (breakdown)
      breakdown->stereo_terms.push_back(LossTerm{i, w, double(t.val(term).v[0])});
    total = nn::add(t, total, nn::scale(t, term, S(w)));
  }
  return total;
}

// Monocular-branch terms run over the n2 SGA outputs with the same exponents
// as the dual-phase stereo terms (weights gamma^(n2-j) for output j).
template <class S>
Var mono_loss(nn::Tape<S>& t, const std::vector<Var>& history, const Grid<S>& gt,
              const Grid<S>& valid, double gamma, int n1, int n2,
              LossBreakdown* breakdown = nullptr) {
  if (int(history.size()) != n2) throw ContractViolation("mono_loss: history length must be n2");
  Var total = t.constant(Grid<S>(1, 1, 1));
  for (int j = 0; j < n2; ++j) {
    const int i = n1 + j;
    const double w = std::pow(gamma, double(n1 + n2 - i));
    Var term = nn::masked_mean_abs(t, history[std::size_t(j)], gt, valid);
    if (breakdown) breakdown->mono_terms.push_back(LossTerm{i, w, double(t.val(term).v[0])});
    total = nn::add(t, total, nn::scale(t, term, S(w)));
  }
  return total;
}

// Generic gamma-weighted history loss (realtime cascade and ablation arms
// whose history lengths differ from the n1/n2 split).
template <class S>
Var weighted_history_loss(nn::Tape<S>& t, const std::vector<Var>& history, const Grid<S>& gt,
                          const Grid<S>& valid, double gamma,
                          LossBreakdown* breakdown = nullptr) {
  const int n = int(history.size());
  if (n == 0) throw ContractViolation("weighted_history_loss: empty history");
  Var total = t.constant(Grid<S>(1, 1, 1));
  for (int i = 0; i < n; ++i) {
    const double w = std::pow(gamma, double(n - i));
    Var term = nn::masked_mean_abs(t, history[std::size_t(i)], gt, valid);
    if (breakdown)
      breakdown->stereo_terms.push_back(LossTerm{i, w, double(t.val(term).v[0])});
    total = nn::add(t, total, nn::scale(t, term, S(w)));
  }
  return total;
}

}  // namespace duodepth::train
