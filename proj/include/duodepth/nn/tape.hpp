#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "duodepth/core/grid.hpp"
#include "duodepth/nn/params.hpp"

namespace duodepth::nn {

// Reverse-mode autodiff over Grid<S> values. Nodes are appended in forward
// order; backward() replays them in reverse. Values are kept for the whole
// tape lifetime (one refinement pass / training step per tape).
using Var = int;

template <class S>
class Tape {
 public:
  struct Node {
    Grid<S> val;
    Grid<S> grad;  // allocated on first contribution
    bool needs_grad = false;
    std::function<void(Tape&, Var)> back;  // (tape, own id) -> push grads to inputs
    std::string param_name;                // set on parameter leaves
  };

  Var constant(Grid<S> g) { return push(std::move(g), false); }

  Var input(Grid<S> g) { return push(std::move(g), true); }

  Var param(ParamStore<S>& store, const std::string& name) {
    const Param<S>& p = store.at(name);
    Grid<S> g;
    g.h = 1;
    g.w = 1;
    g.c = int(p.count());
    g.v = p.value;
    const Var id = push(std::move(g), true);
    nodes_[std::size_t(id)].param_name = name;
    return id;
  }

  const Grid<S>& val(Var id) const { return nodes_[std::size_t(id)].val; }
  bool needs_grad(Var id) const { return nodes_[std::size_t(id)].needs_grad; }

  Grid<S>& grad(Var id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.size() == 0) n.grad = Grid<S>(n.val.h, n.val.w, n.val.c);
    return n.grad;
  }
  bool has_grad(Var id) const { return nodes_[std::size_t(id)].grad.size() != 0; }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates to every contributing node.
  void backward(Var root) {
    Node& r = nodes_[std::size_t(root)];
    if (r.val.size() != 1) throw ContractViolation("backward: root must be scalar");
    grad(root).v.setConstant(S(1));
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.back && n.grad.size() != 0 && n.needs_grad) n.back(*this, Var(i));
    }
  }

  // Adds parameter-leaf gradients into the store (call after backward()).
  void flush_param_grads(ParamStore<S>& store) {
    for (auto& n : nodes_) {
      if (n.param_name.empty() || n.grad.size() == 0) continue;
      store.at(n.param_name).grad += n.grad.v;
    }
  }

  Var push(Grid<S> val, bool needs, std::function<void(Tape&, Var)> back = nullptr) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(nodes_.size() - 1);
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace duodepth::nn
