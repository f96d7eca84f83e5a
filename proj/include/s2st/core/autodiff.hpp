#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "s2st/core/tensor.hpp"

namespace s2st {

// Topologically ordered record of the operations that produced a tensor.
// Inputs always precede the operations that consume them.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }
  const Tensor& root() const { return root_; }

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Leaf tensors that received gradient during a backward pass, keyed by id.
class GradientMap {
 public:
  void insert(const Tensor& leaf) { leaves_.emplace(leaf.id(), leaf); }
  bool contains(const Tensor& t) const { return leaves_.count(t.id()) != 0; }
  std::span<const double> at(const Tensor& t) const;
  std::size_t size() const { return leaves_.size(); }
  const std::unordered_map<std::uint64_t, Tensor>& leaves() const { return leaves_; }

 private:
  std::unordered_map<std::uint64_t, Tensor> leaves_;
};

// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Interior gradients are released afterwards. Leaf grads add to whatever is
// already there; callers zero them between steps.
GradientMap backward(const Graph& graph, const Tensor& loss);
GradientMap backward(const Tensor& loss);

struct GradCheckOptions {
  double epsilon = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of at most this many.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

// Max over checked entries of |analytic - central difference| / max(1, |analytic|).
// detach() outputs are frozen at their unperturbed values, and fn must call
// detach() in the same order on every evaluation.
double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                  const GradCheckOptions& options = {});

}  // namespace s2st
