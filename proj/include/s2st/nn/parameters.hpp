#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "s2st/core/random.hpp"
#include "s2st/core/serialize.hpp"
#include "s2st/core/tensor.hpp"

namespace s2st::nn {

// Insertion-ordered name -> parameter registry. Holding the same Tensor under
// two registries shares storage.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const { return items_.size(); }
  std::size_t num_scalars() const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  // Handles only; renaming or reseating entries is not supported.
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;

  // Entries whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const;

  void zero_grad();
  NamedTensors to_named() const;
  // Copies values from `named` into same-named entries; every entry must be present.
  void load(const NamedTensors& named);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Training/eval switch passed through forward passes.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  ForwardContext with_dropout(double p) const {
    ForwardContext c = *this;
    c.dropout = p;
    return c;
  }
};

inline ForwardContext eval_context() { return {}; }

// Inverted dropout; identity outside training or when p == 0.
Tensor dropout(const Tensor& x, const ForwardContext& ctx);

Tensor uniform_init(Shape shape, double bound, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

// Fixed sinusoidal position table (len x dim).
Tensor sinusoid_positions(std::size_t len, std::size_t dim);

}  // namespace s2st::nn
