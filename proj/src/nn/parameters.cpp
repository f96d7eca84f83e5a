#include "s2st/nn/parameters.hpp"

#include <cmath>
#include <stdexcept>

#include "s2st/core/ops.hpp"

namespace s2st::nn {

void ParameterSet::add(std::string name, Tensor tensor) {
  if (!tensor.defined()) throw std::invalid_argument("parameter '" + name + "' is undefined");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return items_[it->second].second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return items_[it->second].second;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& [name, _] : items_) out.push_back(name);
  return out;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [_, t] : items_) out.push_back(t);
  return out;
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    if (name.rfind(prefix, 0) == 0) out.add(name, t);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

NamedTensors ParameterSet::to_named() const { return items_; }

void ParameterSet::load(const NamedTensors& named) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : named) by_name[name] = &t;
  for (auto& [name, t] : items_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter '" + name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != t.shape()) {
      throw std::runtime_error("shape mismatch for '" + name + "': " + shape_str(src.shape()) + " vs " +
                               shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

Tensor dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout in training mode needs an rng");
  if (ctx.dropout >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  const double keep = 1.0 - ctx.dropout;
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = ctx.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return ops::mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor sinusoid_positions(std::size_t len, std::size_t dim) {
  std::vector<double> data(len * dim);
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * rate;
      data[p * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::matrix(len, dim, std::move(data));
}

}  // namespace s2st::nn
