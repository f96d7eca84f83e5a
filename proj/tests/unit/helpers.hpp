#pragma once

#include <vector>

#include "s2st/core/ops.hpp"
#include "s2st/core/random.hpp"
#include "s2st/core/tensor.hpp"

namespace s2st::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal(0.0, scale);
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// sum(out * R) with a fixed random R, so every output entry carries a distinct weight.
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  auto weights = random_tensor(out.shape(), rng, false);
  return ops::sum(ops::mul(out, weights));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace s2st::testing
