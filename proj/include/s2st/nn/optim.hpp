#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2st/nn/parameters.hpp"

namespace s2st::nn {

struct AdamConfig {
  double peak_lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 400;
  double clip_norm = 5.0;  // global gradient norm clip, 0 disables
};

// Linear warmup to peak_lr, then peak_lr * sqrt(warmup / step).
double inverse_sqrt_lr(const AdamConfig& config, std::uint64_t step);

// Adam over a ParameterSet. Moments are keyed by parameter name so they can
// be checkpointed next to the weights.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& params, AdamConfig config);

  // Applies one update using the current grads, then zeroes them. Returns the
  // learning rate used. Parameters without grad are left untouched.
  double step(ParameterSet& params);

  std::uint64_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return config_; }

  // "<name>.m" / "<name>.v" moment tensors plus a 1-element "__step" entry.
  NamedTensors state() const;
  void load_state(const NamedTensors& state);

 private:
  AdamConfig config_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace s2st::nn
