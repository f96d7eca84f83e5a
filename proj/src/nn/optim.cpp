#include "s2st/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace s2st::nn {

double inverse_sqrt_lr(const AdamConfig& config, std::uint64_t step) {
  if (step == 0) step = 1;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup_steps);
  if (config.warmup_steps == 0) return config.peak_lr;
  if (s <= w) return config.peak_lr * s / w;
  return config.peak_lr * std::sqrt(w / s);
}

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
  for (const auto& [name, t] : params.items()) {
    names_.push_back(name);
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

double Adam::step(ParameterSet& params) {
  if (params.size() != names_.size()) throw std::logic_error("Adam: parameter set changed since construction");
  ++step_;
  const double lr = inverse_sqrt_lr(config_, step_);

  double sq = 0.0;
  for (const auto& [_, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw std::overflow_error("Adam: non-finite gradient norm");
  const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  auto& items = params.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& [name, t] = items[i];
    if (name != names_[i]) throw std::logic_error("Adam: parameter order changed at '" + name + "'");
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
    t.clear_grad();
  }
  return lr;
}

NamedTensors Adam::state() const {
  NamedTensors out;
  out.reserve(2 * names_.size() + 1);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (m_[i].empty()) continue;
    out.emplace_back(names_[i] + ".m", Tensor::from({m_[i].size()}, m_[i]));
    out.emplace_back(names_[i] + ".v", Tensor::from({v_[i].size()}, v_[i]));
  }
  out.emplace_back("__step", Tensor::from({1}, {static_cast<double>(step_)}));
  return out;
}

void Adam::load_state(const NamedTensors& state) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : state) by_name[name] = &t;
  auto fetch = [&](const std::string& key, std::vector<double>& dst) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw std::runtime_error("optimizer state lacks '" + key + "'");
    const auto src = it->second->data();
    if (src.size() != dst.size()) throw std::runtime_error("optimizer state size mismatch for '" + key + "'");
    std::copy(src.begin(), src.end(), dst.begin());
  };
  for (std::size_t i = 0; i < names_.size(); ++i) {
    fetch(names_[i] + ".m", m_[i]);
    fetch(names_[i] + ".v", v_[i]);
  }
  auto it = by_name.find("__step");
  if (it == by_name.end()) throw std::runtime_error("optimizer state lacks step counter");
  step_ = static_cast<std::uint64_t>(it->second->data()[0]);
}

}  // namespace s2st::nn
