#include "s2st/core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace s2st {

Graph Graph::trace(const Tensor& root) {
  if (!root.defined()) throw std::invalid_argument("cannot trace an undefined tensor");
  Graph g;
  g.root_ = root;
  // Iterative DFS; state 1 = on stack, 2 = finished. Meeting a node in state 1
  // again means the parent links form a cycle.
  std::unordered_map<const detail::Node*, int> state;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  state[root.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<detail::Node> parent = node->parents[next++];
      auto it = state.find(parent.get());
      if (it == state.end()) {
        state[parent.get()] = 1;
        stack.emplace_back(std::move(parent), 0);
      } else if (it->second == 1) {
        throw std::logic_error("cycle detected in autodiff graph");
      }
    } else {
      state[node.get()] = 2;
      g.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

std::span<const double> GradientMap::at(const Tensor& t) const {
  auto it = leaves_.find(t.id());
  if (it == leaves_.end()) throw std::out_of_range("tensor received no gradient");
  return it->second.grad();
}

GradientMap backward(const Graph& graph, const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (graph.nodes().empty() || graph.nodes().back() != loss.node()) {
    throw std::invalid_argument("graph was not recorded from this loss");
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  auto& nodes = graph.nodes();
  nodes.back()->ensure_grad()[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.requires_grad) continue;
    if (node.backward) {
      if (node.grad.size() == node.data.size()) node.backward(node);
      node.grad.clear();
      node.grad.shrink_to_fit();
    } else if (node.grad.size() == node.data.size()) {
      result.insert(Tensor(*it));
    }
  }
  return result;
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0) {
    throw std::invalid_argument("backward requires a scalar loss");
  }
  return backward(Graph::trace(loss), loss);
}

double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-8 && options.epsilon <= 1e-4)) {
    throw std::invalid_argument("grad_check epsilon must lie in [1e-8, 1e-4]");
  }
  struct TapeGuard {
    explicit TapeGuard(detail::DetachTape* t) { detail::set_detach_tape(t); }
    ~TapeGuard() { detail::set_detach_tape(nullptr); }
  };
  detail::DetachTape tape;
  for (auto& p : params) p.clear_grad();
  Tensor loss;
  {
    TapeGuard guard(&tape);
    loss = fn();
  }
  tape.replay = true;
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) analytic.emplace_back(p.grad().begin(), p.grad().end());
    else analytic.emplace_back(p.size(), 0.0);
    p.clear_grad();
  }

  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) entries.emplace_back(i, j);
  if (options.max_entries != 0 && entries.size() > options.max_entries) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(options.max_entries);
    std::sort(entries.begin(), entries.end());
  }

  const double eps = options.epsilon;
  double worst = 0.0;
  for (auto [i, j] : entries) {
    auto data = params[i].mutable_data();
    const double saved = data[j];
    auto eval = [&](double v) {
      data[j] = v;
      double out;
      try {
        tape.cursor = 0;
        TapeGuard guard(&tape);
        out = fn().item();
        if (tape.cursor != tape.values.size()) throw std::logic_error("detach called fewer times than recorded");
      } catch (const std::exception& e) {
        data[j] = saved;
        throw std::runtime_error("grad_check: evaluation failed at parameter " + std::to_string(i) + " entry " +
                                 std::to_string(j) + ": " + e.what());
      }
      if (!std::isfinite(out)) {
        data[j] = saved;
        throw std::runtime_error("grad_check: non-finite loss at parameter " + std::to_string(i) + " entry " +
                                 std::to_string(j));
      }
      return out;
    };
    const double plus = eval(saved + eps);
    const double minus = eval(saved - eps);
    data[j] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[i][j];
    worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(a)));
  }
  return worst;
}

}  // namespace s2st
