#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s2st {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the autodiff DAG. Leaves have no backward rule; interior nodes
// own a closure that pushes their gradient into their parents.
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

std::uint64_t next_node_id();

// While installed, detach() records each output, or in replay mode returns the
// recorded values in call order. grad_check uses it so finite differences see
// detached values as constants, as backprop does.
struct DetachTape {
  bool replay = false;
  std::size_t cursor = 0;
  std::vector<std::vector<double>> values;
};
void set_detach_tape(DetachTape* tape);

}  // namespace detail

// Dense row-major tensor of doubles (rank 0, 1 or 2) with reverse-mode autodiff.
// Copies share storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::uint64_t id() const;
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Matrix view: rank-1 tensors are a single row, scalars are 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access; only for optimizers, loaders and test harnesses.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  // Releases the grad buffer entirely.
  void clear_grad();

  // Copy of data with no autodiff history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;
  const char* op_name() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by ops and the autodiff engine.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

}  // namespace s2st
