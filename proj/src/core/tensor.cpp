#include "s2st/core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>

namespace s2st {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (shape.size() > 2) throw std::invalid_argument("tensors are limited to rank 2");
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("use of undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({}, {value}, requires_grad));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
  return Tensor(new_node({rows, cols}, std::move(data), requires_grad));
}

std::uint64_t Tensor::id() const { return checked(node_).id; }
const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::size() const { return checked(node_).data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

std::span<const double> Tensor::data() const { return checked(node_).data; }
std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw std::out_of_range("tensor index out of range");
  return data()[r * cols() + c];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::has_grad() const { return checked(node_).grad.size() == size(); }
std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

namespace {
thread_local detail::DetachTape* detach_tape = nullptr;
}

void detail::set_detach_tape(DetachTape* tape) { detach_tape = tape; }

Tensor Tensor::detach() const {
  Tensor out = clone(false);
  if (detach_tape == nullptr) return out;
  auto& tape = *detach_tape;
  if (!tape.replay) {
    tape.values.emplace_back(out.data().begin(), out.data().end());
    return out;
  }
  if (tape.cursor >= tape.values.size() || tape.values[tape.cursor].size() != out.size()) {
    throw std::logic_error("detach: call sequence differs from the recorded one");
  }
  std::copy(tape.values[tape.cursor].begin(), tape.values[tape.cursor].end(), out.mutable_data().begin());
  ++tape.cursor;
  return out;
}

Tensor Tensor::clone(bool requires_grad) const {
  const auto& n = checked(node_);
  return Tensor(new_node(n.shape, n.data, requires_grad));
}

const char* Tensor::op_name() const { return checked(node_).op; }

}  // namespace s2st
