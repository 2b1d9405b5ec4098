#pragma once

// Dense float64 arrays with define-by-run reverse-mode differentiation.
//
// Every differentiable operation takes the Tape it records onto as its first
// argument. A Tape is rebuilt for each forward pass; backward() walks it in
// reverse, accumulating into the grad buffer of every array that requires one.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nexus {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized like value iff requires_grad
  bool requires_grad = false;
  std::uint64_t id = 0;
};
}  // namespace detail

class DiffArray {
 public:
  DiffArray() = default;

  static DiffArray zeros(Shape shape, bool requires_grad = false);
  static DiffArray full(Shape shape, double fill, bool requires_grad = false);
  static DiffArray from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static DiffArray scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  // Handle semantics: grads are writable through any copy of the handle.
  std::span<double> mutable_grad() const { return node_->grad; }
  void zero_grad();

  std::uint64_t node_id() const { return node_->id; }

  /// Deep copy of values (and grad flag, with a fresh zeroed grad).
  DiffArray clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit DiffArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
};

class Tape {
 public:
  struct Entry {
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::function<void()> backward;
  };

  /// With recording disabled, operations compute values only.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  /// Allocates the output array of an operation over `inputs`; it requires a
  /// grad iff recording and any input does.
  DiffArray make_output(Shape shape, std::initializer_list<const DiffArray*> inputs);

  void record(std::initializer_list<const DiffArray*> inputs, const DiffArray& output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates through every recorded
  /// operation whose output is reachable from `loss`.
  void backward(const DiffArray& loss);

 private:
  bool recording_;
  std::vector<Entry> entries_;
};

enum class ConvMode { kFull, kDepthwise };

// Linear algebra
DiffArray matmul(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray pointwise_conv(Tape& tape, const DiffArray& x, const DiffArray& w);
DiffArray conv1d(Tape& tape, const DiffArray& x, const DiffArray& kernel, ConvMode mode);

// Elementwise
DiffArray add(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray sub(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray mul(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray scale(Tape& tape, const DiffArray& x, double factor);
DiffArray add_bias(Tape& tape, const DiffArray& x, const DiffArray& bias);
DiffArray scale_shift(Tape& tape, const DiffArray& x, const DiffArray& gamma, const DiffArray& beta);
DiffArray broadcast_mul(Tape& tape, const DiffArray& x, const DiffArray& w);
DiffArray sigmoid(Tape& tape, const DiffArray& x);
DiffArray relu(Tape& tape, const DiffArray& x);

// Axis operations
DiffArray softmax(Tape& tape, const DiffArray& x, std::size_t axis);
DiffArray layer_norm(Tape& tape, const DiffArray& x, std::size_t axis, double eps = 1e-5);
DiffArray global_pool(Tape& tape, const DiffArray& x, std::vector<std::size_t> axes);
DiffArray sum_axis(Tape& tape, const DiffArray& x, std::size_t axis);
DiffArray select(Tape& tape, const DiffArray& x, std::size_t axis, std::size_t index);
DiffArray reshape(Tape& tape, const DiffArray& x, Shape shape);
DiffArray unfold(Tape& tape, const DiffArray& x, std::size_t patch, std::size_t stride);

DiffArray dropout(Tape& tape, const DiffArray& x, double rate, bool training, std::mt19937_64& rng);

// Reductions to scalars
DiffArray mse(Tape& tape, const DiffArray& prediction, const DiffArray& target);
DiffArray sum_squares(Tape& tape, const DiffArray& x);
DiffArray sum_all(Tape& tape, const DiffArray& x);

}  // namespace nexus
