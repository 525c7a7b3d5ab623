#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adsnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Thrown on shape/rank disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf, failed factorizations and similar numeric breakdowns.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed serialized data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class Tape;

/// Dense row-major tensor handle.
///
/// Copies share storage (like a reference-counted buffer); use clone() for a
/// deep copy. A tensor that is recorded on a Tape carries the tape pointer and
/// its node id; every op that sees such an input records its output on the
/// same tape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return size() == 0; }

  std::span<const T> data() const { return data_ ? std::span<const T>(*data_) : std::span<const T>{}; }
  std::span<T> mutable_data() { return data_ ? std::span<T>(*data_) : std::span<T>{}; }
  const T* ptr() const { return data_->data(); }

  T operator[](std::size_t i) const { return (*data_)[i]; }
  T item() const;

  // Deep copy, detached from any tape.
  Tensor clone() const;
  // Shares storage but drops the tape link.
  Tensor detach() const;
  // Shares storage under a new shape with the same element count (no tape link).
  Tensor view(Shape shape) const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::int64_t node() const { return node_; }

  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  std::int64_t node_ = -1;

  friend class Tape<T>;
};

/// Gradients produced by Tape::backward, keyed by node id.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& operator[](const Tensor<T>& watched) const;
  bool contains(const Tensor<T>& watched) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<std::int64_t, Tensor<T>> grads_;
  friend class Tape<T>;
};

/// Append-only record of differentiable operations.
///
/// Nodes are appended as ops execute, so each node's inputs always precede it
/// and reverse iteration is a valid topological order. A tape is confined to
/// one thread.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into inputs via
  // Tape::grad_of().
  using BackwardFn = std::function<void(std::span<const T>, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf. The returned handle shares storage with `value`.
  Tensor<T> watch(const Tensor<T>& value);

  // Used by ops: links `output` as a new node whose gradient is pushed to its
  // inputs by `fn`.
  Tensor<T> record(Tensor<T> output, std::string_view kind, BackwardFn fn);

  Gradients<T> backward(const Tensor<T>& loss);

  // Gradient accumulator for node `id`, zero-initialised on first access.
  std::span<T> grad_of(std::int64_t id);

  std::size_t size() const { return nodes_.size(); }
  std::string_view kind(std::size_t id) const { return nodes_.at(id).kind; }
  void clear();

 private:
  struct Node {
    std::string_view kind;
    std::size_t size = 0;
    Shape shape;
    BackwardFn backward;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

// Returns the tape shared by the on-tape inputs, or nullptr when none is
// recorded. Mixing two different tapes is an error.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace adsnn
