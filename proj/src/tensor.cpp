#include "adsnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace adsnn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(shape_size(shape_), fill)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(data))) {
  if (shape_size(shape_) != data_->size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_->size()) + " elements");
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_ ? std::make_shared<std::vector<T>>(*data_) : nullptr;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::view(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw DimensionError("cannot view " + shape_string(shape_) + " as " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data().begin(), data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const Tensor<T>& watched) const {
  auto it = grads_.find(watched.node());
  if (it == grads_.end()) throw std::out_of_range("tensor is not a watched leaf of this tape");
  return it->second;
}

template <typename T>
bool Gradients<T>::contains(const Tensor<T>& watched) const {
  return grads_.count(watched.node()) != 0;
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& value) {
  Tensor<T> out = value.detach();
  out.tape_ = this;
  out.node_ = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{"leaf", value.size(), value.shape(), {}, true});
  grads_.emplace_back();
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(Tensor<T> output, std::string_view kind, BackwardFn fn) {
  output.tape_ = this;
  output.node_ = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{kind, output.size(), output.shape(), std::move(fn), false});
  grads_.emplace_back();
  return output;
}

template <typename T>
std::span<T> Tape<T>::grad_of(std::int64_t id) {
  auto& g = grads_.at(static_cast<std::size_t>(id));
  if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].size, T{0});
  return g;
}

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss is not recorded on this tape");
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (auto& g : grads_) g.clear();
  const auto root = static_cast<std::size_t>(loss.node());
  grad_of(loss.node())[0] = T{1};
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.leaf || grads_[i].empty()) continue;
    std::vector<T> g = std::move(grads_[i]);
    grads_[i].clear();
    node.backward(g, *this);
  }
  Gradients<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf) continue;
    std::vector<T> g = std::move(grads_[i]);
    if (g.empty()) g.assign(nodes_[i].size, T{0});
    out.grads_.emplace(static_cast<std::int64_t>(i), Tensor<T>(nodes_[i].shape, std::move(g)));
  }
  return out;
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  grads_.clear();
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t || !t->on_tape()) continue;
    if (tape && tape != t->tape()) throw std::invalid_argument("operands are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

template class Tensor<float>;
template class Tensor<double>;
template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>* common_tape(std::initializer_list<const Tensor<float>*>);
template Tape<double>* common_tape(std::initializer_list<const Tensor<double>*>);

}  // namespace adsnn
