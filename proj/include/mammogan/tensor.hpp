#pragma once

// Minimal n-dimensional tensors with tape-based reverse-mode differentiation.
//
// A Tensor is an immutable value (shape + shared row-major storage). When any
// input of an operation is attached to a Graph, the result is recorded on that
// graph together with its backward rule. Parameters are the trainable leaves;
// Graph::backward returns one accumulated gradient per Parameter reached.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mammogan/errors.hpp"

namespace mammogan::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Graph;

template <typename T>
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);
  static Tensor from_storage(Shape shape, std::shared_ptr<const std::vector<T>> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_->size(); }
  std::span<const T> values() const { return {data_->data(), data_->size()}; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T item() const;

  bool attached() const { return graph_ != nullptr; }
  Graph<T>* graph() const { return graph_; }
  std::size_t node() const { return node_; }

  // Same values, no graph reference.
  Tensor detach() const;

  std::shared_ptr<const std::vector<T>> storage() const { return data_; }

 private:
  friend class Graph<T>;
  Tensor(Shape shape, std::shared_ptr<const std::vector<T>> data, Graph<T>* graph,
         std::size_t node, std::uint64_t generation);

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Graph<T>* graph_ = nullptr;
  std::size_t node_ = 0;
  std::uint64_t generation_ = 0;
};

// Named trainable array. Values are mutated in place by optimizers; the graph
// snapshots them when a leaf is created.
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<T> values);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::span<const T> values() const { return values_; }
  std::span<T> mutable_values() { return values_; }
  std::size_t size() const { return values_.size(); }

  Tensor<T> tensor() const { return Tensor<T>(shape_, values_); }

 private:
  std::string name_;
  Shape shape_;
  std::vector<T> values_;
};

template <typename T>
class Gradients {
 public:
  bool contains(const Parameter<T>& p) const { return map_.count(&p) != 0; }
  const Tensor<T>& at(const Parameter<T>& p) const;
  std::size_t size() const { return map_.size(); }
  void insert(const Parameter<T>* p, Tensor<T> g) { map_.insert_or_assign(p, std::move(g)); }

  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

 private:
  std::unordered_map<const Parameter<T>*, Tensor<T>> map_;
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::span<const T>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf for a trainable parameter; repeated calls return the same node so
  // that shared parameters accumulate into a single gradient.
  Tensor<T> leaf(const Parameter<T>& p);

  // Appends an operation node. Ops call this through detail::make_result,
  // which verifies all attached operands belong to this graph.
  Tensor<T> record(Shape shape, std::shared_ptr<const std::vector<T>> data, Backward backward);

  // Gradient buffer for an attached tensor, or an empty span for constants.
  // Only valid inside backward rules.
  std::span<T> grad(const Tensor<T>& t);

  Gradients<T> backward(const Tensor<T>& loss);

  void reset();
  std::size_t node_count() const { return nodes_.size(); }
  bool owns(const Tensor<T>& t) const { return t.graph_ == this && t.generation_ == generation_; }

 private:
  struct Node {
    Shape shape;
    Backward backward;
    const Parameter<T>* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::unordered_map<const Parameter<T>*, std::size_t> leaves_;
  std::uint64_t generation_ = 1;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept identical shapes, or a second
// operand whose shape equals a suffix of the first after dropping leading
// singleton dims (e.g. [1,C] with [N,C]).

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);

// pads: one (before, after) pair per dimension.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<std::size_t, std::size_t>>& pads,
              T value = T(0));
// Half-open [begin, end) per dimension.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<std::size_t>& begin,
                const std::vector<std::size_t>& end);

template <typename T> Tensor<T> reduce_sum(const Tensor<T>& x);
template <typename T> Tensor<T> reduce_mean(const Tensor<T>& x);

template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Elementwise x^p. Non-integer p requires x > 0.
template <typename T> Tensor<T> power(const Tensor<T>& x, T p);

// Shape change without data movement; numel must match.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// mean((x - target)^2) for a scalar target.
template <typename T> Tensor<T> mse_to(const Tensor<T>& x, T target);

}  // namespace mammogan::ad
