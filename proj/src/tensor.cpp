#include "mammogan/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ops_common.hpp"

namespace mammogan::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::make_shared<const std::vector<T>>(std::move(values))) {
  if (numel(shape_) != data_->size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_->size()) + " values");
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::shared_ptr<const std::vector<T>> data, Graph<T>* graph,
                  std::size_t node, std::uint64_t generation)
    : shape_(std::move(shape)), data_(std::move(data)), graph_(graph), node_(node),
      generation_(generation) {
  if (numel(shape_) != data_->size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_->size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::from_storage(Shape shape, std::shared_ptr<const std::vector<T>> data) {
  return Tensor(std::move(shape), std::move(data), nullptr, 0, 0);
}

template <typename T>
T Tensor<T>::item() const {
  if (data_->size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  }
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape_, data_, nullptr, 0, 0);
}

// ---------------------------------------------------------------------------
// Parameter / Gradients

template <typename T>
Parameter<T>::Parameter(std::string name, Shape shape, std::vector<T> values)
    : name_(std::move(name)), shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != values_.size()) {
    throw ShapeError("parameter '" + name_ + "': shape " + to_string(shape_) +
                     " does not match " + std::to_string(values_.size()) + " values");
  }
}

template <typename T>
const Tensor<T>& Gradients<T>::at(const Parameter<T>& p) const {
  auto it = map_.find(&p);
  if (it == map_.end()) throw std::out_of_range("no gradient for parameter '" + p.name() + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Tensor<T> Graph<T>::leaf(const Parameter<T>& p) {
  if (backward_done_) throw std::logic_error("graph: leaf() after backward; call reset()");
  auto data = std::make_shared<const std::vector<T>>(p.values().begin(), p.values().end());
  auto it = leaves_.find(&p);
  if (it != leaves_.end()) {
    return Tensor<T>(p.shape(), std::move(data), this, it->second, generation_);
  }
  nodes_.push_back(Node{p.shape(), nullptr, &p});
  const std::size_t id = nodes_.size() - 1;
  leaves_.emplace(&p, id);
  return Tensor<T>(p.shape(), std::move(data), this, id, generation_);
}

template <typename T>
Tensor<T> Graph<T>::record(Shape shape, std::shared_ptr<const std::vector<T>> data,
                           Backward backward) {
  if (backward_done_) throw std::logic_error("graph: record() after backward; call reset()");
  nodes_.push_back(Node{shape, std::move(backward), nullptr});
  return Tensor<T>(std::move(shape), std::move(data), this, nodes_.size() - 1, generation_);
}

template <typename T>
std::span<T> Graph<T>::grad(const Tensor<T>& t) {
  if (!t.attached()) return {};
  if (!owns(t)) throw std::logic_error("graph: tensor belongs to another graph or a stale tape");
  auto& g = grads_.at(t.node());
  if (g.empty()) g.assign(numel(nodes_[t.node()].shape), T(0));
  return {g.data(), g.size()};
}

template <typename T>
Gradients<T> Graph<T>::backward(const Tensor<T>& loss) {
  if (backward_done_) throw std::logic_error("graph: backward called twice without reset()");
  if (!owns(loss)) throw std::logic_error("backward: loss is not attached to this graph");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  grads_[loss.node()].assign(1, T(1));

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (grads_[i].empty() || node.param != nullptr) continue;
    // Copy out: the rule may allocate other buffers, and this one is released
    // afterwards since intermediates are not needed past this point.
    std::vector<T> g = std::move(grads_[i]);
    grads_[i].clear();
    if (node.backward) node.backward(*this, std::span<const T>(g));
    node.backward = nullptr;
  }

  Gradients<T> out;
  for (const auto& [param, id] : leaves_) {
    if (grads_[id].empty()) continue;
    out.insert(param, Tensor<T>(nodes_[id].shape, std::move(grads_[id])));
  }
  return out;
}

template <typename T>
void Graph<T>::reset() {
  nodes_.clear();
  grads_.clear();
  leaves_.clear();
  ++generation_;
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Elementwise helpers

namespace {

template <typename T>
struct Broadcast {
  std::size_t inner;  // size of the smaller operand
  bool b_smaller;
};

template <typename T>
Broadcast<T> broadcast_check(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return {a.size(), true};
  auto strip = [](const Shape& s) {
    std::size_t k = 0;
    while (k < s.size() && s[k] == 1) ++k;
    return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
  };
  auto is_suffix = [&](const Shape& big, const Shape& small) {
    const Shape s = strip(small);
    if (s.size() > big.size()) return false;
    return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
  };
  if (b.size() <= a.size() && is_suffix(a.shape(), b.shape())) return {b.size(), true};
  if (a.size() < b.size() && is_suffix(b.shape(), a.shape())) return {a.size(), false};
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()));
}

enum class BinOp { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(BinOp op, const char* name, const Tensor<T>& a, const Tensor<T>& b) {
  const auto bc = broadcast_check(name, a, b);
  const Tensor<T>& big = bc.b_smaller ? a : b;
  const std::size_t n = big.size();
  const std::size_t inner = bc.inner;
  auto out = std::make_shared<std::vector<T>>(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = bc.b_smaller ? av[i] : av[i % inner];
    const T y = bc.b_smaller ? bv[i % inner] : bv[i];
    switch (op) {
      case BinOp::Add: (*out)[i] = x + y; break;
      case BinOp::Sub: (*out)[i] = x - y; break;
      case BinOp::Mul: (*out)[i] = x * y; break;
    }
  }
  const bool b_smaller = bc.b_smaller;
  return detail::make_result<T>(
      big.shape(), std::move(out), {a, b},
      [a, b, op, b_smaller, inner](Graph<T>& g, std::span<const T> go) {
        auto ga = g.grad(a);
        auto gb = g.grad(b);
        auto accumulate = [&](std::span<T> target, bool is_small, auto&& coeff) {
          if (target.empty()) return;
          if (!is_small) {
            for (std::size_t i = 0; i < go.size(); ++i) target[i] += go[i] * coeff(i);
          } else {
            for (std::size_t i = 0; i < go.size(); ++i) target[i % inner] += go[i] * coeff(i);
          }
        };
        auto av = a.values();
        auto bv = b.values();
        auto a_at = [&](std::size_t i) { return b_smaller ? av[i] : av[i % inner]; };
        auto b_at = [&](std::size_t i) { return b_smaller ? bv[i % inner] : bv[i]; };
        switch (op) {
          case BinOp::Add:
            accumulate(ga, !b_smaller, [](std::size_t) { return T(1); });
            accumulate(gb, b_smaller, [](std::size_t) { return T(1); });
            break;
          case BinOp::Sub:
            accumulate(ga, !b_smaller, [](std::size_t) { return T(1); });
            accumulate(gb, b_smaller, [](std::size_t) { return T(-1); });
            break;
          case BinOp::Mul:
            accumulate(ga, !b_smaller, b_at);
            accumulate(gb, b_smaller, a_at);
            break;
        }
      });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F&& f, D&& dfdx) {
  auto xv = x.values();
  auto out = std::make_shared<std::vector<T>>(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) (*out)[i] = f(xv[i]);
  std::shared_ptr<const std::vector<T>> result = out;
  return detail::make_result<T>(
      x.shape(), result, {x},
      [x, result, dfdx](Graph<T>& g, std::span<const T> go) {
        auto gx = g.grad(x);
        auto xv = x.values();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dfdx(xv[i], (*result)[i]);
      });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinOp::Add, "add", a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinOp::Sub, "sub", a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinOp::Mul, "mul", a, b);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  auto out = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m * n));
  Eigen::Map<Mat>(out->data(), m, n).noalias() =
      Eigen::Map<const Mat>(a.values().data(), m, k) * Eigen::Map<const Mat>(b.values().data(), k, n);
  return detail::make_result<T>(
      Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b},
      [a, b, m, k, n](Graph<T>& g, std::span<const T> go) {
        Eigen::Map<const Mat> G(go.data(), m, n);
        if (auto ga = g.grad(a); !ga.empty()) {
          Eigen::Map<Mat>(ga.data(), m, k).noalias() +=
              G * Eigen::Map<const Mat>(b.values().data(), k, n).transpose();
        }
        if (auto gb = g.grad(b); !gb.empty()) {
          Eigen::Map<Mat>(gb.data(), k, n).noalias() +=
              Eigen::Map<const Mat>(a.values().data(), m, k).transpose() * G;
        }
      });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Calls f(src_flat, dst_flat) for every element of the region `extent`
// located at offset `src_off` in src and `dst_off` in dst.
template <typename F>
void for_each_region(const Shape& extent, const std::vector<std::size_t>& src_strides,
                     const std::vector<std::size_t>& src_off,
                     const std::vector<std::size_t>& dst_strides,
                     const std::vector<std::size_t>& dst_off, F&& f) {
  const std::size_t rank = extent.size();
  if (numel(extent) == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  while (true) {
    std::size_t s = 0, d = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      s += (idx[i] + src_off[i]) * src_strides[i];
      d += (idx[i] + dst_off[i]) * dst_strides[i];
    }
    f(s, d);
    std::size_t i = rank;
    while (i > 0) {
      --i;
      if (++idx[i] < extent[i]) break;
      idx[i] = 0;
      if (i == 0) return;
    }
    if (rank == 0) return;
  }
}

}  // namespace

template <typename T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<std::size_t, std::size_t>>& pads,
              T value) {
  if (pads.size() != x.rank()) {
    throw ShapeError("pad: " + std::to_string(pads.size()) + " pad pairs for tensor of shape " +
                     to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  std::vector<std::size_t> off(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) {
    out_shape[i] += pads[i].first + pads[i].second;
    off[i] = pads[i].first;
  }
  auto out = std::make_shared<std::vector<T>>(numel(out_shape), value);
  const auto xs = strides_of(x.shape());
  const auto os = strides_of(out_shape);
  const std::vector<std::size_t> zero(x.rank(), 0);
  auto xv = x.values();
  for_each_region(x.shape(), xs, zero, os, off, [&](std::size_t s, std::size_t d) { (*out)[d] = xv[s]; });
  return detail::make_result<T>(out_shape, std::move(out), {x},
                                [x, xs, os, off, zero](Graph<T>& g, std::span<const T> go) {
                                  auto gx = g.grad(x);
                                  for_each_region(x.shape(), xs, zero, os, off,
                                                  [&](std::size_t s, std::size_t d) { gx[s] += go[d]; });
                                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<std::size_t>& begin,
                const std::vector<std::size_t>& end) {
  if (begin.size() != x.rank() || end.size() != x.rank()) {
    throw ShapeError("slice: bounds rank does not match tensor of shape " + to_string(x.shape()));
  }
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (begin[i] > end[i] || end[i] > x.dim(i)) {
      throw ShapeError("slice: bounds out of range for shape " + to_string(x.shape()));
    }
    out_shape[i] = end[i] - begin[i];
  }
  auto out = std::make_shared<std::vector<T>>(numel(out_shape));
  const auto xs = strides_of(x.shape());
  const auto os = strides_of(out_shape);
  const std::vector<std::size_t> zero(x.rank(), 0);
  auto xv = x.values();
  for_each_region(out_shape, xs, begin, os, zero, [&](std::size_t s, std::size_t d) { (*out)[d] = xv[s]; });
  return detail::make_result<T>(out_shape, std::move(out), {x},
                                [x, xs, os, begin, zero, out_shape](Graph<T>& g, std::span<const T> go) {
                                  auto gx = g.grad(x);
                                  for_each_region(out_shape, xs, begin, os, zero,
                                                  [&](std::size_t s, std::size_t d) { gx[s] += go[d]; });
                                });
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  auto xv = x.values();
  T s = T(0);
  for (T v : xv) s += v;
  return detail::make_result<T>(Shape{}, std::make_shared<std::vector<T>>(1, s), {x},
                                [x](Graph<T>& g, std::span<const T> go) {
                                  auto gx = g.grad(x);
                                  for (auto& v : gx) v += go[0];
                                });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("reduce_mean: empty tensor");
  auto xv = x.values();
  T s = T(0);
  for (T v : xv) s += v;
  const T inv = T(1) / static_cast<T>(xv.size());
  return detail::make_result<T>(Shape{}, std::make_shared<std::vector<T>>(1, s * inv), {x},
                                [x, inv](Graph<T>& g, std::span<const T> go) {
                                  auto gx = g.grad(x);
                                  for (auto& v : gx) v += go[0] * inv;
                                });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::abs(v); },
               [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
               [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> power(const Tensor<T>& x, T p) {
  if (std::floor(p) != p) {
    for (T v : x.values()) {
      if (!(v > T(0))) throw NumericError("power: non-integer exponent requires positive base");
    }
  }
  return unary(x, [p](T v) { return std::pow(v, p); },
               [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return detail::make_result<T>(std::move(shape), x.storage(), {x},
                                [x](Graph<T>& g, std::span<const T> go) {
                                  auto gx = g.grad(x);
                                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                                });
}

template <typename T>
Tensor<T> mse_to(const Tensor<T>& x, T target) {
  return reduce_mean(square(add_scalar(x, -target)));
}

#define MAMMOGAN_INSTANTIATE(T)                                                           \
  template class Tensor<T>;                                                               \
  template class Parameter<T>;                                                            \
  template class Gradients<T>;                                                            \
  template class Graph<T>;                                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> pad(const Tensor<T>&,                                                \
                         const std::vector<std::pair<std::size_t, std::size_t>>&, T);     \
  template Tensor<T> slice(const Tensor<T>&, const std::vector<std::size_t>&,             \
                           const std::vector<std::size_t>&);                              \
  template Tensor<T> reduce_sum(const Tensor<T>&);                                        \
  template Tensor<T> reduce_mean(const Tensor<T>&);                                       \
  template Tensor<T> abs(const Tensor<T>&);                                               \
  template Tensor<T> square(const Tensor<T>&);                                            \
  template Tensor<T> tanh(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                           \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                     \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> power(const Tensor<T>&, T);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> mse_to(const Tensor<T>&, T);

MAMMOGAN_INSTANTIATE(float)
MAMMOGAN_INSTANTIATE(double)

}  // namespace mammogan::ad
