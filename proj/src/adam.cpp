#include "mammogan/adam.hpp"

#include <cmath>

namespace mammogan::ad {

template <typename T>
Adam<T>::Adam(AdamConfig config, std::vector<Parameter<T>*> params)
    : config_(config), params_(std::move(params)) {
  for (const auto* p : params_) {
    state_.m.emplace_back(p->size(), T(0));
    state_.v.emplace_back(p->size(), T(0));
  }
}

template <typename T>
void Adam<T>::set_state(AdamState<T> state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
    throw ShapeError("adam: state holds " + std::to_string(state.m.size()) +
                     " moment buffers for " + std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.m[i].size() != params_[i]->size() || state.v[i].size() != params_[i]->size()) {
      throw ShapeError("adam: moment buffer size mismatch for '" + params_[i]->name() + "'");
    }
  }
  state_ = std::move(state);
}

template <typename T>
void Adam<T>::step(const Gradients<T>& grads) {
  for (const auto* p : params_) {
    if (!grads.contains(*p)) continue;
    const auto& g = grads.at(*p);
    if (g.shape() != p->shape()) {
      throw ShapeError("adam: gradient shape " + to_string(g.shape()) + " for parameter '" +
                       p->name() + "' of shape " + to_string(p->shape()));
    }
    for (T v : g.values()) {
      if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient for '" + p->name() + "'");
    }
  }

  ++state_.step;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    auto values = p->mutable_values();
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    const bool has = grads.contains(*p);
    std::span<const T> g = has ? grads.at(*p).values() : std::span<const T>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= static_cast<T>(config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace mammogan::ad
