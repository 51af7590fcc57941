#pragma once

#include <cstdint>
#include <vector>

#include "mammogan/tensor.hpp"

namespace mammogan::ad {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates, one pair per parameter in registration order.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Adam with bias correction. Parameters absent from the gradient map are
// updated with a zero gradient (their moments still decay).
template <typename T>
class Adam {
 public:
  Adam(AdamConfig config, std::vector<Parameter<T>*> params);

  // Throws NumericError naming the parameter if any gradient is non-finite;
  // nothing is modified in that case.
  void step(const Gradients<T>& grads);

  const AdamConfig& config() const { return config_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }
  const AdamState<T>& state() const { return state_; }
  void set_state(AdamState<T> state);

 private:
  AdamConfig config_;
  std::vector<Parameter<T>*> params_;
  AdamState<T> state_;
};

}  // namespace mammogan::ad
