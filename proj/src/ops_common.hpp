#pragma once

#include <initializer_list>
#include <memory>
#include <vector>

#include "mammogan/tensor.hpp"

namespace mammogan::ad::detail {

// Returns a detached tensor when no input is attached; otherwise records the
// result on the inputs' common graph.
template <typename T>
Tensor<T> make_result(Shape shape, std::shared_ptr<const std::vector<T>> data,
                      std::initializer_list<std::reference_wrapper<const Tensor<T>>> inputs,
                      typename Graph<T>::Backward backward) {
  Graph<T>* graph = nullptr;
  for (const Tensor<T>& in : inputs) {
    if (!in.attached()) continue;
    if (!in.graph()->owns(in)) {
      throw std::logic_error("operation input refers to a stale or foreign graph");
    }
    if (graph != nullptr && graph != in.graph()) {
      throw std::logic_error("operation inputs are attached to different graphs");
    }
    graph = in.graph();
  }
  if (graph == nullptr) return Tensor<T>::from_storage(std::move(shape), std::move(data));
  return graph->record(std::move(shape), std::move(data), std::move(backward));
}

}  // namespace mammogan::ad::detail
