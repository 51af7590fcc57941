#pragma once

// Image-shaped differentiable operations on NCHW tensors.

#include <cstddef>

#include "mammogan/tensor.hpp"

namespace mammogan::ad {

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;         // zero padding on every spatial border
  std::size_t output_padding = 0;  // transposed conv only: extra rows/cols at the far edge
};

// Padding that preserves spatial size for odd kernels at stride 1.
constexpr std::size_t same_padding(std::size_t kernel) { return (kernel - 1) / 2; }

// floor((in + 2p - k) / s) + 1; throws ShapeError when non-positive.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvOptions& opt);
// (in - 1) * s + k - 2p + output_padding; throws ShapeError when non-positive.
std::size_t conv_transpose_output_size(std::size_t in, std::size_t kernel, const ConvOptions& opt);

// x: [N, C, H, W], w: [O, C, kh, kw] -> [N, O, Ho, Wo]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvOptions& opt);

// Adjoint of conv2d with respect to its input.
// x: [N, C, H, W], w: [C, O, kh, kw] -> [N, O, Ho, Wo]; overlapping kernel
// footprints are summed, which is what produces checkerboard patterns when
// the kernel size is not a multiple of the stride.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const ConvOptions& opt);

// x: [N, C, H, W] plus b: [C] broadcast over N, H, W.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b);

// Per-sample, per-channel normalization over H, W, then gain[c] * xhat + bias[c].
// Throws NumericError when H*W == 1 and eps == 0.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Nearest-neighbour upsampling by an integer factor on both spatial axes.
template <typename T>
Tensor<T> upsample_nearest2d(const Tensor<T>& x, std::size_t factor);

}  // namespace mammogan::ad
