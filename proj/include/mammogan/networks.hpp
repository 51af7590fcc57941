#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mammogan/layers.hpp"
#include "mammogan/tensor.hpp"

namespace mammogan::nn {

using ad::Shape;

enum class LayerKind {
  conv2d,
  transposed_conv2d,
  resize_conv2d,  // nearest upsample by `stride`, then a stride-1 conv
  instance_norm,
  activation,
  residual_block,  // x + IN(conv(relu(IN(conv(x))))) with same-padded kernels
};

enum class Activation { none, relu, leaky_relu, tanh };

struct LayerSpec {
  LayerKind kind = LayerKind::conv2d;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;
  std::size_t channels_in = 1;
  std::size_t channels_out = 1;
  bool bias = false;
  Activation activation = Activation::none;
  double slope = 0.2;  // leaky_relu only
};

std::string to_string(LayerKind kind);
std::string to_string(Activation act);

// Throws ShapeError on kernel/stride < 1 or zero channels.
void validate(const LayerSpec& spec);

enum class Upsampler { transposed, resize };

// Scaled-down CycleGAN-style generator: 7x7 stem, strided downsampling convs,
// residual blocks, matching upsampling stages and a 7x7 tanh head.
struct GeneratorSpec {
  std::size_t base_filters = 8;
  std::size_t downsampling = 2;
  std::size_t residual_blocks = 4;
  Upsampler upsampler = Upsampler::transposed;
  std::uint64_t seed = 1;
  double init_std = 0.02;

  std::vector<LayerSpec> layers() const;
  std::size_t stride_factor() const { return std::size_t{1} << downsampling; }
};

// Patch discriminator: `downsampling` stride-2 4x4 convs, then a 3x3
// feature conv and a 3x3 one-channel score head, both stride 1.
struct DiscriminatorSpec {
  std::size_t base_filters = 8;
  std::size_t downsampling = 3;
  std::uint64_t seed = 2;
  double init_std = 0.02;

  std::vector<LayerSpec> layers() const;
  std::size_t stride_factor() const { return std::size_t{1} << downsampling; }
};

template <typename T>
class Network {
 public:
  Network(std::string name, std::vector<LayerSpec> layers, std::uint64_t seed, double init_std);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // With trainable=true parameters enter `graph` as leaves; otherwise they
  // are constants and only gradients with respect to the input flow.
  ad::Tensor<T> forward(ad::Graph<T>& graph, const ad::Tensor<T>& x, bool trainable = true) const;
  // Graph-free forward pass.
  ad::Tensor<T> forward(const ad::Tensor<T>& x) const;

  Shape output_shape(const Shape& input) const;

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<ad::Parameter<T>*> parameters();
  std::vector<const ad::Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  // Copies parameter values from a network with the identical layer stack.
  void copy_parameters_from(const Network& other);

 private:
  struct Slot {
    std::size_t first_param = 0;
    std::size_t param_count = 0;
  };

  ad::Tensor<T> run(ad::Graph<T>* graph, const ad::Tensor<T>& x, bool trainable) const;

  std::string name_;
  std::vector<LayerSpec> layers_;
  std::vector<Slot> slots_;
  std::vector<std::unique_ptr<ad::Parameter<T>>> params_;
};

// Both throw ShapeError when height or width is not divisible by the
// network's total downsampling stride.
template <typename T>
Network<T> build_generator(const GeneratorSpec& spec, std::size_t height, std::size_t width,
                           std::string name = "generator");
template <typename T>
Network<T> build_discriminator(const DiscriminatorSpec& spec, std::size_t height,
                               std::size_t width, std::string name = "discriminator");

}  // namespace mammogan::nn
