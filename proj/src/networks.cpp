#include "mammogan/networks.hpp"

#include <random>

namespace mammogan::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::transposed_conv2d: return "transposed_conv2d";
    case LayerKind::resize_conv2d: return "resize_conv2d";
    case LayerKind::instance_norm: return "instance_norm";
    case LayerKind::activation: return "activation";
    case LayerKind::residual_block: return "residual_block";
  }
  return "unknown";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

void validate(const LayerSpec& s) {
  if (s.kernel < 1 || s.stride < 1) {
    throw ShapeError(to_string(s.kind) + ": kernel and stride must be >= 1");
  }
  if (s.channels_in == 0 || s.channels_out == 0) {
    throw ShapeError(to_string(s.kind) + ": channel counts must be positive");
  }
}

namespace {

LayerSpec conv(std::size_t k, std::size_t s, std::size_t p, std::size_t cin, std::size_t cout,
               bool bias) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.kernel = k;
  l.stride = s;
  l.padding = p;
  l.channels_in = cin;
  l.channels_out = cout;
  l.bias = bias;
  return l;
}

LayerSpec norm(std::size_t c) {
  LayerSpec l;
  l.kind = LayerKind::instance_norm;
  l.channels_in = l.channels_out = c;
  return l;
}

LayerSpec act(std::size_t c, Activation a) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.channels_in = l.channels_out = c;
  l.activation = a;
  return l;
}

constexpr double kNormEps = 1e-5;

}  // namespace

std::vector<LayerSpec> GeneratorSpec::layers() const {
  if (base_filters == 0) throw ShapeError("generator: base_filters must be positive");
  std::vector<LayerSpec> out;
  std::size_t c = base_filters;
  out.push_back(conv(7, 1, 3, 1, c, false));
  out.push_back(norm(c));
  out.push_back(act(c, Activation::relu));
  for (std::size_t i = 0; i < downsampling; ++i) {
    out.push_back(conv(3, 2, 1, c, 2 * c, false));
    c *= 2;
    out.push_back(norm(c));
    out.push_back(act(c, Activation::relu));
  }
  for (std::size_t i = 0; i < residual_blocks; ++i) {
    LayerSpec r;
    r.kind = LayerKind::residual_block;
    r.kernel = 3;
    r.padding = 1;
    r.channels_in = r.channels_out = c;
    out.push_back(r);
  }
  for (std::size_t i = 0; i < downsampling; ++i) {
    LayerSpec u;
    u.kind = upsampler == Upsampler::transposed ? LayerKind::transposed_conv2d
                                                : LayerKind::resize_conv2d;
    u.kernel = 3;
    u.stride = 2;
    u.padding = 1;
    u.output_padding = upsampler == Upsampler::transposed ? 1 : 0;
    u.channels_in = c;
    u.channels_out = c / 2;
    c /= 2;
    out.push_back(u);
    out.push_back(norm(c));
    out.push_back(act(c, Activation::relu));
  }
  out.push_back(conv(7, 1, 3, c, 1, true));
  out.push_back(act(1, Activation::tanh));
  return out;
}

std::vector<LayerSpec> DiscriminatorSpec::layers() const {
  if (base_filters == 0) throw ShapeError("discriminator: base_filters must be positive");
  std::vector<LayerSpec> out;
  std::size_t c = base_filters;
  out.push_back(conv(4, 2, 1, 1, c, true));
  out.push_back(act(c, Activation::leaky_relu));
  for (std::size_t i = 1; i < downsampling; ++i) {
    out.push_back(conv(4, 2, 1, c, 2 * c, false));
    c *= 2;
    out.push_back(norm(c));
    out.push_back(act(c, Activation::leaky_relu));
  }
  out.push_back(conv(3, 1, 1, c, 2 * c, false));
  c *= 2;
  out.push_back(norm(c));
  out.push_back(act(c, Activation::leaky_relu));
  out.push_back(conv(3, 1, 1, c, 1, true));
  return out;
}

template <typename T>
Network<T>::Network(std::string name, std::vector<LayerSpec> layers, std::uint64_t seed,
                    double init_std)
    : name_(std::move(name)), layers_(std::move(layers)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  auto add = [&](const std::string& pname, Shape shape, double fill, bool random) {
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(random ? normal(rng) : fill);
    params_.push_back(std::make_unique<ad::Parameter<T>>(pname, std::move(shape), std::move(v)));
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    validate(l);
    const std::string prefix = name_ + "." + std::to_string(i) + "." + to_string(l.kind);
    Slot slot{params_.size(), 0};
    const std::size_t k = l.kernel;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::resize_conv2d:
        add(prefix + ".weight", {l.channels_out, l.channels_in, k, k}, 0.0, true);
        if (l.bias) add(prefix + ".bias", {l.channels_out}, 0.0, false);
        break;
      case LayerKind::transposed_conv2d:
        add(prefix + ".weight", {l.channels_in, l.channels_out, k, k}, 0.0, true);
        if (l.bias) add(prefix + ".bias", {l.channels_out}, 0.0, false);
        break;
      case LayerKind::instance_norm:
        add(prefix + ".gain", {l.channels_in}, 1.0, false);
        add(prefix + ".bias", {l.channels_in}, 0.0, false);
        break;
      case LayerKind::activation:
        break;
      case LayerKind::residual_block:
        if (l.channels_in != l.channels_out) {
          throw ShapeError("residual_block: channels_in must equal channels_out");
        }
        for (int j = 1; j <= 2; ++j) {
          const std::string sub = prefix + "." + std::to_string(j);
          add(sub + ".weight", {l.channels_in, l.channels_in, k, k}, 0.0, true);
          add(sub + ".gain", {l.channels_in}, 1.0, false);
          add(sub + ".bias", {l.channels_in}, 0.0, false);
        }
        break;
    }
    slot.param_count = params_.size() - slot.first_param;
    slots_.push_back(slot);
  }
}

template <typename T>
ad::Tensor<T> Network<T>::forward(ad::Graph<T>& graph, const ad::Tensor<T>& x, bool trainable) const {
  return run(&graph, x, trainable);
}

template <typename T>
ad::Tensor<T> Network<T>::forward(const ad::Tensor<T>& x) const {
  return run(nullptr, x, false);
}

template <typename T>
ad::Tensor<T> Network<T>::run(ad::Graph<T>* graph, const ad::Tensor<T>& input, bool trainable) const {
  if (input.rank() != 4 || input.dim(1) != layers_.front().channels_in) {
    throw ShapeError(name_ + ": expected input [N," + std::to_string(layers_.front().channels_in) +
                     ",H,W], got " + ad::to_string(input.shape()));
  }
  auto param = [&](std::size_t idx) {
    const auto& p = *params_[idx];
    return (graph != nullptr && trainable) ? graph->leaf(p) : p.tensor();
  };
  ad::Tensor<T> x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::size_t base = slots_[i].first_param;
    switch (l.kind) {
      case LayerKind::conv2d:
        x = ad::conv2d(x, param(base), {l.stride, l.padding, 0});
        if (l.bias) x = ad::add_channel_bias(x, param(base + 1));
        break;
      case LayerKind::resize_conv2d:
        x = ad::upsample_nearest2d(x, l.stride);
        x = ad::conv2d(x, param(base), {1, l.padding, 0});
        if (l.bias) x = ad::add_channel_bias(x, param(base + 1));
        break;
      case LayerKind::transposed_conv2d:
        x = ad::conv_transpose2d(x, param(base), {l.stride, l.padding, l.output_padding});
        if (l.bias) x = ad::add_channel_bias(x, param(base + 1));
        break;
      case LayerKind::instance_norm:
        x = ad::instance_norm(x, param(base), param(base + 1), static_cast<T>(kNormEps));
        break;
      case LayerKind::activation:
        switch (l.activation) {
          case Activation::none: break;
          case Activation::relu: x = ad::relu(x); break;
          case Activation::leaky_relu: x = ad::leaky_relu(x, static_cast<T>(l.slope)); break;
          case Activation::tanh: x = ad::tanh(x); break;
        }
        break;
      case LayerKind::residual_block: {
        const ad::ConvOptions same{1, l.padding, 0};
        auto h = ad::conv2d(x, param(base), same);
        h = ad::relu(ad::instance_norm(h, param(base + 1), param(base + 2), static_cast<T>(kNormEps)));
        h = ad::conv2d(h, param(base + 3), same);
        h = ad::instance_norm(h, param(base + 4), param(base + 5), static_cast<T>(kNormEps));
        x = ad::add(x, h);
        break;
      }
    }
  }
  return x;
}

template <typename T>
Shape Network<T>::output_shape(const Shape& input) const {
  if (input.size() != 4) throw ShapeError(name_ + ": expected NCHW shape, got " + ad::to_string(input));
  Shape s = input;
  for (const LayerSpec& l : layers_) {
    const ad::ConvOptions opt{l.stride, l.padding, l.output_padding};
    switch (l.kind) {
      case LayerKind::conv2d:
        s = {s[0], l.channels_out, ad::conv_output_size(s[2], l.kernel, opt),
             ad::conv_output_size(s[3], l.kernel, opt)};
        break;
      case LayerKind::resize_conv2d: {
        const ad::ConvOptions unit{1, l.padding, 0};
        s = {s[0], l.channels_out, ad::conv_output_size(s[2] * l.stride, l.kernel, unit),
             ad::conv_output_size(s[3] * l.stride, l.kernel, unit)};
        break;
      }
      case LayerKind::transposed_conv2d:
        s = {s[0], l.channels_out, ad::conv_transpose_output_size(s[2], l.kernel, opt),
             ad::conv_transpose_output_size(s[3], l.kernel, opt)};
        break;
      case LayerKind::residual_block: {
        const ad::ConvOptions same{1, l.padding, 0};
        if (ad::conv_output_size(s[2], l.kernel, same) != s[2] ||
            ad::conv_output_size(s[3], l.kernel, same) != s[3]) {
          throw ShapeError(name_ + ": residual block does not preserve spatial size");
        }
        break;
      }
      default:
        break;
    }
  }
  return s;
}

template <typename T>
std::vector<ad::Parameter<T>*> Network<T>::parameters() {
  std::vector<ad::Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const ad::Parameter<T>*> Network<T>::parameters() const {
  std::vector<const ad::Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

template <typename T>
void Network<T>::copy_parameters_from(const Network& other) {
  if (other.params_.size() != params_.size()) {
    throw ShapeError(name_ + ": cannot copy parameters from a different architecture");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (other.params_[i]->shape() != params_[i]->shape()) {
      throw ShapeError(name_ + ": parameter shape mismatch for '" + params_[i]->name() + "'");
    }
    auto src = other.params_[i]->values();
    std::copy(src.begin(), src.end(), params_[i]->mutable_values().begin());
  }
}

namespace {

void check_divisible(const std::string& name, std::size_t h, std::size_t w, std::size_t stride) {
  if (h == 0 || w == 0 || h % stride != 0 || w % stride != 0) {
    throw ShapeError(name + ": resolution " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the total downsampling stride " + std::to_string(stride));
  }
}

}  // namespace

template <typename T>
Network<T> build_generator(const GeneratorSpec& spec, std::size_t height, std::size_t width,
                           std::string name) {
  check_divisible(name, height, width, spec.stride_factor());
  Network<T> net(std::move(name), spec.layers(), spec.seed, spec.init_std);
  const Shape out = net.output_shape({1, 1, height, width});
  if (out != Shape{1, 1, height, width}) {
    throw ShapeError(net.name() + ": output shape " + ad::to_string(out) + " differs from input");
  }
  return net;
}

template <typename T>
Network<T> build_discriminator(const DiscriminatorSpec& spec, std::size_t height,
                               std::size_t width, std::string name) {
  check_divisible(name, height, width, spec.stride_factor());
  Network<T> net(std::move(name), spec.layers(), spec.seed, spec.init_std);
  net.output_shape({1, 1, height, width});
  return net;
}

template class Network<float>;
template class Network<double>;
template Network<float> build_generator<float>(const GeneratorSpec&, std::size_t, std::size_t, std::string);
template Network<double> build_generator<double>(const GeneratorSpec&, std::size_t, std::size_t, std::string);
template Network<float> build_discriminator<float>(const DiscriminatorSpec&, std::size_t, std::size_t, std::string);
template Network<double> build_discriminator<double>(const DiscriminatorSpec&, std::size_t, std::size_t, std::string);

}  // namespace mammogan::nn
