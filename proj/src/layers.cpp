#include "mammogan/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "ops_common.hpp"

namespace mammogan::ad {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Geometry {
  std::size_t channels, height, width;  // the "image" side of im2col
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // the "column" side
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const Geometry& g, T* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Scatter-add of columns back into the image (adjoint of im2col).
template <typename T>
void col2im(const T* cols, const Geometry& g, T* img) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank4(const char* op, const Shape& s) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + to_string(s));
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvOptions& opt) {
  if (kernel == 0 || opt.stride == 0) throw ShapeError("conv: kernel and stride must be >= 1");
  const auto span = static_cast<std::ptrdiff_t>(in + 2 * opt.padding) - static_cast<std::ptrdiff_t>(kernel);
  if (span < 0) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * opt.padding));
  }
  return static_cast<std::size_t>(span) / opt.stride + 1;
}

std::size_t conv_transpose_output_size(std::size_t in, std::size_t kernel, const ConvOptions& opt) {
  if (kernel == 0 || opt.stride == 0 || in == 0) {
    throw ShapeError("conv_transpose: kernel, stride and input must be >= 1");
  }
  if (opt.output_padding >= opt.stride) {
    throw ShapeError("conv_transpose: output_padding must be smaller than stride");
  }
  const auto out = static_cast<std::ptrdiff_t>((in - 1) * opt.stride + kernel + opt.output_padding) -
                   static_cast<std::ptrdiff_t>(2 * opt.padding);
  if (out <= 0) throw ShapeError("conv_transpose: non-positive output size");
  return static_cast<std::size_t>(out);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvOptions& opt) {
  require_rank4("conv2d", x.shape());
  require_rank4("conv2d", w.shape());
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                     " channels, weights " + to_string(w.shape()) + " expect " +
                     std::to_string(w.dim(1)));
  }
  const std::size_t n = x.dim(0), out_c = w.dim(0);
  Geometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), opt.stride, opt.padding, 0, 0};
  g.out_h = conv_output_size(g.height, g.kh, opt);
  g.out_w = conv_output_size(g.width, g.kw, opt);
  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = out_c * g.cols();
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto ncols = static_cast<Eigen::Index>(g.cols());
  const auto oc = static_cast<Eigen::Index>(out_c);

  auto cols = std::make_shared<std::vector<T>>(n * g.rows() * g.cols());
  auto out = std::make_shared<std::vector<T>>(n * out_plane);
  Eigen::Map<const Mat<T>> W(w.values().data(), oc, rows);
  for (std::size_t b = 0; b < n; ++b) {
    T* cb = cols->data() + b * g.rows() * g.cols();
    im2col(x.values().data() + b * in_plane, g, cb);
    Eigen::Map<Mat<T>>(out->data() + b * out_plane, oc, ncols).noalias() =
        W * Eigen::Map<const Mat<T>>(cb, rows, ncols);
  }
  std::shared_ptr<const std::vector<T>> saved = cols;
  return detail::make_result<T>(
      Shape{n, out_c, g.out_h, g.out_w}, std::move(out), {x, w},
      [x, w, g, saved, n, in_plane, out_plane, rows, ncols, oc](Graph<T>& graph, std::span<const T> go) {
        auto gx = graph.grad(x);
        auto gw = graph.grad(w);
        Eigen::Map<const Mat<T>> W(w.values().data(), oc, rows);
        std::vector<T> dcols(gx.empty() ? 0 : g.rows() * g.cols());
        for (std::size_t b = 0; b < n; ++b) {
          Eigen::Map<const Mat<T>> dY(go.data() + b * out_plane, oc, ncols);
          const T* cb = saved->data() + b * g.rows() * g.cols();
          if (!gw.empty()) {
            Eigen::Map<Mat<T>>(gw.data(), oc, rows).noalias() +=
                dY * Eigen::Map<const Mat<T>>(cb, rows, ncols).transpose();
          }
          if (!gx.empty()) {
            Eigen::Map<Mat<T>>(dcols.data(), rows, ncols).noalias() = W.transpose() * dY;
            col2im(dcols.data(), g, gx.data() + b * in_plane);
          }
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const ConvOptions& opt) {
  require_rank4("conv_transpose2d", x.shape());
  require_rank4("conv_transpose2d", w.shape());
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("conv_transpose2d: input " + to_string(x.shape()) + " has " +
                     std::to_string(x.dim(1)) + " channels, weights " + to_string(w.shape()) +
                     " expect " + std::to_string(w.dim(0)));
  }
  const std::size_t n = x.dim(0), in_c = x.dim(1), out_c = w.dim(1);
  const std::size_t out_h = conv_transpose_output_size(x.dim(2), w.dim(2), opt);
  const std::size_t out_w = conv_transpose_output_size(x.dim(3), w.dim(3), opt);
  // The output plays the image role of the equivalent forward convolution.
  const Geometry g{out_c, out_h, out_w, w.dim(2), w.dim(3), opt.stride, opt.padding, x.dim(2), x.dim(3)};
  const std::size_t in_plane = in_c * g.cols();
  const std::size_t out_plane = out_c * out_h * out_w;
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto ncols = static_cast<Eigen::Index>(g.cols());
  const auto ic = static_cast<Eigen::Index>(in_c);

  auto out = std::make_shared<std::vector<T>>(n * out_plane, T(0));
  Eigen::Map<const Mat<T>> W(w.values().data(), ic, rows);
  std::vector<T> cols(g.rows() * g.cols());
  for (std::size_t b = 0; b < n; ++b) {
    Eigen::Map<Mat<T>>(cols.data(), rows, ncols).noalias() =
        W.transpose() * Eigen::Map<const Mat<T>>(x.values().data() + b * in_plane, ic, ncols);
    col2im(cols.data(), g, out->data() + b * out_plane);
  }
  return detail::make_result<T>(
      Shape{n, out_c, out_h, out_w}, std::move(out), {x, w},
      [x, w, g, n, in_plane, out_plane, rows, ncols, ic](Graph<T>& graph, std::span<const T> go) {
        auto gx = graph.grad(x);
        auto gw = graph.grad(w);
        Eigen::Map<const Mat<T>> W(w.values().data(), ic, rows);
        std::vector<T> dcols(g.rows() * g.cols());
        for (std::size_t b = 0; b < n; ++b) {
          im2col(go.data() + b * out_plane, g, dcols.data());
          Eigen::Map<const Mat<T>> D(dcols.data(), rows, ncols);
          if (!gx.empty()) {
            Eigen::Map<Mat<T>>(gx.data() + b * in_plane, ic, ncols).noalias() += W * D;
          }
          if (!gw.empty()) {
            Eigen::Map<Mat<T>>(gw.data(), ic, rows).noalias() +=
                Eigen::Map<const Mat<T>>(x.values().data() + b * in_plane, ic, ncols) * D.transpose();
          }
        }
      });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  require_rank4("add_channel_bias", x.shape());
  if (b.size() != x.dim(1)) {
    throw ShapeError("add_channel_bias: bias " + to_string(b.shape()) + " for input " +
                     to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto out = std::make_shared<std::vector<T>>(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      T* p = out->data() + (i * c + k) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += b[k];
    }
  return detail::make_result<T>(x.shape(), std::move(out), {x, b},
                                [x, b, n, c, plane](Graph<T>& graph, std::span<const T> go) {
                                  auto gx = graph.grad(x);
                                  auto gb = graph.grad(b);
                                  for (std::size_t i = 0; i < go.size(); ++i) {
                                    if (!gx.empty()) gx[i] += go[i];
                                    if (!gb.empty()) gb[(i / plane) % c] += go[i];
                                  }
                                });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_rank4("instance_norm", x.shape());
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gain.size() != c || bias.size() != c) {
    throw ShapeError("instance_norm: gain/bias " + to_string(gain.shape()) + "/" +
                     to_string(bias.shape()) + " for input " + to_string(x.shape()));
  }
  if (plane == 1 && eps == T(0)) {
    throw NumericError("instance_norm: spatial size 1 with eps = 0 has zero variance");
  }
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(n * c);
  auto out = std::make_shared<std::vector<T>>(x.size());
  auto xv = x.values();
  for (std::size_t s = 0; s < n * c; ++s) {
    const T* p = xv.data() + s * plane;
    double mean = 0.0;
    for (std::size_t j = 0; j < plane; ++j) mean += p[j];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t j = 0; j < plane; ++j) var += (p[j] - mean) * (p[j] - mean);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_std)[s] = static_cast<T>(is);
    const std::size_t k = s % c;
    for (std::size_t j = 0; j < plane; ++j) {
      const T h = static_cast<T>((p[j] - mean) * is);
      (*xhat)[s * plane + j] = h;
      (*out)[s * plane + j] = gain[k] * h + bias[k];
    }
  }
  std::shared_ptr<const std::vector<T>> saved_hat = xhat;
  std::shared_ptr<const std::vector<T>> saved_is = inv_std;
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, saved_hat, saved_is, n, c, plane](Graph<T>& graph, std::span<const T> go) {
        auto gx = graph.grad(x);
        auto gg = graph.grad(gain);
        auto gb = graph.grad(bias);
        const auto& h = *saved_hat;
        for (std::size_t s = 0; s < n * c; ++s) {
          const std::size_t k = s % c;
          const T* dy = go.data() + s * plane;
          const T* hs = h.data() + s * plane;
          double sum_dy = 0.0, sum_dy_h = 0.0;
          for (std::size_t j = 0; j < plane; ++j) {
            sum_dy += dy[j];
            sum_dy_h += dy[j] * hs[j];
          }
          if (!gg.empty()) gg[k] += static_cast<T>(sum_dy_h);
          if (!gb.empty()) gb[k] += static_cast<T>(sum_dy);
          if (gx.empty()) continue;
          const double g = gain[k];
          const double is = (*saved_is)[s];
          const double mean_dy = sum_dy / static_cast<double>(plane);
          const double mean_dy_h = sum_dy_h / static_cast<double>(plane);
          T* dx = gx.data() + s * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            dx[j] += static_cast<T>(g * is * (dy[j] - mean_dy - hs[j] * mean_dy_h));
          }
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest2d(const Tensor<T>& x, std::size_t factor) {
  require_rank4("upsample_nearest2d", x.shape());
  if (factor == 0) throw ShapeError("upsample_nearest2d: factor must be >= 1");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  auto out = std::make_shared<std::vector<T>>(nc * oh * ow);
  auto xv = x.values();
  for (std::size_t s = 0; s < nc; ++s)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        (*out)[(s * oh + y) * ow + xx] = xv[(s * h + y / factor) * w + xx / factor];
  return detail::make_result<T>(
      Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
      [x, nc, h, w, oh, ow, factor](Graph<T>& graph, std::span<const T> go) {
        auto gx = graph.grad(x);
        for (std::size_t s = 0; s < nc; ++s)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
              gx[(s * h + y / factor) * w + xx / factor] += go[(s * oh + y) * ow + xx];
      });
}

#define MAMMOGAN_INSTANTIATE_LAYERS(T)                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const ConvOptions&);          \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const ConvOptions&);\
  template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
  template Tensor<T> upsample_nearest2d(const Tensor<T>&, std::size_t);

MAMMOGAN_INSTANTIATE_LAYERS(float)
MAMMOGAN_INSTANTIATE_LAYERS(double)

}  // namespace mammogan::ad
