#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "mammogan/tensor.hpp"

namespace mammogan {

// Single-channel float image, row-major. Pixel values are in [-1, 1] once
// normalized.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

// [1, 1, H, W] tensor view of an image (copies).
template <typename T>
ad::Tensor<T> to_tensor(const Image& img);
template <typename T>
Image from_tensor(const ad::Tensor<T>& t);

// Zero-based bilinear sample; points outside the image return `fill`.
float sample_bilinear(const Image& img, double y, double x, float fill);

// Bilinear resize to the given size (pixel-centre aligned).
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

// --- file formats ---------------------------------------------------------

// Maps [lo, hi] linearly onto the 16-bit range; values outside are clipped.
void write_png16(const std::filesystem::path& path, const Image& img, float lo = -1.0f, float hi = 1.0f);
// 8-bit rendering with a fixed window: `center` +- `width`/2 maps to 0..255.
void write_png8(const std::filesystem::path& path, const Image& img, float center = 0.0f, float width = 2.0f);
std::vector<unsigned char> encode_png8(const Image& img, float center = 0.0f, float width = 2.0f);

// Reads an 8- or 16-bit grayscale PNG and maps [0, max] onto [lo, hi].
Image read_png(const std::filesystem::path& path, float lo = -1.0f, float hi = 1.0f);
// Reads binary (P5) or ASCII (P2) PGM, maxval up to 65535, mapped onto [lo, hi].
Image read_pgm(const std::filesystem::path& path, float lo = -1.0f, float hi = 1.0f);
// Dispatches on the file signature.
Image read_grayscale(const std::filesystem::path& path, float lo = -1.0f, float hi = 1.0f);

}  // namespace mammogan
