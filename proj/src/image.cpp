#include "mammogan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace mammogan {

template <typename T>
ad::Tensor<T> to_tensor(const Image& img) {
  std::vector<T> v(img.pixels.begin(), img.pixels.end());
  return ad::Tensor<T>({1, 1, img.height, img.width}, std::move(v));
}

template <typename T>
Image from_tensor(const ad::Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw ShapeError("from_tensor: expected [1,1,H,W], got " + ad::to_string(t.shape()));
  }
  Image img(t.dim(2), t.dim(3));
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(t[i]);
  return img;
}

template ad::Tensor<float> to_tensor<float>(const Image&);
template ad::Tensor<double> to_tensor<double>(const Image&);
template Image from_tensor<float>(const ad::Tensor<float>&);
template Image from_tensor<double>(const ad::Tensor<double>&);

float sample_bilinear(const Image& img, double y, double x, float fill) {
  if (y < -0.5 || x < -0.5 || y > img.height - 0.5 || x > img.width - 0.5) return fill;
  const double yc = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(yc));
  const auto x0 = static_cast<std::size_t>(std::floor(xc));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = yc - y0, fx = xc - x0;
  const double top = img.at(y0, x0) * (1 - fx) + img.at(y0, x1) * fx;
  const double bot = img.at(y1, x0) * (1 - fx) + img.at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || img.size() == 0) throw ShapeError("resize: empty image or target");
  Image out(height, width);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out.at(y, x) = sample_bilinear(img, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, 0.0f);
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warning_fn(png_structp, png_const_charp) {}

std::uint16_t quantize16(float v, float lo, float hi) {
  const double t = std::clamp((static_cast<double>(v) - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(t * 65535.0));
}

std::uint8_t quantize8(float v, float center, float width) {
  const double t = std::clamp((static_cast<double>(v) - (center - width / 2.0)) / width, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(t * 255.0));
}

// Writes rows of `bytes_per_sample`-wide big-endian gray samples.
void write_png(png_structp png, png_infop info, const Image& img, int depth,
               const std::vector<unsigned char>& raw) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * static_cast<std::size_t>(depth / 8);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raw.data() + y * stride));
  }
  png_write_end(png, nullptr);
}

std::vector<unsigned char> raw16(const Image& img, float lo, float hi) {
  std::vector<unsigned char> raw(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const auto q = quantize16(img.pixels[i], lo, hi);
    raw[2 * i] = static_cast<unsigned char>(q >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  return raw;
}

std::vector<unsigned char> raw8(const Image& img, float center, float width) {
  std::vector<unsigned char> raw(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) raw[i] = quantize8(img.pixels[i], center, width);
  return raw;
}

void write_png_file(const std::filesystem::path& path, const Image& img, int depth,
                    const std::vector<unsigned char>& raw) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  write_png(png, info, img, depth, raw);
  png_destroy_write_struct(&png, &info);
}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

}  // namespace

void write_png16(const std::filesystem::path& path, const Image& img, float lo, float hi) {
  if (!(hi > lo)) throw ShapeError("write_png16: hi must exceed lo");
  write_png_file(path, img, 16, raw16(img, lo, hi));
}

void write_png8(const std::filesystem::path& path, const Image& img, float center, float width) {
  if (!(width > 0)) throw ShapeError("write_png8: window width must be positive");
  write_png_file(path, img, 8, raw8(img, center, width));
}

std::vector<unsigned char> encode_png8(const Image& img, float center, float width) {
  if (!(width > 0)) throw ShapeError("encode_png8: window width must be positive");
  std::vector<unsigned char> out;
  const auto raw = raw8(img, center, width);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode image");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  write_png(png, info, img, 8, raw);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image read_png(const std::filesystem::path& path, float lo, float hi) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  Image img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode '" + path.string() + "'");
  }
  {
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    img = Image(png_get_image_height(png, info), png_get_image_width(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    const std::size_t channels = png_get_channels(png, info);
    row.resize(rowbytes);
    const double maxval = depth == 16 ? 65535.0 : 255.0;
    for (std::size_t y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t x = 0; x < img.width; ++x) {
        const std::size_t i = x * channels;
        const double v = depth == 16 ? (row[2 * i] << 8 | row[2 * i + 1]) : row[i];
        img.at(y, x) = static_cast<float>(lo + (hi - lo) * (v / maxval));
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image read_pgm(const std::filesystem::path& path, float lo, float hi) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw DataError("pgm: '" + path.string() + "' is not a P2/P5 file");
  std::size_t w = 0, h = 0;
  long maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw DataError("pgm: malformed header in '" + path.string() + "'");
  }
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 65535) throw DataError("pgm: invalid header in '" + path.string() + "'");
  Image img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    long v = 0;
    if (magic == "P2") {
      v = std::stol(token());
    } else if (maxval < 256) {
      v = static_cast<unsigned char>(in.get());
    } else {
      const int hi_b = in.get();
      const int lo_b = in.get();
      v = (hi_b << 8) | lo_b;
    }
    if (!in && magic == "P5") throw DataError("pgm: truncated pixel data in '" + path.string() + "'");
    img.pixels[i] = static_cast<float>(lo + (hi - lo) * (static_cast<double>(v) / maxval));
  }
  return img;
}

Image read_grayscale(const std::filesystem::path& path, float lo, float hi) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  char sig[2] = {};
  in.read(sig, 2);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '2')) return read_pgm(path, lo, hi);
  return read_png(path, lo, hi);
}

}  // namespace mammogan
