#include "mammogan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mammogan/seeds.hpp"

namespace mammogan {

std::string to_string(ImageClass c) { return c == ImageClass::cancer ? "cancer" : "healthy"; }

ImageClass image_class_from_string(const std::string& s) {
  if (s == "cancer") return ImageClass::cancer;
  if (s == "healthy") return ImageClass::healthy;
  throw DataError("unknown image class '" + s + "' (expected healthy|cancer)");
}

void PhantomSpec::validate() const {
  if (height < 8 || width < 8) throw DataError("phantom: resolution must be at least 8x8");
  if (lesion_radius[0] <= 0 || lesion_radius[1] < lesion_radius[0]) {
    throw DataError("phantom: lesion radius range must be positive and ordered");
  }
  const double minor = std::min(mask_depth * width, mask_half_height * height);
  if (lesion_radius[1] * width >= minor) {
    throw DataError("phantom: lesion radius " + std::to_string(lesion_radius[1] * width) +
                    " px does not fit the breast mask minor axis " + std::to_string(minor) + " px");
  }
  if (lesion_contrast <= 0 || lesion_contrast >= 0.5) {
    throw DataError("phantom: lesion contrast must lie in (0, 0.5) of the dynamic range");
  }
  if (tissue_level <= -1 || tissue_level >= 1) throw DataError("phantom: tissue level outside (-1, 1)");
  if (islets_min < 0 || islets_max < islets_min || calcifications_min < 0 ||
      calcifications_max < calcifications_min || spicules[0] < 0 || spicules[1] < spicules[0]) {
    throw DataError("phantom: count ranges must be non-negative and ordered");
  }
  if (calcification_amplitude > 1.0 || islet_amplitude[1] > 1.0) {
    throw DataError("phantom: structure amplitudes must stay within the output range");
  }
}

namespace {

using Field = std::vector<double>;

constexpr double kAirLevel = -1.0 + 1e-6;

void blur_axis(Field& f, std::size_t h, std::size_t w, double sigma, bool along_x) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  Field out(f.size(), 0.0);
  const long n = static_cast<long>(along_x ? w : h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      const long pos = static_cast<long>(along_x ? x : y);
      for (int i = -radius; i <= radius; ++i) {
        const long q = std::clamp(pos + i, 0L, n - 1);
        acc += k[i + radius] * (along_x ? f[y * w + q] : f[q * w + x]);
      }
      out[y * w + x] = acc;
    }
  f.swap(out);
}

Field smooth_noise(std::size_t h, std::size_t w, double sigma, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Field f(h * w);
  for (auto& v : f) v = u(rng);
  blur_axis(f, h, w, sigma, true);
  blur_axis(f, h, w, sigma, false);
  double mean = 0.0, sq = 0.0;
  for (double v : f) mean += v;
  mean /= f.size();
  for (double v : f) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / f.size());
  for (auto& v : f) v = sd > 0 ? (v - mean) / sd : 0.0;
  return f;
}

struct Mask {
  double cy, ax, ay;
  // Normalized elliptical radius; <= 1 inside the breast.
  double rho(double y, double x) const {
    const double dy = (y - cy) / ay, dx = (x + 0.5) / ax;
    return std::sqrt(dy * dy + dx * dx);
  }
};

// Logistic-edged disk profile in [0, 1].
double disk_profile(double d, double radius) {
  const double edge = std::max(0.15 * radius, 0.35);
  return 1.0 / (1.0 + std::exp((d - radius) / edge));
}

double segment_distance(double py, double px, double ay, double ax, double by, double bx, double& t) {
  const double vy = by - ay, vx = bx - ax;
  const double len2 = vy * vy + vx * vx;
  t = len2 > 0 ? std::clamp(((py - ay) * vy + (px - ax) * vx) / len2, 0.0, 1.0) : 0.0;
  const double qy = ay + t * vy - py, qx = ax + t * vx - px;
  return std::sqrt(qy * qy + qx * qx);
}

}  // namespace

double disk_annulus_contrast(const Image& img, double cy, double cx, double radius) {
  double disk = 0, ring = 0;
  std::size_t nd = 0, nr = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double d = std::hypot(y - cy, x - cx);
      if (d < radius) {
        disk += img.at(y, x);
        ++nd;
      } else if (d < 2 * radius) {
        ring += img.at(y, x);
        ++nr;
      }
    }
  if (nd == 0 || nr == 0) return 0.0;
  return disk / nd - ring / nr;
}

Phantom generate_phantom(const PhantomSpec& spec, ImageClass cls, std::uint64_t seed) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const double W = static_cast<double>(w);
  std::mt19937_64 rng(derive_seed({spec.seed, seed, static_cast<std::uint64_t>(cls)}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const Mask mask{(h - 1) / 2.0, spec.mask_depth * W, spec.mask_half_height * static_cast<double>(h)};
  const double edge_px = std::min(mask.ax, mask.ay);

  Field tissue(h * w, spec.tissue_level);
  for (std::size_t o = 0; o < 3; ++o) {
    const auto noise = smooth_noise(h, w, std::max(0.5, spec.texture_scales[o] * W), rng);
    for (std::size_t i = 0; i < tissue.size(); ++i) tissue[i] += spec.texture_weights[o] * noise[i];
  }
  // Denser tissue towards the chest wall.
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) tissue[y * w + x] += 0.08 * std::max(0.0, 1.0 - x / mask.ax);

  auto point_inside = [&](double max_rho) {
    for (int tries = 0; tries < 10000; ++tries) {
      const double y = uniform(0, h - 1.0), x = uniform(0, w - 1.0);
      if (mask.rho(y, x) < max_rho) return std::pair{y, x};
    }
    throw DataError("phantom: could not place a structure inside the breast mask");
  };

  const int islets = uniform_int(spec.islets_min, spec.islets_max);
  for (int k = 0; k < islets; ++k) {
    const auto [cy, cx] = point_inside(0.8);
    const double len = uniform(spec.islet_length[0], spec.islet_length[1]) * W;
    const double wid = len / uniform(spec.islet_aspect[0], spec.islet_aspect[1]);
    const double theta = uniform(0, std::numbers::pi);
    const double amp = uniform(spec.islet_amplitude[0], spec.islet_amplitude[1]);
    const double su = len / 4.0, sv = std::max(wid / 4.0, 0.5);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        tissue[y * w + x] += amp * std::exp(-0.5 * (u * u / (su * su) + v * v / (sv * sv)));
      }
  }

  const int calcs = uniform_int(spec.calcifications_min, spec.calcifications_max);
  const double cs = std::max(0.5, spec.calcification_radius * W);
  for (int k = 0; k < calcs; ++k) {
    const auto [cy, cx] = point_inside(0.85);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        tissue[y * w + x] += spec.calcification_amplitude * std::exp(-0.5 * d2 / (cs * cs));
      }
  }

  Field alpha(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      alpha[y * w + x] = std::clamp((1.0 - mask.rho(y, x)) * edge_px, 0.0, 1.0);

  auto compose = [&](const Field& lesion, double amplitude) {
    Image img(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double t = tissue[i] + amplitude * lesion[i];
      img.pixels[i] = static_cast<float>(std::clamp(-1.0 + alpha[i] * (t + 1.0), -1.0, 1.0));
    }
    return img;
  };

  Phantom out;
  if (cls == ImageClass::healthy) {
    out.image = compose(Field(h * w, 0.0), 0.0);
    return out;
  }

  const double radius = uniform(spec.lesion_radius[0], spec.lesion_radius[1]) * W;
  double ly = 0, lx = 0;
  bool placed = false;
  for (int tries = 0; tries < 10000 && !placed; ++tries) {
    ly = uniform(0, h - 1.0);
    lx = uniform(0, w - 1.0);
    // Keep the whole oracle window (half-size ceil(2r)) inside opaque tissue.
    const double half = std::ceil(2.0 * radius) + 1.0;
    placed = ly - half >= 0 && lx - half >= 0 && ly + half <= h - 1.0 && lx + half <= w - 1.0;
    for (int i = 0; i <= 16 && placed; ++i) {
      const double t = (-1.0 + i / 8.0) * half;
      placed = mask.rho(ly - half, lx + t) < 0.95 && mask.rho(ly + half, lx + t) < 0.95 &&
               mask.rho(ly + t, lx - half) < 0.95 && mask.rho(ly + t, lx + half) < 0.95;
    }
  }
  if (!placed) throw DataError("phantom: lesion does not fit inside the breast mask");

  Field lesion(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) lesion[y * w + x] = disk_profile(std::hypot(y - ly, x - lx), radius);
  const int n_spic = uniform_int(spec.spicules[0], spec.spicules[1]);
  for (int k = 0; k < n_spic; ++k) {
    const double th = uniform(0, 2 * std::numbers::pi);
    const double reach = radius * uniform(1.5, 2.3);
    const double by = ly + reach * std::sin(th), bx = lx + reach * std::cos(th);
    const double ay = ly + 0.7 * radius * std::sin(th), ax = lx + 0.7 * radius * std::cos(th);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double t = 0;
        const double d = segment_distance(y, x, ay, ax, by, bx, t);
        lesion[y * w + x] += 0.35 * (1.0 - t) * std::exp(-0.5 * d * d / 0.36);
      }
  }

  // The contrast is affine in the amplitude until clipping, so solve for the
  // amplitude that meets the target and verify on the clipped image.
  const double target = spec.lesion_contrast * spec.dynamic_range();
  const double c0 = disk_annulus_contrast(compose(lesion, 0.0), ly, lx, radius);
  const double c1 = disk_annulus_contrast(compose(lesion, 1.0), ly, lx, radius);
  double amp = std::max(target * 1.1, (target * 1.05 - c0) / std::max(c1 - c0, 1e-6));
  for (int iter = 0; iter < 20; ++iter) {
    out.image = compose(lesion, amp);
    if (disk_annulus_contrast(out.image, ly, lx, radius) >= target) break;
    amp *= 1.1;
  }
  if (disk_annulus_contrast(out.image, ly, lx, radius) < target) {
    throw DataError("phantom: lesion contrast target unreachable within the intensity range");
  }
  out.lesion = LesionTruth{ly, lx, radius};
  return out;
}

Image lesion_template(double radius) {
  const auto half = static_cast<std::size_t>(std::ceil(2.0 * radius));
  const std::size_t k = 2 * half + 1;
  Image t(k, k);
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t x = 0; x < k; ++x)
      t.at(y, x) = static_cast<float>(disk_profile(std::hypot(y - double(half), x - double(half)), radius));
  return t;
}

std::vector<double> oracle_radii(const PhantomSpec& spec) {
  const double lo = spec.lesion_radius[0] * spec.width, hi = spec.lesion_radius[1] * spec.width;
  return {lo, 0.5 * (lo + hi), hi};
}

double lesion_oracle_score(const Image& img, const PhantomSpec& spec) {
  return lesion_oracle_score(img, oracle_radii(spec));
}

double lesion_oracle_score(const Image& img, const std::vector<double>& radii) {
  const std::size_t h = img.height, w = img.width;
  // Integral images of I, I^2 and the air indicator. Windows touching air
  // (the -1 background) are skipped: the breast outline would otherwise
  // dominate the correlation.
  std::vector<double> s1((h + 1) * (w + 1), 0.0), s2(s1), sa(s1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = img.at(y, x);
      const std::size_t i = (y + 1) * (w + 1) + x + 1;
      s1[i] = v + s1[i - 1] + s1[i - (w + 1)] - s1[i - (w + 1) - 1];
      s2[i] = v * v + s2[i - 1] + s2[i - (w + 1)] - s2[i - (w + 1) - 1];
      sa[i] = (v <= kAirLevel ? 1.0 : 0.0) + sa[i - 1] + sa[i - (w + 1)] - sa[i - (w + 1) - 1];
    }
  auto box = [&](const std::vector<double>& s, std::size_t y, std::size_t x, std::size_t k) {
    return s[(y + k) * (w + 1) + x + k] - s[y * (w + 1) + x + k] - s[(y + k) * (w + 1) + x] + s[y * (w + 1) + x];
  };

  double best = 0.0;
  bool any = false;
  for (double r : radii) {
    const Image t = lesion_template(r);
    const std::size_t k = t.height;
    if (k > h || k > w) continue;
    const double n = static_cast<double>(k * k);
    double tmean = 0.0;
    for (float v : t.pixels) tmean += v;
    tmean /= n;
    std::vector<double> tz(t.size());
    double tnorm = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tz[i] = t.pixels[i] - tmean;
      tnorm += tz[i] * tz[i];
    }
    for (std::size_t y = 0; y + k <= h; ++y)
      for (std::size_t x = 0; x + k <= w; ++x) {
        if (box(sa, y, x, k) > 0.5) continue;
        const double sum = box(s1, y, x, k);
        const double var = box(s2, y, x, k) - sum * sum / n;
        double score = 0.0;
        if (var > 1e-10 * n) {
          double corr = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const float* row = img.pixels.data() + (y + i) * w + x;
            const double* trow = tz.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) corr += row[j] * trow[j];
          }
          score = corr / std::sqrt(var * tnorm);
        }
        if (!any || score > best) {
          best = score;
          any = true;
        }
      }
  }
  return std::clamp(best, -1.0, 1.0);
}

Image normalize(const Image& img, float lo, float hi) {
  if (!(hi > lo)) throw ShapeError("normalize: hi must exceed lo");
  Image out = img;
  for (auto& v : out.pixels) {
    const double t = 2.0 * (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo) - 1.0;
    v = static_cast<float>(std::clamp(t, -1.0, 1.0));
  }
  return out;
}

Image denormalize(const Image& img, float lo, float hi) {
  if (!(hi > lo)) throw ShapeError("denormalize: hi must exceed lo");
  Image out = img;
  for (auto& v : out.pixels) v = static_cast<float>(lo + (static_cast<double>(v) + 1.0) * 0.5 * (hi - lo));
  return out;
}

Image apply_augmentation(const Image& img, const AugmentParams& p) {
  if (!(p.scale > 0) || !(p.gamma > 0)) throw ShapeError("augment: scale and gamma must be positive");
  Image out(img.height, img.width);
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const bool identity_geometry = p.rotation_deg == 0.0 && p.scale == 1.0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      float v;
      if (identity_geometry) {
        v = img.at(y, x);
      } else {
        const double dy = (y - cy) / p.scale, dx = (x - cx) / p.scale;
        v = sample_bilinear(img, cy + c * dy - s * dx, cx + s * dy + c * dx, -1.0f);
      }
      double t = std::clamp(static_cast<double>(v), -1.0, 1.0);
      if (p.gamma != 1.0) t = 2.0 * std::pow((t + 1.0) / 2.0, p.gamma) - 1.0;
      out.at(y, x) = static_cast<float>(t);
    }
  return out;
}

AugmentParams draw_augmentation(std::uint64_t seed, std::size_t index, const AugmentRanges& r) {
  std::mt19937_64 rng(derive_seed({seed, tag("augment"), index}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentParams p;
  p.rotation_deg = (2 * unit(rng) - 1) * r.max_rotation_deg;
  p.scale = r.scale[0] + (r.scale[1] - r.scale[0]) * unit(rng);
  const double lg0 = std::log(r.gamma[0]), lg1 = std::log(r.gamma[1]);
  p.gamma = std::exp(lg0 + (lg1 - lg0) * unit(rng));
  return p;
}

std::vector<Image> augment(const Image& img, std::uint64_t seed, const AugmentRanges& r) {
  std::vector<Image> out;
  out.reserve(kAugmentFactor);
  for (std::size_t i = 0; i < kAugmentFactor; ++i) out.push_back(apply_augmentation(img, draw_augmentation(seed, i, r)));
  return out;
}

}  // namespace mammogan
