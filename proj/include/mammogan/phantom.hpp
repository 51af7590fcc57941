#pragma once

// Synthetic two-class mammography-like phantoms.
//
// Geometry is expressed as fractions of the image width so a spec scales with
// resolution. Images live in [-1, 1]: -1 is the air background, breast tissue
// sits around `tissue_level`, and lesions/islets/calcifications are brighter.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mammogan/image.hpp"

namespace mammogan {

enum class ImageClass { healthy, cancer };

std::string to_string(ImageClass c);
ImageClass image_class_from_string(const std::string& s);

struct PhantomSpec {
  std::size_t height = 64;
  std::size_t width = 64;

  // Smoothing scales (fraction of width) and weights of the three noise octaves.
  std::array<double, 3> texture_scales{0.12, 0.05, 0.02};
  std::array<double, 3> texture_weights{0.10, 0.06, 0.03};
  double tissue_level = -0.35;

  // Half-ellipse attached to the left border: semi-axis along x (depth) and y.
  double mask_depth = 0.80;
  double mask_half_height = 0.44;

  // Elongated fibroglandular islets (the "existing structures").
  int islets_min = 2;
  int islets_max = 5;
  std::array<double, 2> islet_length{0.10, 0.22};
  std::array<double, 2> islet_aspect{2.5, 4.0};
  std::array<double, 2> islet_amplitude{0.10, 0.22};

  // Small bright benign calcifications.
  int calcifications_min = 0;
  int calcifications_max = 4;
  double calcification_radius = 0.012;
  double calcification_amplitude = 0.6;

  // Lesion for the cancer class. `lesion_contrast` is the minimum difference
  // between the lesion-disk mean and the surrounding annulus mean, as a
  // fraction of the dynamic range (2.0 for [-1, 1]).
  std::array<double, 2> lesion_radius{0.06, 0.10};
  double lesion_contrast = 0.3;
  std::array<int, 2> spicules{3, 7};

  std::uint64_t seed = 2019;

  // Throws DataError when infeasible (e.g. lesion larger than the mask).
  void validate() const;
  double dynamic_range() const { return 2.0; }
};

struct LesionTruth {
  double cy = 0, cx = 0, radius = 0;
};

struct Phantom {
  Image image;
  std::optional<LesionTruth> lesion;
};

// Deterministic in (spec, class, seed).
Phantom generate_phantom(const PhantomSpec& spec, ImageClass cls, std::uint64_t seed);

// Mean of the disk of `radius` minus mean of the annulus [radius, 2 radius).
double disk_annulus_contrast(const Image& img, double cy, double cx, double radius);

// Gaussian-smoothed disk template of the given radius, zero-padded to a
// (2*ceil(2r)+1)^2 window; values in [0, 1].
Image lesion_template(double radius);

// Template radii used by the oracle for a spec: lesion radius range
// endpoints and midpoint, in pixels.
std::vector<double> oracle_radii(const PhantomSpec& spec);

// Maximum normalized cross-correlation against the template bank over all
// windows lying inside the image and free of air (-1) pixels; 0 for windows
// with zero variance, and 0 when no window qualifies. Range [-1, 1].
double lesion_oracle_score(const Image& img, const PhantomSpec& spec);
double lesion_oracle_score(const Image& img, const std::vector<double>& radii);

// Affine map of [lo, hi] onto [-1, 1] with clipping, and its inverse.
Image normalize(const Image& img, float lo, float hi);
Image denormalize(const Image& img, float lo, float hi);

struct AugmentParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double gamma = 1.0;
};

struct AugmentRanges {
  double max_rotation_deg = 15.0;
  std::array<double, 2> scale{0.9, 1.1};
  std::array<double, 2> gamma{0.8, 1.25};
};

constexpr std::size_t kAugmentFactor = 10;

// Rotation and scaling about the image centre (bilinear, background fill -1),
// then a gamma curve on the [0, 1]-mapped intensities. Output is clipped to [-1, 1].
Image apply_augmentation(const Image& img, const AugmentParams& p);
AugmentParams draw_augmentation(std::uint64_t seed, std::size_t index, const AugmentRanges& r = {});
// Exactly kAugmentFactor variants, deterministic in seed.
std::vector<Image> augment(const Image& img, std::uint64_t seed, const AugmentRanges& r = {});

}  // namespace mammogan
