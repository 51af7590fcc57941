#pragma once

// Grid/checkerboard artifact measures.
//
// grid_score is the share of non-DC spectral energy lying in the bands around
// the period-2 and period-4 frequencies. On each axis of length N the target
// frequencies are 0, N/4, N/2 and 3N/4 (in bins); a bin is in the band when
// its circular distance to a target is at most one bin on both axes, except
// for the neighbourhood of DC itself (both coordinates near 0).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mammogan/cyclegan.hpp"
#include "mammogan/image.hpp"
#include "mammogan/phantom.hpp"
#include "mammogan/serialize.hpp"

namespace mammogan {

// Power spectrum |F(ky, kx)|^2 of the full H x W DFT (row-major).
std::vector<double> power_spectrum(const Image& img);

// True when bin k of an axis of length n lies within one bin of 0, n/4, n/2 or 3n/4.
bool near_grid_frequency(std::size_t k, std::size_t n);
bool in_grid_band(std::size_t ky, std::size_t kx, std::size_t h, std::size_t w);

// In [0, 1]; 0 for constant images. Throws ShapeError below 8 px per side.
double grid_score(const Image& img);

struct BandEnergy {
  double fy = 0, fx = 0;  // cycles per pixel
  double fraction = 0;    // share of non-DC energy within +-1 bin of (fy, fx)
};

struct ArtifactReport {
  double grid_score = 0;
  std::vector<BandEnergy> bands;
};

ArtifactReport artifact_report(const Image& img);
json to_json(const ArtifactReport& r);

struct DiffResult {
  Image diff;  // modified - original
  double mean_abs = 0;
  double max_abs = 0;
  double grid_score = 0;
};

// Throws ShapeError on a size mismatch.
DiffResult diff_map(const Image& original, const Image& modified);
json to_json(const DiffResult& d);

struct EvalImage {
  std::string id;
  Image image;
  ImageClass cls;
};

struct CurveRow {
  std::uint64_t step = 0;
  double median_grid_score = 0;       // translated images
  double median_diff_grid_score = 0;  // translated - original
  std::size_t images = 0;
};

// Each image is translated to the other domain by every model; medians per
// model, in the order given. Throws DataError for fewer than 2 models or no images.
std::vector<CurveRow> artifact_curve(const std::vector<const CycleGan*>& models, const std::vector<EvalImage>& images);
json to_json(const std::vector<CurveRow>& rows);
std::string curve_csv(const std::vector<CurveRow>& rows);

struct UpsamplerComparison {
  std::vector<double> transposed, resize;  // median over inputs, one per seed
  double median_transposed = 0, median_resize = 0;
};

// Random-weight generators differing only in the upsampler, run on the same
// inputs for each seed.
UpsamplerComparison compare_upsamplers(const nn::GeneratorSpec& base, const std::vector<Image>& inputs,
                                       const std::vector<std::uint64_t>& seeds);

double median(std::vector<double> v);

}  // namespace mammogan
