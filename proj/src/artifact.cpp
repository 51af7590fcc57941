#include "mammogan/artifact.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <sstream>

namespace mammogan {

namespace {

// FFTW planning is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void check_size(const Image& img) {
  if (img.height < 8 || img.width < 8) {
    throw ShapeError("grid_score: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     ", need at least 8x8");
  }
}

double circular_distance(double k, double t, double n) {
  const double d = std::fmod(std::abs(k - t), n);
  return std::min(d, n - d);
}

}  // namespace

std::vector<double> power_spectrum(const Image& img) {
  check_size(img);
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  const int wc = w / 2 + 1;
  std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(img.size()), fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(static_cast<std::size_t>(h) * wc),
                                                          fftw_free);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_2d(h, w, in.get(), out.get(), FFTW_ESTIMATE);
  }
  std::copy(img.pixels.begin(), img.pixels.end(), in.get());
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  // Expand the half spectrum by Hermitian symmetry.
  std::vector<double> power(img.size());
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < wc; ++kx) {
      const auto& c = out.get()[ky * wc + kx];
      const double p = c[0] * c[0] + c[1] * c[1];
      power[ky * w + kx] = p;
      power[((h - ky) % h) * w + (w - kx) % w] = p;
    }
  return power;
}

bool near_grid_frequency(std::size_t k, std::size_t n) {
  const double nn = static_cast<double>(n);
  for (double t : {0.0, nn / 4, nn / 2, 3 * nn / 4})
    if (circular_distance(static_cast<double>(k), t, nn) <= 1.0 + 1e-9) return true;
  return false;
}

bool in_grid_band(std::size_t ky, std::size_t kx, std::size_t h, std::size_t w) {
  const bool dc_y = circular_distance(static_cast<double>(ky), 0, static_cast<double>(h)) <= 1.0 + 1e-9;
  const bool dc_x = circular_distance(static_cast<double>(kx), 0, static_cast<double>(w)) <= 1.0 + 1e-9;
  if (dc_y && dc_x) return false;
  return near_grid_frequency(ky, h) && near_grid_frequency(kx, w);
}

double grid_score(const Image& img) {
  const auto power = power_spectrum(img);
  double total = 0, band = 0;
  for (std::size_t ky = 0; ky < img.height; ++ky)
    for (std::size_t kx = 0; kx < img.width; ++kx) {
      if (ky == 0 && kx == 0) continue;
      const double p = power[ky * img.width + kx];
      total += p;
      if (in_grid_band(ky, kx, img.height, img.width)) band += p;
    }
  // Round-off energy of a constant image is ~1e-30 relative to the DC term.
  const double dc = power[0];
  if (total <= 1e-24 * std::max(dc, 1.0)) return 0.0;
  return std::clamp(band / total, 0.0, 1.0);
}

ArtifactReport artifact_report(const Image& img) {
  ArtifactReport r;
  r.grid_score = grid_score(img);
  const auto power = power_spectrum(img);
  const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
  double total = 0;
  for (std::size_t i = 1; i < power.size(); ++i) total += power[i];
  for (double fy : {0.0, 0.25, 0.5, 0.75})
    for (double fx : {0.0, 0.25, 0.5, 0.75}) {
      if (fy == 0 && fx == 0) continue;
      double e = 0;
      for (std::size_t ky = 0; ky < img.height; ++ky)
        for (std::size_t kx = 0; kx < img.width; ++kx) {
          if (circular_distance(ky, fy * h, h) > 1.0 + 1e-9 || circular_distance(kx, fx * w, w) > 1.0 + 1e-9) continue;
          if (in_grid_band(ky, kx, img.height, img.width)) e += power[ky * img.width + kx];
        }
      r.bands.push_back({fy, fx, total > 0 ? e / total : 0.0});
    }
  return r;
}

json to_json(const ArtifactReport& r) {
  json bands = json::array();
  for (const auto& b : r.bands) bands.push_back({{"fy", b.fy}, {"fx", b.fx}, {"fraction", b.fraction}});
  return json{{"grid_score", r.grid_score}, {"bands", bands}};
}

DiffResult diff_map(const Image& original, const Image& modified) {
  if (!original.same_shape(modified)) {
    throw ShapeError("diff_map: original is " + std::to_string(original.height) + "x" +
                     std::to_string(original.width) + ", modified is " + std::to_string(modified.height) + "x" +
                     std::to_string(modified.width));
  }
  DiffResult d;
  d.diff = Image(original.height, original.width);
  double sum = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const float v = modified.pixels[i] - original.pixels[i];
    d.diff.pixels[i] = v;
    sum += std::abs(v);
    d.max_abs = std::max(d.max_abs, static_cast<double>(std::abs(v)));
  }
  d.mean_abs = original.size() ? sum / original.size() : 0.0;
  d.grid_score = grid_score(d.diff);
  return d;
}

json to_json(const DiffResult& d) {
  return json{{"mean_abs", d.mean_abs}, {"max_abs", d.max_abs}, {"grid_score", d.grid_score}};
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<CurveRow> artifact_curve(const std::vector<const CycleGan*>& models, const std::vector<EvalImage>& images) {
  if (models.size() < 2) throw DataError("artifact_curve: need at least two checkpoints");
  if (images.empty()) throw DataError("artifact_curve: no evaluation images");
  std::vector<CurveRow> rows;
  for (const auto* m : models) {
    std::vector<double> g, dg;
    for (const auto& e : images) {
      const auto out = m->translate(e.image, e.cls == ImageClass::healthy ? Direction::h_to_c : Direction::c_to_h);
      g.push_back(grid_score(out));
      dg.push_back(diff_map(e.image, out).grid_score);
    }
    rows.push_back({m->step(), median(g), median(dg), images.size()});
  }
  return rows;
}

json to_json(const std::vector<CurveRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"step", r.step},
                   {"median_grid_score", r.median_grid_score},
                   {"median_diff_grid_score", r.median_diff_grid_score},
                   {"images", r.images}});
  }
  return out;
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "step,median_grid_score,median_diff_grid_score,images\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.median_grid_score << ',' << r.median_diff_grid_score << ',' << r.images << '\n';
  return out.str();
}

UpsamplerComparison compare_upsamplers(const nn::GeneratorSpec& base, const std::vector<Image>& inputs,
                                       const std::vector<std::uint64_t>& seeds) {
  if (inputs.empty() || seeds.empty()) throw DataError("compare_upsamplers: need inputs and seeds");
  UpsamplerComparison c;
  for (auto seed : seeds) {
    for (auto up : {nn::Upsampler::transposed, nn::Upsampler::resize}) {
      auto spec = base;
      spec.seed = seed;
      spec.upsampler = up;
      const auto g = nn::build_generator<Real>(spec, inputs.front().height, inputs.front().width);
      std::vector<double> scores;
      for (const auto& img : inputs) scores.push_back(grid_score(from_tensor(g.forward(to_tensor<Real>(img)))));
      (up == nn::Upsampler::transposed ? c.transposed : c.resize).push_back(median(scores));
    }
  }
  c.median_transposed = median(c.transposed);
  c.median_resize = median(c.resize);
  return c;
}

}  // namespace mammogan
