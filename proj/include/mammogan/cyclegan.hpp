#pragma once

// Two-domain cycle-consistent training (healthy <-> cancer), translation and
// checkpoints.
//
// Checkpoint layout (little-endian):
//   char[8]  magic "MGANCKPT"
//   u32      version (1)
//   u64      step
//   char[64] config hash, lower-case hex SHA-256 (see config_hash)
//   u32      config JSON length, then that many bytes (TrainConfig)
//   u32      parameter block count, then per block:
//              u16 name length, name bytes, u8 ndim, u32 dims[ndim],
//              f32 values[prod(dims)]
//   two optimizer sections (generators, then discriminators), each:
//              u64 adam step, u32 parameter count,
//              per parameter in block order: f32 m[n], f32 v[n]
// Block order is G_HC, G_CH, D_H, D_C, each in layer order.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mammogan/adam.hpp"
#include "mammogan/dataset.hpp"
#include "mammogan/image.hpp"
#include "mammogan/networks.hpp"
#include "mammogan/serialize.hpp"

namespace mammogan {

using Real = float;

struct TrainConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  double lambda_cycle = 10.0;
  ad::AdamConfig adam;
  std::size_t total_steps = 5000;
  std::size_t checkpoint_every = 1000;
  std::size_t image_pool_size = 50;
  std::uint64_t seed = 7;
  bool augment = true;
  // Discriminators fixed at output 0.5 and never updated (diagnostic mode).
  bool frozen_discriminators = false;
  nn::GeneratorSpec generator;
  nn::DiscriminatorSpec discriminator;

  // Throws DataError. lambda_cycle may be 0 (degenerate runs).
  void validate() const;
  // Network input size: resolution rounded up to the common stride.
  std::size_t padded_height() const;
  std::size_t padded_width() const;
};

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

// Hash of the fields that determine parameter shapes: resolution and
// network architecture (seeds and optimizer settings excluded).
std::string config_hash(const TrainConfig& c);

struct AdversarialLosses {
  ad::Tensor<Real> d;
  ad::Tensor<Real> g;
};

// Least-squares adversarial losses:
//   loss_D = 1/2 mean((d_real - 1)^2) + 1/2 mean(d_fake^2)
//   loss_G = mean((d_fake - 1)^2)
AdversarialLosses adversarial_losses(const ad::Tensor<Real>& d_real, const ad::Tensor<Real>& d_fake);
template <typename T>
ad::Tensor<T> cycle_loss(const ad::Tensor<T>& x, const ad::Tensor<T>& x_rec, T lambda);

// Bounded history of generated images. Until full, queries store and return
// the new image; afterwards, with probability 1/2 a random stored image is
// returned and replaced by the new one.
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity) : capacity_(capacity) {}
  ad::Tensor<Real> query(const ad::Tensor<Real>& image, std::mt19937_64& rng);
  std::size_t size() const { return images_.size(); }

 private:
  std::size_t capacity_;
  std::vector<ad::Tensor<Real>> images_;
};

struct LossRecord {
  std::uint64_t step = 0;
  double adv_G_HC = 0, adv_G_CH = 0;
  double adv_D_H = 0, adv_D_C = 0;
  double cycle_H = 0, cycle_C = 0;
};

json to_json(const LossRecord& r);

enum class Direction { h_to_c, c_to_h };
std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

Image pad_image(const Image& img, std::size_t height, std::size_t width, float value = -1.0f);
Image crop_image(const Image& img, std::size_t height, std::size_t width);

class CycleGan {
 public:
  explicit CycleGan(TrainConfig config);
  CycleGan(CycleGan&&) = default;

  const TrainConfig& config() const { return config_; }
  std::uint64_t step() const { return step_; }

  // One generator update (both directions) and one discriminator update
  // (both domains). Inputs must be at the configured resolution. Throws
  // NumericError naming the step and term on a non-finite loss.
  LossRecord train_step(const Image& healthy, const Image& cancer);

  // Pure function of (image, parameters). Output has the input's shape.
  Image translate(const Image& img, Direction d) const;

  nn::Network<Real>& g_hc() { return g_hc_; }
  nn::Network<Real>& g_ch() { return g_ch_; }
  nn::Network<Real>& d_h() { return d_h_; }
  nn::Network<Real>& d_c() { return d_c_; }
  const nn::Network<Real>& g_hc() const { return g_hc_; }
  const nn::Network<Real>& g_ch() const { return g_ch_; }

  // All parameters in checkpoint block order.
  std::vector<const ad::Parameter<Real>*> parameters() const;

  void save(const std::filesystem::path& path) const;
  // Throws DataError on a corrupt file, or when `expected` is given and its
  // config hash differs from the file's (unless allow_mismatch).
  static CycleGan load(const std::filesystem::path& path, const std::optional<TrainConfig>& expected = std::nullopt,
                       bool allow_mismatch = false);

 private:
  ad::Tensor<Real> prepare(const Image& img) const;

  TrainConfig config_;
  nn::Network<Real> g_hc_, g_ch_, d_h_, d_c_;
  ad::Adam<Real> opt_g_, opt_d_;
  ImagePool pool_h_, pool_c_;
  std::uint64_t step_ = 0;
};

// Reads only the header; used to refuse mismatched stages cheaply.
struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint64_t step = 0;
  std::string config_hash;
  TrainConfig config;
};
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Runs steps step()+1 .. until total_steps, drawing one image per domain per
// step with a generator seeded from (config seed, step), so resuming from a
// checkpoint continues the same sample sequence.
void train(CycleGan& model, const TrainingSet& data, std::size_t until_step,
           const std::function<void(const LossRecord&)>& on_step = {});

}  // namespace mammogan
