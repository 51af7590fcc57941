#include "mammogan/cyclegan.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "mammogan/hash.hpp"
#include "mammogan/seeds.hpp"

namespace mammogan {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (height < 8 || width < 8) throw DataError("train: resolution must be at least 8x8");
  if (!(lambda_cycle >= 0.0) || !std::isfinite(lambda_cycle)) throw DataError("train: lambda_cycle must be >= 0");
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
      !(adam.eps > 0)) {
    throw DataError("train: invalid Adam settings (need lr > 0, betas in [0, 1), eps > 0)");
  }
  if (total_steps == 0) throw DataError("train: total_steps must be positive");
  if (generator.downsampling == 0 || discriminator.downsampling == 0) {
    throw DataError("train: networks need at least one downsampling stage");
  }
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

std::size_t common_stride(const TrainConfig& c) {
  return std::lcm(c.generator.stride_factor(), c.discriminator.stride_factor());
}

}  // namespace

std::size_t TrainConfig::padded_height() const { return round_up(height, common_stride(*this)); }
std::size_t TrainConfig::padded_width() const { return round_up(width, common_stride(*this)); }

json to_json(const TrainConfig& c) {
  return json{{"height", c.height},
              {"width", c.width},
              {"lambda_cycle", c.lambda_cycle},
              {"lr", c.adam.lr},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"total_steps", c.total_steps},
              {"checkpoint_every", c.checkpoint_every},
              {"image_pool_size", c.image_pool_size},
              {"seed", c.seed},
              {"augment", c.augment},
              {"frozen_discriminators", c.frozen_discriminators},
              {"generator", to_json(c.generator)},
              {"discriminator", to_json(c.discriminator)}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  StrictReader r(j, "train");
  r.opt("height", c.height)
      .opt("width", c.width)
      .opt("lambda_cycle", c.lambda_cycle)
      .opt("lr", c.adam.lr)
      .opt("beta1", c.adam.beta1)
      .opt("beta2", c.adam.beta2)
      .opt("adam_eps", c.adam.eps)
      .opt("total_steps", c.total_steps)
      .opt("checkpoint_every", c.checkpoint_every)
      .opt("image_pool_size", c.image_pool_size)
      .opt("seed", c.seed)
      .opt("augment", c.augment)
      .opt("frozen_discriminators", c.frozen_discriminators);
  if (const auto* g = r.sub("generator")) c.generator = generator_spec_from_json(*g);
  if (const auto* d = r.sub("discriminator")) c.discriminator = discriminator_spec_from_json(*d);
  r.finish();
  c.validate();
  return c;
}

std::string config_hash(const TrainConfig& c) {
  const json shape{{"height", c.height},
                   {"width", c.width},
                   {"generator",
                    {{"base_filters", c.generator.base_filters},
                     {"downsampling", c.generator.downsampling},
                     {"residual_blocks", c.generator.residual_blocks},
                     {"upsampler", to_json(c.generator)["upsampler"]}}},
                   {"discriminator",
                    {{"base_filters", c.discriminator.base_filters},
                     {"downsampling", c.discriminator.downsampling}}}};
  return sha256_hex(shape.dump());
}

AdversarialLosses adversarial_losses(const ad::Tensor<Real>& d_real, const ad::Tensor<Real>& d_fake) {
  if (d_real.shape() != d_fake.shape()) {
    throw ShapeError("adversarial_losses: score maps " + ad::to_string(d_real.shape()) + " and " +
                     ad::to_string(d_fake.shape()) + " differ");
  }
  auto d = ad::add(ad::scale(ad::mse_to(d_real, Real(1)), Real(0.5)), ad::scale(ad::mse_to(d_fake, Real(0)), Real(0.5)));
  return {d, ad::mse_to(d_fake, Real(1))};
}

template <typename T>
ad::Tensor<T> cycle_loss(const ad::Tensor<T>& x, const ad::Tensor<T>& x_rec, T lambda) {
  if (x.shape() != x_rec.shape()) {
    throw ShapeError("cycle_loss: shapes " + ad::to_string(x.shape()) + " and " + ad::to_string(x_rec.shape()) +
                     " differ");
  }
  return ad::scale(ad::reduce_mean(ad::abs(ad::sub(x, x_rec))), lambda);
}

template ad::Tensor<float> cycle_loss(const ad::Tensor<float>&, const ad::Tensor<float>&, float);
template ad::Tensor<double> cycle_loss(const ad::Tensor<double>&, const ad::Tensor<double>&, double);

ad::Tensor<Real> ImagePool::query(const ad::Tensor<Real>& image, std::mt19937_64& rng) {
  const auto img = image.detach();
  if (capacity_ == 0) return img;
  if (images_.size() < capacity_) {
    images_.push_back(img);
    return img;
  }
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, capacity_ - 1)(rng);
    auto old = images_[k];
    images_[k] = img;
    return old;
  }
  return img;
}

json to_json(const LossRecord& r) {
  return json{{"step", r.step},       {"adv_G_HC", r.adv_G_HC}, {"adv_G_CH", r.adv_G_CH}, {"adv_D_H", r.adv_D_H},
              {"adv_D_C", r.adv_D_C}, {"cycle_H", r.cycle_H},   {"cycle_C", r.cycle_C}};
}

std::string to_string(Direction d) { return d == Direction::h_to_c ? "h2c" : "c2h"; }

Direction direction_from_string(const std::string& s) {
  if (s == "h2c" || s == "H2C" || s == "healthy-to-cancer") return Direction::h_to_c;
  if (s == "c2h" || s == "C2H" || s == "cancer-to-healthy") return Direction::c_to_h;
  throw DataError("unknown direction '" + s + "' (expected h2c|c2h)");
}

Image pad_image(const Image& img, std::size_t height, std::size_t width, float value) {
  if (height < img.height || width < img.width) throw ShapeError("pad_image: target smaller than image");
  if (height == img.height && width == img.width) return img;
  Image out(height, width, value);
  for (std::size_t y = 0; y < img.height; ++y)
    std::copy_n(img.pixels.begin() + y * img.width, img.width, out.pixels.begin() + y * width);
  return out;
}

Image crop_image(const Image& img, std::size_t height, std::size_t width) {
  if (height > img.height || width > img.width) throw ShapeError("crop_image: target larger than image");
  if (height == img.height && width == img.width) return img;
  Image out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    std::copy_n(img.pixels.begin() + y * img.width, width, out.pixels.begin() + y * width);
  return out;
}

namespace {

nn::GeneratorSpec reseed(nn::GeneratorSpec s, std::string_view name) {
  s.seed = derive_seed({s.seed, tag(name)});
  return s;
}

nn::DiscriminatorSpec reseed(nn::DiscriminatorSpec s, std::string_view name) {
  s.seed = derive_seed({s.seed, tag(name)});
  return s;
}

template <typename... Nets>
std::vector<ad::Parameter<Real>*> collect(Nets&... nets) {
  std::vector<ad::Parameter<Real>*> out;
  for (auto* n : {&nets...})
    for (auto* p : n->parameters()) out.push_back(p);
  return out;
}

void check_finite(std::uint64_t step, std::initializer_list<std::pair<const char*, double>> terms) {
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericError("non-finite loss at step " + std::to_string(step) + ": " + name);
  }
}

}  // namespace

CycleGan::CycleGan(TrainConfig config)
    : config_((config.validate(), std::move(config))),
      g_hc_(nn::build_generator<Real>(reseed(config_.generator, "G_HC"), config_.padded_height(),
                                      config_.padded_width(), "G_HC")),
      g_ch_(nn::build_generator<Real>(reseed(config_.generator, "G_CH"), config_.padded_height(),
                                      config_.padded_width(), "G_CH")),
      d_h_(nn::build_discriminator<Real>(reseed(config_.discriminator, "D_H"), config_.padded_height(),
                                         config_.padded_width(), "D_H")),
      d_c_(nn::build_discriminator<Real>(reseed(config_.discriminator, "D_C"), config_.padded_height(),
                                         config_.padded_width(), "D_C")),
      opt_g_(config_.adam, collect(g_hc_, g_ch_)),
      opt_d_(config_.adam, collect(d_h_, d_c_)),
      pool_h_(config_.image_pool_size),
      pool_c_(config_.image_pool_size) {}

ad::Tensor<Real> CycleGan::prepare(const Image& img) const {
  if (img.height != config_.height || img.width != config_.width) {
    throw DataError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    " but the model expects " + std::to_string(config_.height) + "x" +
                    std::to_string(config_.width));
  }
  return to_tensor<Real>(pad_image(img, config_.padded_height(), config_.padded_width()));
}

LossRecord CycleGan::train_step(const Image& healthy, const Image& cancer) {
  const std::uint64_t step = step_ + 1;
  const auto real_h = prepare(healthy);
  const auto real_c = prepare(cancer);
  const auto lambda = static_cast<Real>(config_.lambda_cycle);
  LossRecord rec;
  rec.step = step;

  ad::Tensor<Real> fake_c, fake_h;
  {
    ad::Graph<Real> g;
    auto fc = g_hc_.forward(g, real_h);
    auto fh = g_ch_.forward(g, real_c);
    auto cyc_h = cycle_loss(real_h, g_ch_.forward(g, fc), lambda);
    auto cyc_c = cycle_loss(real_c, g_hc_.forward(g, fh), lambda);
    auto total = ad::add(cyc_h, cyc_c);
    rec.cycle_H = cyc_h.item();
    rec.cycle_C = cyc_c.item();
    if (config_.frozen_discriminators) {
      rec.adv_G_HC = rec.adv_G_CH = 0.25;  // (0.5 - 1)^2
    } else {
      auto adv_hc = ad::mse_to(d_c_.forward(g, fc, false), Real(1));
      auto adv_ch = ad::mse_to(d_h_.forward(g, fh, false), Real(1));
      rec.adv_G_HC = adv_hc.item();
      rec.adv_G_CH = adv_ch.item();
      total = ad::add(total, ad::add(adv_hc, adv_ch));
    }
    check_finite(step, {{"adv_G_HC", rec.adv_G_HC},
                        {"adv_G_CH", rec.adv_G_CH},
                        {"cycle_H", rec.cycle_H},
                        {"cycle_C", rec.cycle_C}});
    opt_g_.step(g.backward(total));
    fake_c = fc.detach();
    fake_h = fh.detach();
  }

  if (config_.frozen_discriminators) {
    rec.adv_D_H = rec.adv_D_C = 0.25;  // 1/2 (0.5 - 1)^2 + 1/2 (0.5)^2
  } else {
    std::mt19937_64 rng(derive_seed({config_.seed, tag("pool"), step}));
    const auto pooled_c = pool_c_.query(fake_c, rng);
    const auto pooled_h = pool_h_.query(fake_h, rng);
    ad::Graph<Real> g;
    auto ld_h = adversarial_losses(d_h_.forward(g, real_h), d_h_.forward(g, pooled_h)).d;
    auto ld_c = adversarial_losses(d_c_.forward(g, real_c), d_c_.forward(g, pooled_c)).d;
    rec.adv_D_H = ld_h.item();
    rec.adv_D_C = ld_c.item();
    check_finite(step, {{"adv_D_H", rec.adv_D_H}, {"adv_D_C", rec.adv_D_C}});
    opt_d_.step(g.backward(ad::add(ld_h, ld_c)));
  }
  step_ = step;
  return rec;
}

Image CycleGan::translate(const Image& img, Direction d) const {
  const auto x = prepare(img);
  const auto y = (d == Direction::h_to_c ? g_hc_ : g_ch_).forward(x);
  return crop_image(from_tensor(y), img.height, img.width);
}

std::vector<const ad::Parameter<Real>*> CycleGan::parameters() const {
  std::vector<const ad::Parameter<Real>*> out;
  for (const auto* n : {&g_hc_, &g_ch_, &d_h_, &d_c_})
    for (const auto* p : n->parameters()) out.push_back(p);
  return out;
}

// --- checkpoint IO ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw DataError("cannot write checkpoint '" + path.string() + "'");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename U>
  void uint(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, sizeof b);
  }
  void f32(std::span<const float> v) {
    for (float x : v) uint(std::bit_cast<std::uint32_t>(x));
  }
  void str16(const std::string& s) {
    uint(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("failed writing checkpoint '" + path_.string() + "'");
  }

 private:
  std::ofstream out_;
  fs::path path_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open checkpoint '" + path.string() + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("checkpoint '" + path_.string() + "' is truncated");
  }
  template <typename U>
  U uint() {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof b);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
  }
  void f32(std::span<float> v) {
    for (auto& x : v) x = std::bit_cast<float>(uint<std::uint32_t>());
  }
  std::string str(std::size_t n) {
    if (n > (1u << 26)) throw DataError("checkpoint '" + path_.string() + "' has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  const fs::path& path() const { return path_; }

 private:
  std::ifstream in_;
  fs::path path_;
};

CheckpointHeader read_header(Reader& r) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError("'" + r.path().string() + "' is not a checkpoint");
  CheckpointHeader h;
  h.version = r.uint<std::uint32_t>();
  if (h.version != kVersion) {
    throw DataError("checkpoint version " + std::to_string(h.version) + " is not supported");
  }
  h.step = r.uint<std::uint64_t>();
  h.config_hash = r.str(64);
  const auto len = r.uint<std::uint32_t>();
  try {
    h.config = train_config_from_json(json::parse(r.str(len)));
  } catch (const json::exception& e) {
    throw DataError("checkpoint config is not valid JSON: " + std::string(e.what()));
  }
  if (config_hash(h.config) != h.config_hash) throw DataError("checkpoint header hash does not match its config");
  return h;
}

void write_adam(Writer& w, const ad::Adam<Real>& opt) {
  const auto& s = opt.state();
  w.uint(static_cast<std::uint64_t>(s.step));
  w.uint(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    w.f32(s.m[i]);
    w.f32(s.v[i]);
  }
}

void read_adam(Reader& r, ad::Adam<Real>& opt) {
  ad::AdamState<Real> s;
  s.step = r.uint<std::uint64_t>();
  const auto n = r.uint<std::uint32_t>();
  if (n != opt.params().size()) throw DataError("checkpoint optimizer state has the wrong parameter count");
  for (std::size_t i = 0; i < n; ++i) {
    s.m.emplace_back(opt.params()[i]->size());
    s.v.emplace_back(opt.params()[i]->size());
    r.f32(s.m.back());
    r.f32(s.v.back());
  }
  opt.set_state(std::move(s));
}

}  // namespace

void CycleGan::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic, 8);
  w.uint(kVersion);
  w.uint(static_cast<std::uint64_t>(step_));
  const auto hash = config_hash(config_);
  w.bytes(hash.data(), hash.size());
  const auto cfg = to_json(config_).dump();
  w.uint(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  const auto params = parameters();
  w.uint(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str16(p->name());
    w.uint(static_cast<std::uint8_t>(p->shape().size()));
    for (auto d : p->shape()) w.uint(static_cast<std::uint32_t>(d));
    w.f32(p->values());
  }
  write_adam(w, opt_g_);
  write_adam(w, opt_d_);
  w.finish();
}

CheckpointHeader read_checkpoint_header(const fs::path& path) {
  Reader r(path);
  return read_header(r);
}

CycleGan CycleGan::load(const fs::path& path, const std::optional<TrainConfig>& expected, bool allow_mismatch) {
  Reader r(path);
  const auto header = read_header(r);
  if (expected && !allow_mismatch && config_hash(*expected) != header.config_hash) {
    throw DataError("checkpoint '" + path.string() + "' was trained with config hash " +
                    header.config_hash.substr(0, 12) + " but the current configuration hashes to " +
                    config_hash(*expected).substr(0, 12) + " (resolution or architecture differ)");
  }
  CycleGan model(header.config);
  auto params = collect(model.g_hc_, model.g_ch_, model.d_h_, model.d_c_);
  const auto count = r.uint<std::uint32_t>();
  if (count != params.size()) throw DataError("checkpoint holds " + std::to_string(count) + " parameter blocks, expected " + std::to_string(params.size()));
  for (auto* p : params) {
    const auto name = r.str(r.uint<std::uint16_t>());
    if (name != p->name()) throw DataError("checkpoint block '" + name + "' where '" + p->name() + "' was expected");
    ad::Shape shape(r.uint<std::uint8_t>());
    for (auto& d : shape) d = r.uint<std::uint32_t>();
    if (shape != p->shape()) {
      throw DataError("checkpoint block '" + name + "' has shape " + ad::to_string(shape) + ", expected " +
                      ad::to_string(p->shape()));
    }
    r.f32(p->mutable_values());
  }
  read_adam(r, model.opt_g_);
  read_adam(r, model.opt_d_);
  model.step_ = header.step;
  return model;
}

void train(CycleGan& model, const TrainingSet& data, std::size_t until_step,
           const std::function<void(const LossRecord&)>& on_step) {
  const auto& cfg = model.config();
  for (std::uint64_t s = model.step() + 1; s <= until_step; ++s) {
    std::mt19937_64 rng(derive_seed({cfg.seed, tag("sample"), s}));
    const auto hi = std::uniform_int_distribution<std::size_t>(0, data.size(ImageClass::healthy) - 1)(rng);
    const auto ci = std::uniform_int_distribution<std::size_t>(0, data.size(ImageClass::cancer) - 1)(rng);
    const auto rec = model.train_step(data.sample(ImageClass::healthy, hi), data.sample(ImageClass::cancer, ci));
    if (on_step) on_step(rec);
  }
}

}  // namespace mammogan
