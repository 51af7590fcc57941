#include "mammogan/serialize.hpp"

namespace mammogan {

json to_json(const PhantomSpec& s) {
  return json{{"height", s.height},
              {"width", s.width},
              {"texture_scales", s.texture_scales},
              {"texture_weights", s.texture_weights},
              {"tissue_level", s.tissue_level},
              {"mask_depth", s.mask_depth},
              {"mask_half_height", s.mask_half_height},
              {"islets_min", s.islets_min},
              {"islets_max", s.islets_max},
              {"islet_length", s.islet_length},
              {"islet_aspect", s.islet_aspect},
              {"islet_amplitude", s.islet_amplitude},
              {"calcifications_min", s.calcifications_min},
              {"calcifications_max", s.calcifications_max},
              {"calcification_radius", s.calcification_radius},
              {"calcification_amplitude", s.calcification_amplitude},
              {"lesion_radius", s.lesion_radius},
              {"lesion_contrast", s.lesion_contrast},
              {"spicules", s.spicules},
              {"seed", s.seed}};
}

PhantomSpec phantom_spec_from_json(const json& j) {
  PhantomSpec s;
  StrictReader r(j, "phantom");
  r.opt("height", s.height)
      .opt("width", s.width)
      .opt("texture_scales", s.texture_scales)
      .opt("texture_weights", s.texture_weights)
      .opt("tissue_level", s.tissue_level)
      .opt("mask_depth", s.mask_depth)
      .opt("mask_half_height", s.mask_half_height)
      .opt("islets_min", s.islets_min)
      .opt("islets_max", s.islets_max)
      .opt("islet_length", s.islet_length)
      .opt("islet_aspect", s.islet_aspect)
      .opt("islet_amplitude", s.islet_amplitude)
      .opt("calcifications_min", s.calcifications_min)
      .opt("calcifications_max", s.calcifications_max)
      .opt("calcification_radius", s.calcification_radius)
      .opt("calcification_amplitude", s.calcification_amplitude)
      .opt("lesion_radius", s.lesion_radius)
      .opt("lesion_contrast", s.lesion_contrast)
      .opt("spicules", s.spicules)
      .opt("seed", s.seed)
      .finish();
  s.validate();
  return s;
}

namespace {

std::string upsampler_name(nn::Upsampler u) { return u == nn::Upsampler::resize ? "resize" : "transposed"; }

nn::Upsampler upsampler_from(const std::string& s) {
  if (s == "transposed") return nn::Upsampler::transposed;
  if (s == "resize") return nn::Upsampler::resize;
  throw DataError("generator.upsampler: expected transposed|resize, got '" + s + "'");
}

}  // namespace

json to_json(const nn::GeneratorSpec& s) {
  return json{{"base_filters", s.base_filters},
              {"downsampling", s.downsampling},
              {"residual_blocks", s.residual_blocks},
              {"upsampler", upsampler_name(s.upsampler)},
              {"seed", s.seed},
              {"init_std", s.init_std}};
}

nn::GeneratorSpec generator_spec_from_json(const json& j) {
  nn::GeneratorSpec s;
  std::string up = upsampler_name(s.upsampler);
  StrictReader r(j, "generator");
  r.opt("base_filters", s.base_filters)
      .opt("downsampling", s.downsampling)
      .opt("residual_blocks", s.residual_blocks)
      .opt("upsampler", up)
      .opt("seed", s.seed)
      .opt("init_std", s.init_std)
      .finish();
  s.upsampler = upsampler_from(up);
  if (s.base_filters == 0 || s.downsampling == 0 || !(s.init_std > 0)) {
    throw DataError("generator: base_filters, downsampling and init_std must be positive");
  }
  return s;
}

json to_json(const nn::DiscriminatorSpec& s) {
  return json{{"base_filters", s.base_filters},
              {"downsampling", s.downsampling},
              {"seed", s.seed},
              {"init_std", s.init_std}};
}

nn::DiscriminatorSpec discriminator_spec_from_json(const json& j) {
  nn::DiscriminatorSpec s;
  StrictReader r(j, "discriminator");
  r.opt("base_filters", s.base_filters)
      .opt("downsampling", s.downsampling)
      .opt("seed", s.seed)
      .opt("init_std", s.init_std)
      .finish();
  if (s.base_filters == 0 || s.downsampling == 0 || !(s.init_std > 0)) {
    throw DataError("discriminator: base_filters, downsampling and init_std must be positive");
  }
  return s;
}

std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace mammogan
