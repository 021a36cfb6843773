#include "derefl/model.hpp"

namespace derefl {

using nn::Tensor;
using nn::Var;

std::vector<Var> ModelBundle::all_params() const {
  std::vector<Var> out = rcnn.param_vars();
  for (Var& v : tcnn.param_vars()) out.push_back(std::move(v));
  return out;
}

ModelBundle init_model(nn::UNetConfig rcnn_config, nn::UNetConfig tcnn_config, int k,
                       std::uint64_t seed) {
  require(rcnn_config.in_channels == 4 && rcnn_config.out_channels == 3, Errc::bad_config,
          "R-CNN must take 4 channels (ambient + aux) and emit 3");
  require(tcnn_config.in_channels == 7 && tcnn_config.out_channels == 3, Errc::bad_config,
          "T-CNN must take 7 channels (ambient + R̂ + aux) and emit 3");
  require(k >= 2, Errc::invalid_k, "k must be >= 2");

  rcnn_config.seed = mix_seed(seed, 0x12u);
  tcnn_config.seed = mix_seed(seed, 0x34u);
  ModelBundle b;
  b.rcnn = nn::UNet(rcnn_config);
  b.tcnn = nn::UNet(tcnn_config);
  b.k = k;
  return b;
}

ModelBundle default_model(int k, int base_channels, int depth, std::uint64_t seed) {
  nn::UNetConfig rcnn{4, 3, depth, base_channels, 0, 0.0};
  nn::UNetConfig tcnn{7, 3, depth, base_channels, 0, 0.0};
  return init_model(rcnn, tcnn, k, seed);
}

Var rcnn_forward_var(const ModelBundle& bundle, const Var& ambient, const Var& aux) {
  return bundle.rcnn.forward(nn::concat_channels(ambient, aux));
}

Var tcnn_forward_var(const ModelBundle& bundle, const Var& ambient, const Var& reflection_hat,
                     const Var& aux) {
  // channel order is fixed: (ambient, R̂, aux)
  Var x = nn::concat_channels(nn::concat_channels(ambient, reflection_hat), aux);
  return bundle.tcnn.forward(x);
}

std::pair<Var, Var> model_forward_vars(const ModelBundle& bundle, const Var& ambient,
                                       const Var& aux) {
  Var r_hat = rcnn_forward_var(bundle, ambient, aux);
  Var t_hat = tcnn_forward_var(bundle, ambient, r_hat, aux);
  return {r_hat, t_hat};
}

namespace {

void check_rdm(const ImageRGB& ambient, const RangedDepthMap& rdm) {
  require(rdm.height == ambient.height && rdm.width == ambient.width, Errc::shape_mismatch,
          "RDM shape does not match the ambient image");
}

}  // namespace

ImageRGB rcnn_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                      const RangedDepthMap& rdm) {
  check_rdm(ambient, rdm);
  nn::NoGradGuard ng;
  Var out = rcnn_forward_var(bundle, nn::constant(image_to_tensor(ambient)),
                             nn::constant(gray_to_tensor(rdm.encoding())));
  return tensor_to_image(out->value);
}

ImageRGB tcnn_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                      const ImageRGB& reflection_hat, const RangedDepthMap& rdm) {
  check_rdm(ambient, rdm);
  require(ambient.same_shape(reflection_hat), Errc::shape_mismatch,
          "reflection estimate shape differs from ambient");
  nn::NoGradGuard ng;
  Var out = tcnn_forward_var(bundle, nn::constant(image_to_tensor(ambient)),
                             nn::constant(image_to_tensor(reflection_hat)),
                             nn::constant(gray_to_tensor(rdm.encoding())));
  return tensor_to_image(out->value);
}

std::pair<ImageRGB, ImageRGB> model_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                                            const RangedDepthMap& rdm) {
  check_rdm(ambient, rdm);
  nn::NoGradGuard ng;
  auto [r_hat, t_hat] = model_forward_vars(bundle, nn::constant(image_to_tensor(ambient)),
                                           nn::constant(gray_to_tensor(rdm.encoding())));
  return {tensor_to_image(r_hat->value), tensor_to_image(t_hat->value)};
}

StepModelFn step_model(const ModelBundle& bundle, Tensor aux) {
  Var aux_var = nn::constant(std::move(aux));
  return [&bundle, aux_var](const Var& input) {
    return model_forward_vars(bundle, input, aux_var);
  };
}

MultiStepResult multi_step_loss(const ModelBundle& bundle, const ImageRGB& ambient,
                                const RangedDepthMap& rdm, const ImageRGB& transmission,
                                const std::optional<ImageRGB>& reflection,
                                const FeatureExtractor& extractor, const MultiStepOptions& opt) {
  check_rdm(ambient, rdm);
  std::optional<Tensor> r;
  if (reflection) r = image_to_tensor(*reflection);
  return multi_step_loss(step_model(bundle, gray_to_tensor(rdm.encoding())),
                         image_to_tensor(ambient), image_to_tensor(transmission), r, extractor,
                         opt);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kMagic[] = "DEREFL1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path,
                     const std::function<void(BinaryWriter&)>& trainer_section) {
  BinaryWriter w(path);
  w.magic(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(bundle.k));
  w.u32(static_cast<std::uint32_t>(bundle.epoch));
  w.u32(static_cast<std::uint32_t>(bundle.current_m));
  w.str(bundle.meta);
  bundle.rcnn.config().save(w);
  bundle.tcnn.config().save(w);
  bundle.rcnn.params().save(w);
  bundle.tcnn.params().save(w);
  w.u8(trainer_section ? 1 : 0);
  if (trainer_section) trainer_section(w);
  w.close();
}

ModelBundle load_checkpoint(const std::filesystem::path& path,
                            const std::function<void(BinaryReader&)>& trainer_section) {
  BinaryReader r(path);
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  require(version == kVersion, Errc::corrupt_data,
          "unsupported checkpoint version " + std::to_string(version));
  ModelBundle b;
  b.k = static_cast<int>(r.u32());
  b.epoch = static_cast<int>(r.u32());
  b.current_m = static_cast<int>(r.u32());
  b.meta = r.str();
  nn::UNetConfig rcnn_cfg = nn::UNetConfig::load(r);
  nn::UNetConfig tcnn_cfg = nn::UNetConfig::load(r);
  b.rcnn = nn::UNet(rcnn_cfg);
  b.tcnn = nn::UNet(tcnn_cfg);
  b.rcnn.params().load(r);
  b.tcnn.params().load(r);
  const std::uint8_t has_trainer = r.u8();
  if (trainer_section) {
    require(has_trainer == 1, Errc::corrupt_data, "checkpoint has no trainer state: " + path.string());
    trainer_section(r);
  }
  return b;
}

}  // namespace derefl
