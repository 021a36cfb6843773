#include "derefl/refgan.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "derefl/trainer.hpp"

namespace derefl {

using nn::Tensor;
using nn::Var;

void DiscriminatorConfig::validate() const {
  require(layers >= 1, Errc::bad_config, "discriminator needs at least one stride-2 layer");
  require(base_channels >= 4, Errc::bad_config, "discriminator base_channels must be >= 4");
}

void DiscriminatorConfig::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(layers));
  w.u32(static_cast<std::uint32_t>(base_channels));
  w.u64(seed);
}

DiscriminatorConfig DiscriminatorConfig::load(BinaryReader& r) {
  DiscriminatorConfig c;
  c.layers = static_cast<int>(r.u32());
  c.base_channels = static_cast<int>(r.u32());
  c.seed = r.u64();
  c.validate();
  return c;
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& cfg, int in_channels)
    : cfg_(cfg), in_channels_(in_channels) {
  cfg_.validate();
  Rng rng(mix_seed(cfg.seed, 0xD15Cu));

  auto channels_at = [&](int i) { return cfg_.base_channels * (1 << std::min(i, 3)); };
  auto add_layer = [&](const std::string& name, int in_c, int out_c, int stride, bool norm,
                       bool act) {
    Layer l;
    Tensor w({out_c, in_c, 4, 4});
    const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * 16.0));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
    l.w = params_.add(name + ".w", std::move(w));
    l.b = params_.add(name + ".b", Tensor::zeros({out_c}));
    if (norm) {
      l.gamma = params_.add(name + ".gamma", Tensor::full({out_c}, 1.0));
      l.beta = params_.add(name + ".beta", Tensor::zeros({out_c}));
    }
    l.stride = stride;
    l.norm = norm;
    l.act = act;
    layers_.push_back(std::move(l));
  };

  int prev = in_channels_;
  for (int i = 0; i < cfg_.layers; ++i) {
    // first layer unnormalized, per the usual patch-discriminator recipe
    add_layer("d" + std::to_string(i), prev, channels_at(i), 2, i > 0, true);
    prev = channels_at(i);
  }
  add_layer("pre", prev, channels_at(cfg_.layers), 1, true, true);
  add_layer("out", channels_at(cfg_.layers), 1, 1, false, false);
}

std::pair<int, int> PatchDiscriminator::output_size(const DiscriminatorConfig& cfg, int h, int w) {
  auto step = [](int s, int stride) { return (s + 2 - 4) / stride + 1; };
  for (int i = 0; i < cfg.layers; ++i) {
    h = step(h, 2);
    w = step(w, 2);
  }
  for (int i = 0; i < 2; ++i) {
    h = step(h, 1);
    w = step(w, 1);
  }
  return {h, w};
}

Var PatchDiscriminator::forward(const Var& x) const {
  require(x->value.ndim() == 3 && x->value.dim(0) == in_channels_, Errc::shape_mismatch,
          "discriminator expects " + std::to_string(in_channels_) + " input channels");
  Var cur = x;
  for (const Layer& l : layers_) {
    cur = nn::conv2d(cur, l.w, l.b, l.stride, 1);
    if (l.norm) cur = nn::instance_norm(cur, l.gamma, l.beta);
    if (l.act) cur = nn::leaky_relu(cur, 0.2);
  }
  return cur;
}

void GanTrainConfig::validate() const {
  require(iterations >= 1, Errc::bad_config, "gan iterations must be >= 1");
  require(lr > 0.0, Errc::bad_config, "gan lr must be positive");
  require(lambda_l1 >= 0.0, Errc::bad_config, "lambda_l1 must be >= 0");
  require(image_size == 0 || image_size >= 8, Errc::bad_config, "gan image_size must be 0 or >= 8");
  discriminator.validate();
}

RefGANBundle init_refgan(const GanTrainConfig& cfg) {
  cfg.validate();
  RefGANBundle b;
  nn::UNetConfig gen_cfg;
  gen_cfg.in_channels = 3;
  gen_cfg.out_channels = 3;
  gen_cfg.depth = cfg.generator_depth;
  gen_cfg.base_channels = cfg.generator_base_channels;
  gen_cfg.seed = mix_seed(cfg.seed, 0x6Eu);
  gen_cfg.decoder_dropout = cfg.generator_dropout;
  b.generator = nn::UNet(gen_cfg);

  DiscriminatorConfig disc_cfg = cfg.discriminator;
  disc_cfg.seed = mix_seed(cfg.seed, 0xD1u);
  b.discriminator = PatchDiscriminator(disc_cfg);
  b.lambda_l1 = cfg.lambda_l1;
  return b;
}

ImageRGB generator_forward(const RefGANBundle& bundle, const ImageRGB& transmission) {
  nn::NoGradGuard ng;
  Var out = bundle.generator.forward(nn::constant(image_to_tensor(transmission)));
  return tensor_to_image(out->value);
}

GrayMap discriminator_forward(const RefGANBundle& bundle, const ImageRGB& transmission,
                              const ImageRGB& ambient) {
  require(transmission.same_shape(ambient), Errc::shape_mismatch,
          "discriminator pair shapes differ");
  nn::NoGradGuard ng;
  Var x = nn::concat_channels(nn::constant(image_to_tensor(transmission)),
                              nn::constant(image_to_tensor(ambient)));
  Tensor scores = bundle.discriminator.forward(x)->value;
  GrayMap out(scores.dim(1), scores.dim(2));
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = scores[static_cast<std::int64_t>(i)];
  const auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
  out.value_min = *lo;
  out.value_max = *hi;
  return out;
}

namespace {

struct GanStepLosses {
  Var d_loss, g_loss;
  double l1 = 0.0;
};

GanStepLosses gan_losses_graph(const RefGANBundle& bundle, const Var& t, const Var& ambient_real,
                               Rng* dropout_rng) {
  Var fake = bundle.generator.forward(t, dropout_rng);

  Var d_real = bundle.discriminator.forward(nn::concat_channels(t, ambient_real));
  Var d_fake_det = bundle.discriminator.forward(nn::concat_channels(t, nn::detach(fake)));
  GanStepLosses out;
  out.d_loss = nn::scale(nn::add(nn::bce_with_logits(d_real, 1.0),
                                 nn::bce_with_logits(d_fake_det, 0.0)),
                         0.5);

  Var d_fake = bundle.discriminator.forward(nn::concat_channels(t, fake));
  Var l1 = nn::l1_loss(fake, ambient_real);
  out.l1 = nn::scalar_value(l1);
  out.g_loss = nn::add(nn::bce_with_logits(d_fake, 1.0), nn::scale(l1, bundle.lambda_l1));
  return out;
}

}  // namespace

RefGANLosses refgan_losses(const RefGANBundle& bundle, const ImageRGB& transmission,
                           const ImageRGB& ambient_real) {
  require(transmission.same_shape(ambient_real), Errc::shape_mismatch,
          "transmission/ambient shapes differ");
  nn::NoGradGuard ng;
  GanStepLosses g = gan_losses_graph(bundle, nn::constant(image_to_tensor(transmission)),
                                     nn::constant(image_to_tensor(ambient_real)), nullptr);
  return {nn::scalar_value(g.g_loss), nn::scalar_value(g.d_loss), g.l1};
}

RefGANBundle train_refgan(const DatasetManifest& pairs_manifest, const GanTrainConfig& cfg,
                          std::ostream& log) {
  cfg.validate();
  validate_manifest(pairs_manifest);

  RefGANBundle bundle = init_refgan(cfg);
  Adam opt_g(bundle.generator.param_vars(), cfg.lr, cfg.beta1);
  Adam opt_d(bundle.discriminator.params().vars(), cfg.lr, cfg.beta1);

  // preload once; toy sets are small and iteration order must be seed-driven
  std::vector<TrainSample> samples;
  {
    SampleStream stream(pairs_manifest, 0, /*shuffle=*/false);
    while (stream.has_next()) {
      TrainSample s = stream.next();
      if (cfg.image_size > 0) {
        s.ambient = resize_bilinear(s.ambient, cfg.image_size, cfg.image_size);
        s.transmission = resize_bilinear(s.transmission, cfg.image_size, cfg.image_size);
      }
      samples.push_back(std::move(s));
    }
  }

  Rng order_rng(mix_seed(cfg.seed, 0x0Du));
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const TrainSample& s = samples[order_rng.uniform_index(samples.size())];
    Var t = nn::constant(image_to_tensor(s.transmission));
    Var a = nn::constant(image_to_tensor(s.ambient));
    Rng dropout_rng(mix_seed(cfg.seed, 0xD0u, static_cast<std::uint64_t>(iter)));

    GanStepLosses losses = gan_losses_graph(bundle, t, a, &dropout_rng);
    const double d_val = nn::scalar_value(losses.d_loss);
    const double g_val = nn::scalar_value(losses.g_loss);
    require(std::isfinite(d_val) && std::isfinite(g_val), Errc::non_finite_loss,
            "gan iteration " + std::to_string(iter));

    opt_d.zero_grad();
    opt_g.zero_grad();
    nn::backward(losses.d_loss);
    opt_d.step();

    opt_d.zero_grad();
    opt_g.zero_grad();
    nn::backward(losses.g_loss);
    opt_g.step();
    opt_d.zero_grad();  // discard discriminator grads picked up from g_loss

    log << nlohmann::json(
               {{"iter", iter}, {"g_loss", g_val}, {"d_loss", d_val}, {"l1", losses.l1}})
               .dump()
        << "\n";
  }
  log.flush();
  return bundle;
}

namespace {
constexpr char kGanMagic[] = "REFGAN1";
}

void save_refgan(const RefGANBundle& bundle, const std::filesystem::path& path) {
  BinaryWriter w(path);
  w.magic(kGanMagic);
  w.u32(1);
  w.f64(bundle.lambda_l1);
  bundle.generator.config().save(w);
  bundle.generator.params().save(w);
  bundle.discriminator.config().save(w);
  bundle.discriminator.params().save(w);
  w.close();
}

RefGANBundle load_refgan(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kGanMagic);
  require(r.u32() == 1, Errc::corrupt_data, "unsupported refgan archive version");
  RefGANBundle b;
  b.lambda_l1 = r.f64();
  nn::UNetConfig gen_cfg = nn::UNetConfig::load(r);
  b.generator = nn::UNet(gen_cfg);
  b.generator.params().load(r);
  DiscriminatorConfig disc_cfg = DiscriminatorConfig::load(r);
  b.discriminator = PatchDiscriminator(disc_cfg);
  b.discriminator.params().load(r);
  return b;
}

DatasetManifest synthesize_dataset(const RefGANBundle& bundle,
                                   const DatasetManifest& source_manifest, const SynthJob& job) {
  require(!source_manifest.entries.empty(), Errc::insufficient_sources,
          "source manifest has no entries");
  require(job.count >= 1, Errc::bad_config, "synthesis count must be >= 1");
  validate_manifest(source_manifest);

  namespace fs = std::filesystem;
  fs::create_directories(job.out_dir / "ambient");
  fs::create_directories(job.out_dir / "transmission");

  DatasetManifest out;
  out.root = job.out_dir;
  out.split = Split::train;

  Rng pick_rng(mix_seed(job.seed, 0x57u));
  for (int i = 0; i < job.count; ++i) {
    const ManifestEntry& src =
        source_manifest.entries[pick_rng.uniform_index(source_manifest.entries.size())];
    ImageRGB target = load_image(source_manifest.root / src.transmission);
    if (job.image_size > 0) target = resize_bilinear(target, job.image_size, job.image_size);

    // dropout at inference is the pix2pix noise source; seeded per item
    Rng dropout_rng(mix_seed(job.seed, 0x5Du, static_cast<std::uint64_t>(i)));
    nn::NoGradGuard ng;
    Var gen = bundle.generator.forward(nn::constant(image_to_tensor(target)), &dropout_rng);
    ImageRGB ambient = tensor_to_image(gen->value);

    char id[32];
    std::snprintf(id, sizeof(id), "refgan-%06d", i);
    save_image(ambient, job.out_dir / "ambient" / (std::string(id) + ".png"));
    save_image(target, job.out_dir / "transmission" / (std::string(id) + ".png"));

    ManifestEntry e;
    e.id = id;
    e.ambient = std::string("ambient/") + id + ".png";
    e.transmission = std::string("transmission/") + id + ".png";
    e.provenance = Provenance::refgan;
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace derefl
