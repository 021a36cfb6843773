#include "derefl/nn/unet.hpp"

#include <cmath>

namespace derefl::nn {

Var ParamSet::add(const std::string& name, Tensor init) {
  Var v = param(std::move(init));
  items_.emplace_back(name, v);
  return v;
}

std::vector<Var> ParamSet::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [name, v] : items_) out.push_back(v);
  return out;
}

std::int64_t ParamSet::count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : items_) n += v->value.size();
  return n;
}

void ParamSet::save(BinaryWriter& w) const {
  w.u64(items_.size());
  for (const auto& [name, v] : items_) {
    w.str(name);
    const auto& shape = v->value.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.f64_array(v->value.data(), static_cast<std::size_t>(v->value.size()));
  }
}

void ParamSet::load(BinaryReader& r) {
  const std::uint64_t n = r.u64();
  require(n == items_.size(), Errc::corrupt_data, "parameter count mismatch in archive");
  for (auto& [name, v] : items_) {
    const std::string got = r.str();
    require(got == name, Errc::corrupt_data,
            "parameter order mismatch: expected \"" + name + "\", archive has \"" + got + "\"");
    const std::uint32_t nd = r.u32();
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    require(shape == v->value.shape(), Errc::corrupt_data, "parameter shape mismatch for " + name);
    r.f64_array(v->value.data(), static_cast<std::size_t>(v->value.size()));
  }
}

void UNetConfig::validate() const {
  require(depth >= 2, Errc::bad_config, "unet depth must be >= 2");
  require(base_channels >= 4, Errc::bad_config, "unet base_channels must be >= 4");
  require(in_channels >= 1 && out_channels >= 1, Errc::bad_config, "unet channel counts must be >= 1");
  require(decoder_dropout >= 0.0 && decoder_dropout < 1.0, Errc::bad_config,
          "decoder_dropout must be in [0,1)");
}

void UNetConfig::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(in_channels));
  w.u32(static_cast<std::uint32_t>(out_channels));
  w.u32(static_cast<std::uint32_t>(depth));
  w.u32(static_cast<std::uint32_t>(base_channels));
  w.u64(seed);
  w.f64(decoder_dropout);
}

UNetConfig UNetConfig::load(BinaryReader& r) {
  UNetConfig c;
  c.in_channels = static_cast<int>(r.u32());
  c.out_channels = static_cast<int>(r.u32());
  c.depth = static_cast<int>(r.u32());
  c.base_channels = static_cast<int>(r.u32());
  c.seed = r.u64();
  c.decoder_dropout = r.f64();
  c.validate();
  return c;
}

namespace {

Tensor he_conv(Rng& rng, int out_c, int in_c, int k) {
  Tensor w({out_c, in_c, k, k});
  const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

}  // namespace

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg.seed, 0xC0DEu));

  auto make_conv = [&](const std::string& name, int in_c, int out_c, int k) {
    ConvLayer l;
    l.w = params_.add(name + ".w", he_conv(rng, out_c, in_c, k));
    l.b = params_.add(name + ".b", Tensor::zeros({out_c}));
    return l;
  };
  auto make_norm = [&](const std::string& name, int c) {
    NormLayer l;
    l.gamma = params_.add(name + ".gamma", Tensor::full({c}, 1.0));
    l.beta = params_.add(name + ".beta", Tensor::zeros({c}));
    return l;
  };
  auto make_block = [&](const std::string& name, int in_c, int out_c) {
    Block b;
    b.conv1 = make_conv(name + ".conv1", in_c, out_c, 3);
    b.norm1 = make_norm(name + ".norm1", out_c);
    b.conv2 = make_conv(name + ".conv2", out_c, out_c, 3);
    b.norm2 = make_norm(name + ".norm2", out_c);
    return b;
  };

  const auto level_c = [&](int i) { return cfg_.base_channels << i; };

  int prev = cfg_.in_channels;
  for (int i = 0; i < cfg_.depth; ++i) {
    encoder_.push_back(make_block("enc" + std::to_string(i), prev, level_c(i)));
    prev = level_c(i);
  }
  for (int i = cfg_.depth - 2; i >= 0; --i) {
    up_convs_.push_back(make_conv("up" + std::to_string(i), level_c(i + 1), level_c(i), 3));
    up_norms_.push_back(make_norm("up" + std::to_string(i) + ".norm", level_c(i)));
    decoder_.push_back(make_block("dec" + std::to_string(i), 2 * level_c(i), level_c(i)));
  }
  head_ = make_conv("head", cfg_.base_channels, cfg_.out_channels, 3);
}

Var UNet::conv_in_act(const ConvLayer& conv, const NormLayer& norm, const Var& x,
                      bool encoder) const {
  Var h = conv2d(x, conv.w, conv.b, 1, 1);
  h = instance_norm(h, norm.gamma, norm.beta);
  return encoder ? leaky_relu(h, 0.2) : relu(h);
}

Var UNet::run_block(const Block& blk, const Var& x, bool encoder, Rng* dropout_rng) const {
  Var h = conv_in_act(blk.conv1, blk.norm1, x, encoder);
  h = conv_in_act(blk.conv2, blk.norm2, h, encoder);
  if (!encoder && dropout_rng && cfg_.decoder_dropout > 0.0)
    h = dropout(h, cfg_.decoder_dropout, *dropout_rng);
  return h;
}

Var UNet::forward(const Var& x, Rng* dropout_rng) const {
  require(x->value.ndim() == 3, Errc::shape_mismatch, "unet input must be CHW");
  require(x->value.dim(0) == cfg_.in_channels, Errc::shape_mismatch,
          "unet expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
              std::to_string(x->value.dim(0)));
  const int h = x->value.dim(1), w = x->value.dim(2);
  require(h >= 8 && w >= 8, Errc::shape_mismatch, "unet input must be at least 8x8");

  const int factor = 1 << (cfg_.depth - 1);
  const int pad_h = (factor - h % factor) % factor;
  const int pad_w = (factor - w % factor) % factor;
  Var cur = (pad_h || pad_w) ? pad_reflect(x, 0, pad_h, 0, pad_w) : x;

  std::vector<Var> skips;
  for (int i = 0; i < cfg_.depth - 1; ++i) {
    cur = run_block(encoder_[i], cur, /*encoder=*/true, nullptr);
    skips.push_back(cur);
    cur = maxpool2(cur);
  }
  cur = run_block(encoder_[cfg_.depth - 1], cur, /*encoder=*/true, nullptr);

  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const int level = cfg_.depth - 2 - static_cast<int>(d);
    cur = upsample_nearest2(cur);
    cur = conv2d(cur, up_convs_[d].w, up_convs_[d].b, 1, 1);
    cur = relu(instance_norm(cur, up_norms_[d].gamma, up_norms_[d].beta));
    cur = concat_channels(skips[static_cast<std::size_t>(level)], cur);
    cur = run_block(decoder_[d], cur, /*encoder=*/false, dropout_rng);
  }

  cur = sigmoid(conv2d(cur, head_.w, head_.b, 1, 1));
  if (pad_h || pad_w) cur = crop2d(cur, 0, 0, h, w);
  return cur;
}

}  // namespace derefl::nn
