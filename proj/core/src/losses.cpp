#include "derefl/losses.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "derefl/serialize.hpp"

namespace derefl {

using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// FeatureExtractor

namespace {

// VGG-19 convolutions through conv4_1: (in, out) channel pairs at full width,
// with maxpool after conv1_2, conv2_2, conv3_4.
struct VggLayerSpec {
  int in, out;
  bool pool_after;
};
const VggLayerSpec kVgg19Prefix[] = {
    {3, 64, false},    // conv1_1  (tap 1 after relu)
    {64, 64, true},    // conv1_2
    {64, 128, false},  // conv2_1
    {128, 128, true},  // conv2_2
    {128, 256, false}, {256, 256, false}, {256, 256, false},
    {256, 256, true},  // conv3_1..conv3_4
    {256, 512, false}, // conv4_1  (tap 2 after relu)
};

constexpr double kImagenetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImagenetStd[3] = {0.229, 0.224, 0.225};

}  // namespace

FeatureExtractor FeatureExtractor::with_random_weights(std::uint64_t seed, int width_divisor) {
  require(width_divisor >= 1, Errc::bad_config, "width_divisor must be >= 1");
  Rng rng(mix_seed(seed, 0xFEA7u));
  FeatureExtractor ex;
  ex.name_ = "test:" + std::to_string(seed);
  int idx = 0;
  for (const auto& spec : kVgg19Prefix) {
    const int in_c = spec.in == 3 ? 3 : std::max(1, spec.in / width_divisor);
    const int out_c = std::max(1, spec.out / width_divisor);
    Tensor w({out_c, in_c, 3, 3});
    const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * 9.0));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
    ex.convs_.push_back({nn::constant(std::move(w)), nn::constant(Tensor::zeros({out_c}))});
    if (spec.pool_after) ex.pool_after_.push_back(idx);
    ++idx;
  }
  return ex;
}

FeatureExtractor FeatureExtractor::from_file(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::extractor_unavailable,
          "feature extractor weights not found at " + path.string());
  BinaryReader r(path);
  r.expect_magic("DRVGG19");
  const std::uint32_t version = r.u32();
  require(version == 1, Errc::corrupt_data, "unknown DRVGG19 version");
  FeatureExtractor ex;
  ex.name_ = "vgg19:" + path.string();
  int idx = 0;
  for (const auto& spec : kVgg19Prefix) {
    Tensor w({spec.out, spec.in, 3, 3});
    Tensor b({spec.out});
    r.f64_array(w.data(), static_cast<std::size_t>(w.size()));
    r.f64_array(b.data(), static_cast<std::size_t>(b.size()));
    ex.convs_.push_back({nn::constant(std::move(w)), nn::constant(std::move(b))});
    if (spec.pool_after) ex.pool_after_.push_back(idx);
    ++idx;
  }
  return ex;
}

FeatureExtractor FeatureExtractor::from_spec(const std::string& spec) {
  if (spec.rfind("test", 0) == 0) {
    std::uint64_t seed = 17;
    if (spec.size() > 5 && spec[4] == ':') seed = std::stoull(spec.substr(5));
    return with_random_weights(seed);
  }
  if (spec.rfind("vgg19:", 0) == 0) return from_file(spec.substr(6));
  raise(Errc::extractor_unavailable, "unknown feature extractor \"" + spec + "\"");
}

std::array<Var, 2> FeatureExtractor::features(const Var& rgb) const {
  require(rgb->value.ndim() == 3 && rgb->value.dim(0) == 3, Errc::shape_mismatch,
          "feature extractor expects a 3xHxW tensor");
  const int h = rgb->value.dim(1), w = rgb->value.dim(2);
  require(h >= 8 && w >= 8, Errc::too_small, "feature extractor needs at least 8x8 input");

  Tensor scale({3}), shift({3});
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0 / kImagenetStd[c];
    shift[c] = -kImagenetMean[c] / kImagenetStd[c];
  }
  Var cur = nn::channel_affine(rgb, scale, shift);

  const int pad_h = (8 - h % 8) % 8;
  const int pad_w = (8 - w % 8) % 8;
  if (pad_h || pad_w) cur = nn::pad_reflect(cur, 0, pad_h, 0, pad_w);

  std::array<Var, 2> taps;
  std::size_t pool_pos = 0;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    cur = nn::relu(nn::conv2d(cur, convs_[i].w, convs_[i].b, 1, 1));
    if (i == 0) taps[0] = cur;                 // relu1_1
    if (i + 1 == convs_.size()) taps[1] = cur; // relu4_1
    if (pool_pos < pool_after_.size() && pool_after_[pool_pos] == static_cast<int>(i)) {
      cur = nn::maxpool2(cur);
      ++pool_pos;
    }
  }
  return taps;
}

// ---------------------------------------------------------------------------
// losses

Var pixel_loss(const Var& t, const Var& t_hat, const std::optional<Var>& r,
               const std::optional<Var>& r_hat) {
  require(r.has_value() == r_hat.has_value(), Errc::shape_mismatch,
          "reflection pair must be given both-or-neither");
  Var loss = nn::mse_loss(t, t_hat);
  if (r) loss = nn::add(loss, nn::mse_loss(*r, *r_hat));
  return loss;
}

Var feature_loss(const Var& t, const Var& t_hat, const FeatureExtractor& extractor) {
  auto ft = extractor.features(t);
  auto fh = extractor.features(t_hat);
  return nn::add(nn::l1_loss(ft[0], fh[0]), nn::l1_loss(ft[1], fh[1]));
}

Var gradient_loss(const Var& t, const Var& t_hat) {
  Var loss_x = nn::mse_loss(nn::diff_x(t), nn::diff_x(t_hat));
  Var loss_y = nn::mse_loss(nn::diff_y(t), nn::diff_y(t_hat));
  return nn::add(loss_x, loss_y);
}

ImageGradients image_gradient(const ImageRGB& img) {
  nn::NoGradGuard ng;
  Var x = nn::constant(image_to_tensor(img));
  Tensor gx = nn::diff_x(x)->value;
  Tensor gy = nn::diff_y(x)->value;
  ImageGradients out;
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c) {
    GrayMap mx(img.height, img.width), my(img.height, img.width);
    for (std::int64_t i = 0; i < plane; ++i) {
      mx.data[static_cast<std::size_t>(i)] = gx[c * plane + i];
      my.data[static_cast<std::size_t>(i)] = gy[c * plane + i];
    }
    mx.value_min = my.value_min = -1.0;
    mx.value_max = my.value_max = 1.0;
    out.gx[static_cast<std::size_t>(c)] = std::move(mx);
    out.gy[static_cast<std::size_t>(c)] = std::move(my);
  }
  return out;
}

StepLoss step_loss(const Var& t, const Var& t_hat, const std::optional<Var>& r,
                   const std::optional<Var>& r_hat, const FeatureExtractor& extractor,
                   const LossWeights& weights) {
  Var p = pixel_loss(t, t_hat, r, r_hat);
  Var f = feature_loss(t, t_hat, extractor);
  Var g = gradient_loss(t, t_hat);

  StepLoss out;
  out.components.pixel = nn::scalar_value(p);
  out.components.feature = nn::scalar_value(f);
  out.components.gradient = nn::scalar_value(g);
  if (weights.pixel != 1.0) p = nn::scale(p, weights.pixel);
  if (weights.feature != 1.0) f = nn::scale(f, weights.feature);
  if (weights.gradient != 1.0) g = nn::scale(g, weights.gradient);
  out.total = nn::add_all({p, f, g});
  out.components.step_total = nn::scalar_value(out.total);
  return out;
}

StepModelFn identity_step_model() {
  return [](const Var& input) {
    Var r_hat = nn::constant(Tensor::zeros(input->value.shape()));
    return std::make_pair(r_hat, input);
  };
}

namespace {

Tensor clamped_residual(const Tensor& input, const Tensor& transmission) {
  Tensor out(input.shape());
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(input[i] - transmission[i], 0.0, 1.0);
  return out;
}

void check_loss_inputs(const Tensor& ambient, const Tensor& transmission,
                       const std::optional<Tensor>& reflection, int m) {
  require(m >= 1, Errc::invalid_m, "step count M must be >= 1, got " + std::to_string(m));
  require(ambient.same_shape(transmission), Errc::shape_mismatch,
          "ambient/transmission shapes differ");
  if (reflection)
    require(ambient.same_shape(*reflection), Errc::shape_mismatch, "reflection shape differs");
}

}  // namespace

MultiStepResult multi_step_loss(const StepModelFn& model, const Tensor& ambient,
                                const Tensor& transmission,
                                const std::optional<Tensor>& reflection,
                                const FeatureExtractor& extractor, const MultiStepOptions& opt) {
  check_loss_inputs(ambient, transmission, reflection, opt.steps);

  Var t = nn::constant(transmission);
  Var input = nn::constant(ambient);

  MultiStepResult out;
  std::vector<Var> step_totals;
  for (int step = 1; step <= opt.steps; ++step) {
    auto [r_hat, t_hat] = model(input);
    require(t_hat->value.same_shape(transmission), Errc::shape_mismatch,
            "step model changed the output shape");

    const bool supervise_r = opt.reflection_loss_steps == ReflectionSupervision::all_steps ||
                             step == 1;
    std::optional<Var> r_target, r_pred;
    if (supervise_r) {
      Tensor target = (step == 1 && reflection) ? *reflection
                                                : clamped_residual(input->value, transmission);
      r_target = nn::constant(std::move(target));
      r_pred = r_hat;
    }

    StepLoss sl = step_loss(t, t_hat, r_target, r_pred, extractor, opt.weights);
    out.breakdown.per_step.push_back(sl.components);
    step_totals.push_back(sl.total);
    input = t_hat;  // the recursion: output feeds the next step, gradient intact
  }

  out.total = step_totals.size() == 1 ? step_totals[0] : nn::add_all(step_totals);
  out.breakdown.total = nn::scalar_value(out.total);
  require(std::isfinite(out.breakdown.total), Errc::non_finite_loss, "multi-step loss is not finite");
  return out;
}

MultiStepResult repeated_single_step_loss(const StepModelFn& model, const Tensor& ambient,
                                          const Tensor& transmission,
                                          const std::optional<Tensor>& reflection,
                                          const FeatureExtractor& extractor,
                                          const MultiStepOptions& opt) {
  check_loss_inputs(ambient, transmission, reflection, opt.steps);
  MultiStepOptions single = opt;
  single.steps = 1;
  MultiStepResult one = multi_step_loss(model, ambient, transmission, reflection, extractor, single);

  MultiStepResult out;
  out.total = opt.steps == 1 ? one.total : nn::scale(one.total, static_cast<double>(opt.steps));
  LossBreakdown::Step s = one.breakdown.per_step[0];
  s.pixel *= opt.steps;
  s.feature *= opt.steps;
  s.gradient *= opt.steps;
  s.step_total *= opt.steps;
  out.breakdown.per_step.push_back(s);
  out.breakdown.total = nn::scalar_value(out.total);
  return out;
}

std::string loss_jsonl(std::int64_t iter, int epoch, const LossBreakdown& b, double lr) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : b.per_step)
    steps.push_back({{"pixel", s.pixel},
                     {"feat", s.feature},
                     {"grad", s.gradient},
                     {"total", s.step_total}});
  nlohmann::json line = {{"iter", iter}, {"epoch", epoch},     {"M", b.steps()},
                         {"steps", steps}, {"total", b.total}, {"lr", lr}};
  return line.dump();
}

// ---------------------------------------------------------------------------
// conversions

Tensor image_to_tensor(const ImageRGB& img) {
  return Tensor::from({3, img.height, img.width}, img.data);
}

ImageRGB tensor_to_image(const Tensor& t) {
  require(t.ndim() == 3 && t.dim(0) == 3, Errc::shape_mismatch, "expected a 3xHxW tensor");
  ImageRGB img(t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp(t[static_cast<std::int64_t>(i)], 0.0, 1.0);
  return img;
}

Tensor gray_to_tensor(const GrayMap& map) {
  return Tensor::from({1, map.height, map.width}, map.data);
}

}  // namespace derefl
