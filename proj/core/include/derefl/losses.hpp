#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>

#include "derefl/image.hpp"
#include "derefl/nn/autodiff.hpp"

namespace derefl {

// Fixed-weight VGG-19 convolutional stack through conv4_1 with feature taps
// at relu1_1 and relu4_1. Weights are constants: gradients flow through the
// input image only. `with_random_weights` is the deterministic seeded
// substitute for environments without exported pretrained weights
// (width_divisor narrows every layer for cheap CI runs).
class FeatureExtractor {
public:
  static FeatureExtractor with_random_weights(std::uint64_t seed, int width_divisor = 8);
  static FeatureExtractor from_file(const std::filesystem::path& path);  // "DRVGG19" archive

  // "test[:seed]" | "vgg19:<path>"
  static FeatureExtractor from_spec(const std::string& spec);

  // Applies natural-image mean/std normalization, mirror-pads to a multiple
  // of 8, and returns the two tap activations.
  std::array<nn::Var, 2> features(const nn::Var& rgb) const;

  const std::string& name() const { return name_; }

private:
  struct Conv {
    nn::Var w, b;
  };
  std::vector<Conv> convs_;  // conv1_1 .. conv4_1 in order
  std::vector<int> pool_after_;  // conv indices followed by maxpool
  std::string name_;
};

struct LossWeights {
  double pixel = 1.0;
  double feature = 1.0;
  double gradient = 1.0;
};

enum class ReflectionSupervision { first_step, all_steps };

// Per-step components and the accumulated multi-step total.
struct LossBreakdown {
  struct Step {
    double pixel = 0.0;
    double feature = 0.0;
    double gradient = 0.0;
    double step_total = 0.0;
  };
  std::vector<Step> per_step;
  double total = 0.0;
  int steps() const { return static_cast<int>(per_step.size()); }
};

// ---- individual losses (graph level) ----

// MSE(T, T̂) + MSE(R, R̂); the reflection pair must be given both-or-neither.
nn::Var pixel_loss(const nn::Var& t, const nn::Var& t_hat,
                   const std::optional<nn::Var>& r, const std::optional<nn::Var>& r_hat);

// Sum over the two taps of mean absolute feature difference.
nn::Var feature_loss(const nn::Var& t, const nn::Var& t_hat, const FeatureExtractor& extractor);

// MSE of forward-difference gradients, x and y directions summed.
nn::Var gradient_loss(const nn::Var& t, const nn::Var& t_hat);

struct ImageGradients {
  std::array<GrayMap, 3> gx;
  std::array<GrayMap, 3> gy;
};
ImageGradients image_gradient(const ImageRGB& img);

struct StepLoss {
  nn::Var total;
  LossBreakdown::Step components;
};
StepLoss step_loss(const nn::Var& t, const nn::Var& t_hat,
                   const std::optional<nn::Var>& r, const std::optional<nn::Var>& r_hat,
                   const FeatureExtractor& extractor, const LossWeights& weights = {});

// ---- multi-step accumulation ----

// One refinement step: input ambient estimate -> (reflection_hat, target_hat).
using StepModelFn = std::function<std::pair<nn::Var, nn::Var>(const nn::Var& input)>;

// Stub whose target prediction is its input and reflection prediction is
// zero; the fixed point of the recursion, used by tests and baselines.
StepModelFn identity_step_model();

struct MultiStepOptions {
  int steps = 2;  // M
  LossWeights weights;
  ReflectionSupervision reflection_loss_steps = ReflectionSupervision::all_steps;
};

struct MultiStepResult {
  nn::Var total;
  LossBreakdown breakdown;
};

// I_1 = ambient; per step t: (R̂_t, T̂_t) = model(I_t), reflection target
// R_t = clamp(I_t - T, 0, 1) (the provided ground-truth R at t = 1 when
// present), I_{t+1} = T̂_t. Total is the sum over steps; gradient flows
// through every step.
MultiStepResult multi_step_loss(const StepModelFn& model, const nn::Tensor& ambient,
                                const nn::Tensor& transmission,
                                const std::optional<nn::Tensor>& reflection,
                                const FeatureExtractor& extractor, const MultiStepOptions& opt);

// The negative-control baseline: a single step whose loss is multiplied by M.
MultiStepResult repeated_single_step_loss(const StepModelFn& model, const nn::Tensor& ambient,
                                          const nn::Tensor& transmission,
                                          const std::optional<nn::Tensor>& reflection,
                                          const FeatureExtractor& extractor,
                                          const MultiStepOptions& opt);

// One JSON line per training iteration.
std::string loss_jsonl(std::int64_t iter, int epoch, const LossBreakdown& b, double lr);

// ---- tensor/image conversion helpers ----
nn::Tensor image_to_tensor(const ImageRGB& img);
ImageRGB tensor_to_image(const nn::Tensor& t);   // clamps into [0,1]
nn::Tensor gray_to_tensor(const GrayMap& map);   // [1, H, W]

}  // namespace derefl
