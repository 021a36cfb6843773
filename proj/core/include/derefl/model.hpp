#pragma once

#include <filesystem>
#include <utility>

#include "derefl/depth.hpp"
#include "derefl/losses.hpp"
#include "derefl/nn/unet.hpp"

namespace derefl {

// The two jointly trained UNets: R-CNN predicts the reflection from
// (ambient, aux); T-CNN predicts the target from (ambient, R̂, aux). aux is
// the single-channel ranged-depth encoding.
struct ModelBundle {
  nn::UNet rcnn;
  nn::UNet tcnn;
  int k = 4;           // RDM bins the model was built for
  int epoch = 0;       // last completed training epoch
  int current_m = 0;   // multi-step M in effect (0 = untrained)
  std::string meta;    // free-form provenance record

  std::vector<nn::Var> all_params() const;
};

// Validates the channel contract (R-CNN 3+1 -> 3, T-CNN 3+3+1 -> 3) and
// initializes both networks deterministically from `seed`.
ModelBundle init_model(nn::UNetConfig rcnn_config, nn::UNetConfig tcnn_config, int k,
                       std::uint64_t seed);

ModelBundle default_model(int k = 4, int base_channels = 64, int depth = 5,
                          std::uint64_t seed = 0);

// ---- graph-level forwards (aux is a [1,H,W] tensor) ----
nn::Var rcnn_forward_var(const ModelBundle& bundle, const nn::Var& ambient, const nn::Var& aux);
nn::Var tcnn_forward_var(const ModelBundle& bundle, const nn::Var& ambient,
                         const nn::Var& reflection_hat, const nn::Var& aux);
std::pair<nn::Var, nn::Var> model_forward_vars(const ModelBundle& bundle, const nn::Var& ambient,
                                               const nn::Var& aux);

// ---- image-level forwards (no-grad evaluation) ----
ImageRGB rcnn_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                      const RangedDepthMap& rdm);
ImageRGB tcnn_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                      const ImageRGB& reflection_hat, const RangedDepthMap& rdm);
std::pair<ImageRGB, ImageRGB> model_forward(const ModelBundle& bundle, const ImageRGB& ambient,
                                            const RangedDepthMap& rdm);

// Adapter binding the bundle and a fixed aux plane into the multi-step
// recursion; the aux channel is the step-1 plane reused at every step.
StepModelFn step_model(const ModelBundle& bundle, nn::Tensor aux);

// Spec-shaped convenience over losses::multi_step_loss.
MultiStepResult multi_step_loss(const ModelBundle& bundle, const ImageRGB& ambient,
                                const RangedDepthMap& rdm, const ImageRGB& transmission,
                                const std::optional<ImageRGB>& reflection,
                                const FeatureExtractor& extractor, const MultiStepOptions& opt);

// ---- checkpoints (magic "DEREFL1") ----
// An optional trailing trainer section (flag byte + payload) carries
// optimizer/RNG state; plain loads ignore it.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path,
                     const std::function<void(BinaryWriter&)>& trainer_section = {});
ModelBundle load_checkpoint(const std::filesystem::path& path,
                            const std::function<void(BinaryReader&)>& trainer_section = {});

}  // namespace derefl
