#pragma once

#include <iosfwd>
#include <optional>

#include "derefl/dataset.hpp"
#include "derefl/depth.hpp"
#include "derefl/model.hpp"

namespace derefl {

// Adam over a fixed parameter list; moment buffers serialize for exact
// checkpoint/resume behaviour.
class Adam {
public:
  Adam() = default;
  Adam(std::vector<nn::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();  // consumes param->grad

  void save(BinaryWriter& w) const;
  void load(BinaryReader& r);

private:
  std::vector<nn::Var> params_;
  std::vector<nn::Tensor> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

struct UpgradePolicy {
  enum class Mode { plateau, fixed_epoch };
  Mode mode = Mode::plateau;
  int patience = 5;            // validations
  double min_delta_db = 0.05;  // PSNR improvement below this counts as flat
  int epoch = 0;               // fixed_epoch threshold
};

enum class LossVariant { multi_step, repeated_single };
enum class AuxFeature { rdm, depth, none };

struct TrainConfig {
  int epochs = 100;
  double lr0 = 1e-4;
  int batch_size = 1;
  int initial_m = 2;
  int upgraded_m = 3;
  UpgradePolicy upgrade;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  ReflectionSupervision reflection_loss_steps = ReflectionSupervision::all_steps;
  LossVariant loss_variant = LossVariant::multi_step;
  AuxFeature aux_feature = AuxFeature::rdm;
  int k = 4;
  int image_size = 336;  // training/validation resolution; 0 keeps native size
  int unet_depth = 5;
  int base_channels = 64;
  bool augment_enabled = false;
  int augment_crop = 0;
  double hflip_prob = 0.5;
  std::string provenance_filter;  // comma-separated allow list; empty = all
  std::string feature_extractor = "test:17";

  void validate() const;
};

struct ValRecord {
  int epoch = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct TrainState {
  int epoch = 0;
  std::int64_t global_iter = 0;
  int current_m = 0;
  double lr = 0.0;
  double best_val_psnr = -1.0;
  std::vector<ValRecord> val_history;
  std::string rng_state;
};

// lr0 * (1 + cos(pi * epoch / total_epochs)) / 2
double cosine_lr(int epoch, int total_epochs, double lr0);

// plateau: fires when the best validation PSNR improved by less than
// min_delta over the trailing `patience` validations (needs patience+1
// records). fixed_epoch: fires once state.epoch >= policy.epoch.
bool should_upgrade_steps(const TrainState& state, const UpgradePolicy& policy);

// Single-channel auxiliary plane fed alongside the ambient image.
nn::Tensor aux_plane(const ImageRGB& ambient, AuxFeature mode, const DepthBackend& backend, int k);

struct EvalOptions {
  int image_size = 0;  // 0 = native
  AuxFeature aux_feature = AuxFeature::rdm;
};

// Single-pass inference over the manifest; returns (mean PSNR, mean SSIM).
std::pair<double, double> validate(const ModelBundle& bundle, const DatasetManifest& manifest,
                                   const DepthBackend& backend, const EvalOptions& opt = {});

// The optimization loop: simultaneous R-CNN/T-CNN updates with the
// multi-step loss, cosine-annealed lr, M upgrade policy, per-epoch
// validation, best/last checkpointing. Fully reproducible from
// (config.seed, manifests). `resume_from` restores weights, optimizer
// moments, and RNG from a "last" checkpoint written by a previous run.
TrainState train(ModelBundle& bundle, const DatasetManifest& train_manifest,
                 const DatasetManifest& val_manifest, const TrainConfig& cfg,
                 const DepthBackend& backend, std::ostream& log,
                 const std::filesystem::path& checkpoint_dir,
                 const std::optional<std::filesystem::path>& resume_from = {});

}  // namespace derefl
