#pragma once

#include <iosfwd>

#include "derefl/dataset.hpp"
#include "derefl/losses.hpp"
#include "derefl/nn/unet.hpp"

namespace derefl {

// Patchwise discriminator over the 6-channel (condition ⊕ candidate) stack:
// `layers` stride-2 4x4 convs, then two stride-1 4x4 convs (70x70
// receptive-field configuration at layers=3). Output is a grid of logits,
// one per receptive-field patch.
//
// Spatial arithmetic per layer (kernel 4, pad 1):
//   stride 2: out = floor((in - 2) / 2) + 1   (= in/2 for even in)
//   stride 1: out = in - 1
struct DiscriminatorConfig {
  int layers = 3;          // stride-2 convolutions
  int base_channels = 64;  // doubled per layer, capped at 8x
  std::uint64_t seed = 0;

  void validate() const;
  void save(BinaryWriter& w) const;
  static DiscriminatorConfig load(BinaryReader& r);
};

class PatchDiscriminator {
public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(const DiscriminatorConfig& cfg, int in_channels = 6);

  nn::Var forward(const nn::Var& x) const;  // [1, h', w'] logits

  // Closed-form output size of the score grid for an input of (h, w).
  static std::pair<int, int> output_size(const DiscriminatorConfig& cfg, int h, int w);

  const DiscriminatorConfig& config() const { return cfg_; }
  const nn::ParamSet& params() const { return params_; }
  nn::ParamSet& params() { return params_; }

private:
  DiscriminatorConfig cfg_;
  int in_channels_ = 6;
  struct Layer {
    nn::Var w, b, gamma, beta;
    int stride = 2;
    bool norm = true;
    bool act = true;
  };
  std::vector<Layer> layers_;
  nn::ParamSet params_;
};

struct RefGANBundle {
  nn::UNet generator;  // in 3 / out 3, decoder dropout as the noise source
  PatchDiscriminator discriminator;
  double lambda_l1 = 100.0;
};

struct GanTrainConfig {
  int iterations = 200;  // toy default; real runs want far more
  double lr = 2e-4;
  double beta1 = 0.5;
  double lambda_l1 = 100.0;
  int image_size = 64;
  int generator_depth = 5;
  int generator_base_channels = 64;
  double generator_dropout = 0.5;
  DiscriminatorConfig discriminator;
  std::uint64_t seed = 0;

  void validate() const;
};

RefGANBundle init_refgan(const GanTrainConfig& cfg);

// Deterministic in evaluation mode (no dropout).
ImageRGB generator_forward(const RefGANBundle& bundle, const ImageRGB& transmission);

// Patch scores for a (condition, candidate) pair.
GrayMap discriminator_forward(const RefGANBundle& bundle, const ImageRGB& transmission,
                              const ImageRGB& ambient);

struct RefGANLosses {
  double g_loss = 0.0;
  double d_loss = 0.0;
  double l1 = 0.0;  // unweighted mean |G(T) - ambient|
};

// d_loss = ½·[BCE(D(T, ambient), 1) + BCE(D(T, G(T)), 0)]
// g_loss = BCE(D(T, G(T)), 1) + lambda·L1(G(T), ambient)
RefGANLosses refgan_losses(const RefGANBundle& bundle, const ImageRGB& transmission,
                           const ImageRGB& ambient_real);

// Alternating D-step/G-step per sample; seeded and reproducible; JSONL logs.
RefGANBundle train_refgan(const DatasetManifest& pairs_manifest, const GanTrainConfig& cfg,
                          std::ostream& log);

void save_refgan(const RefGANBundle& bundle, const std::filesystem::path& path);  // "REFGAN1"
RefGANBundle load_refgan(const std::filesystem::path& path);

struct SynthJob {
  std::filesystem::path out_dir;
  int count = 1;
  std::uint64_t seed = 0;
  int image_size = 0;  // 0 keeps source size
};

// Draws targets from the source manifest (with replacement once exhausted),
// writes ambient = G(T) plus T under out_dir/{ambient,transmission}/, and
// returns a manifest with provenance=refgan.
DatasetManifest synthesize_dataset(const RefGANBundle& bundle,
                                   const DatasetManifest& source_manifest, const SynthJob& job);

}  // namespace derefl
