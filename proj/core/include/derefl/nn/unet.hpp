#pragma once

#include <string>
#include <vector>

#include "derefl/nn/autodiff.hpp"
#include "derefl/serialize.hpp"

namespace derefl::nn {

// Ordered named parameter leaves; order is the serialization order.
class ParamSet {
public:
  Var add(const std::string& name, Tensor init);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;
  std::int64_t count() const;  // total scalar parameters
  void save(BinaryWriter& w) const;
  void load(BinaryReader& r);

private:
  std::vector<std::pair<std::string, Var>> items_;
};

struct UNetConfig {
  int in_channels = 3;
  int out_channels = 3;
  int depth = 5;           // encoder levels including the bottleneck
  int base_channels = 64;  // doubled per level
  std::uint64_t seed = 0;
  double decoder_dropout = 0.0;  // > 0 only for the RefGAN generator

  void validate() const;
  void save(BinaryWriter& w) const;
  static UNetConfig load(BinaryReader& r);
};

// Encoder/decoder with skip concatenations: per level two 3x3 convs with
// instance norm, LeakyReLU(0.2) down / ReLU up, maxpool-2 downsampling,
// nearest-neighbour upsampling, sigmoid head. Arbitrary input sizes are
// mirror-padded to the next multiple of 2^(depth-1) and cropped back.
class UNet {
public:
  UNet() = default;
  explicit UNet(const UNetConfig& cfg);

  // dropout_rng enables decoder dropout (training-time stochasticity for the
  // GAN generator); null means deterministic evaluation behaviour.
  Var forward(const Var& x, Rng* dropout_rng = nullptr) const;

  const UNetConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  std::vector<Var> param_vars() const { return params_.vars(); }

private:
  struct ConvLayer {
    Var w, b;
  };
  struct NormLayer {
    Var gamma, beta;
  };
  struct Block {
    ConvLayer conv1, conv2;
    NormLayer norm1, norm2;
  };

  Var conv_in_act(const ConvLayer& conv, const NormLayer& norm, const Var& x, bool encoder) const;
  Var run_block(const Block& blk, const Var& x, bool encoder, Rng* dropout_rng) const;

  UNetConfig cfg_;
  ParamSet params_;
  std::vector<Block> encoder_;             // size depth (last = bottleneck)
  std::vector<ConvLayer> up_convs_;        // size depth-1
  std::vector<NormLayer> up_norms_;
  std::vector<Block> decoder_;             // size depth-1
  ConvLayer head_;
};

}  // namespace derefl::nn
