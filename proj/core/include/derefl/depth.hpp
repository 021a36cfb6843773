#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "derefl/image.hpp"

namespace derefl {

// Monocular relative-depth estimator. Backends are deterministic and fixed
// after load; nothing in the toolkit ever trains one.
class DepthBackend {
public:
  virtual ~DepthBackend() = default;
  virtual std::string name() const = 0;
  virtual GrayMap infer(const ImageRGB& img) const = 0;
};

// Weight-free deterministic fallback: luminance smoothed with sigma=4.
class PseudoDepthBackend : public DepthBackend {
public:
  std::string name() const override { return "pseudo"; }
  GrayMap infer(const ImageRGB& img) const override;
};

GrayMap pseudo_depth(const ImageRGB& img);

GrayMap estimate_depth(const ImageRGB& img, const DepthBackend& backend);

// "pseudo" or "midas[:weights-path]". MiDaS requires exported weights under
// the given path or $DEREFL_BACKENDS_DIR; without them construction raises
// BackendUnavailable.
std::unique_ptr<DepthBackend> make_depth_backend(const std::string& spec);

// Per-image min-max quantization of a depth map into k equal-width ranges.
// Fixed auxiliary input: nothing updates these values by gradient.
struct RangedDepthMap {
  int height = 0;
  int width = 0;
  int k = 2;
  std::vector<std::uint8_t> codes;  // each in {0, ..., k-1}

  std::uint8_t code_at(int y, int x) const {
    return codes[static_cast<std::size_t>(y) * width + x];
  }
  double encoding_at(int y, int x) const {
    return static_cast<double>(code_at(y, x)) / (k - 1);
  }
  // codes/(k-1) as a map with declared range [0,1]
  GrayMap encoding() const;
};

RangedDepthMap quantize_depth(const GrayMap& depth, int k);

}  // namespace derefl
