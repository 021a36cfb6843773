#include "derefl/depth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace derefl {

GrayMap pseudo_depth(const ImageRGB& img) {
  GrayMap luma(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      luma.at(y, x) = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
  GrayMap out = gaussian_blur(luma, 4.0);
  auto [lo, hi] = std::minmax_element(out.data.begin(), out.data.end());
  out.value_min = *lo;
  out.value_max = *hi;
  return out;
}

GrayMap PseudoDepthBackend::infer(const ImageRGB& img) const { return pseudo_depth(img); }

GrayMap estimate_depth(const ImageRGB& img, const DepthBackend& backend) {
  GrayMap out = backend.infer(img);
  require(out.height == img.height && out.width == img.width, Errc::shape_mismatch,
          "depth backend \"" + backend.name() + "\" changed the spatial shape");
  for (double v : out.data)
    require(std::isfinite(v), Errc::corrupt_data,
            "depth backend \"" + backend.name() + "\" produced non-finite values");
  return out;
}

std::unique_ptr<DepthBackend> make_depth_backend(const std::string& spec) {
  if (spec == "pseudo" || spec.empty()) return std::make_unique<PseudoDepthBackend>();
  if (spec.rfind("midas", 0) == 0) {
    std::string path = spec.size() > 6 && spec[5] == ':' ? spec.substr(6) : "";
    if (path.empty()) {
      if (const char* dir = std::getenv("DEREFL_BACKENDS_DIR")) path = std::string(dir) + "/midas";
    }
    // Exported MiDaS weights are an external resource; this build has no
    // runtime for them, so report the backend as unavailable.
    raise(Errc::backend_unavailable,
          "midas backend needs exported weights" +
              (path.empty() ? std::string(" (set DEREFL_BACKENDS_DIR or midas:<path>)")
                            : " at " + path) +
              "; use --backend pseudo for the weight-free fallback");
  }
  raise(Errc::backend_unavailable, "unknown depth backend \"" + spec + "\"");
}

GrayMap RangedDepthMap::encoding() const {
  GrayMap out(height, width);
  out.value_min = 0.0;
  out.value_max = 1.0;
  for (std::size_t i = 0; i < codes.size(); ++i)
    out.data[i] = static_cast<double>(codes[i]) / (k - 1);
  return out;
}

RangedDepthMap quantize_depth(const GrayMap& depth, int k) {
  require(k >= 2, Errc::invalid_k, "k must be >= 2, got " + std::to_string(k));
  require(k <= 256, Errc::invalid_k, "k must be <= 256, got " + std::to_string(k));
  for (double v : depth.data)
    require(std::isfinite(v), Errc::corrupt_data, "depth map contains non-finite values");

  RangedDepthMap out;
  out.height = depth.height;
  out.width = depth.width;
  out.k = k;
  out.codes.resize(depth.data.size());

  auto [lo_it, hi_it] = std::minmax_element(depth.data.begin(), depth.data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(out.codes.begin(), out.codes.end(), std::uint8_t{0});
    return out;
  }
  const double inv_span = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    double d = (depth.data[i] - lo) * inv_span;  // [0, 1]
    int code = static_cast<int>(std::floor(d * k));
    out.codes[i] = static_cast<std::uint8_t>(std::clamp(code, 0, k - 1));
  }
  return out;
}

}  // namespace derefl
