#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "derefl/error.hpp"

namespace derefl {

// Planar CHW image, values in [0,1]. The layout matches the tensor engine so
// crossing the nn boundary is a copy-free reinterpretation.
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // 3 * height * width, channel-major

  ImageRGB() = default;
  ImageRGB(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const ImageRGB& o) const { return height == o.height && width == o.width; }
};

// Single-channel map with a declared value range (raw depth, gradient
// magnitudes, patch score grids).
struct GrayMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  double value_min = 0.0;
  double value_max = 1.0;

  GrayMap() = default;
  GrayMap(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
};

enum class Provenance { real, refgan, linear_synthetic };

std::string provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

// (ambient I, transmission T, optional reflection R); the universal training
// currency. Shapes of all members agree.
struct TrainSample {
  std::string id;
  ImageRGB ambient;
  ImageRGB transmission;
  std::optional<ImageRGB> reflection;
  Provenance provenance = Provenance::real;
};

// --- image I/O (PNG + JPEG only) ------------------------------------------

ImageRGB load_image(const std::filesystem::path& path);
void save_image(const ImageRGB& img, const std::filesystem::path& path);

// 16-bit grayscale PNG used for depth/RDM sidecars. Values are min-max mapped
// onto the full 16-bit range from the map's declared (value_min, value_max).
void save_gray16_png(const GrayMap& map, const std::filesystem::path& path);

// --- pixel operations -------------------------------------------------------

ImageRGB resize_bilinear(const ImageRGB& img, int out_h, int out_w);

// Truncated kernel of radius ceil(3*sigma), reflected-border indexing.
// sigma == 0 is the identity.
ImageRGB gaussian_blur(const ImageRGB& img, double sigma);
GrayMap gaussian_blur(const GrayMap& map, double sigma);

void clamp01(ImageRGB& img);

// ambient = clamp(T + alpha * blur(R, sigma)); stored reflection is the
// effective residual clamp(I - T). Deterministic test-time data source.
TrainSample linear_synthesize(const ImageRGB& transmission, const ImageRGB& reflection,
                              double alpha, double blur_sigma);

double mean_value(const ImageRGB& img);

}  // namespace derefl
