#include "derefl/image.hpp"

#include <algorithm>
#include <cmath>

namespace derefl {

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::real: return "real";
    case Provenance::refgan: return "refgan";
    case Provenance::linear_synthetic: return "linear-synthetic";
  }
  return "real";
}

Provenance provenance_from_name(const std::string& name) {
  if (name == "real") return Provenance::real;
  if (name == "refgan") return Provenance::refgan;
  if (name == "linear-synthetic") return Provenance::linear_synthetic;
  raise(Errc::corrupt_data, "unknown provenance \"" + name + "\"");
}

void clamp01(ImageRGB& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

double mean_value(const ImageRGB& img) {
  double s = 0.0;
  for (double v : img.data) s += v;
  return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

ImageRGB resize_bilinear(const ImageRGB& img, int out_h, int out_w) {
  require(out_h >= 8 && out_w >= 8, Errc::invalid_size, "resize target must be at least 8x8");
  if (out_h == img.height && out_w == img.width) return img;

  ImageRGB out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    // half-pixel-center mapping
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, img.height - 1);
    int y1c = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        double top = img.at(c, y0c, x0c) * (1.0 - wx) + img.at(c, y0c, x1c) * wx;
        double bot = img.at(c, y1c, x0c) * (1.0 - wx) + img.at(c, y1c, x1c) * wx;
        out.at(c, y, x) = std::clamp(top * (1.0 - wy) + bot * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

namespace {

// Edge-inclusive mirror (…2,1,0,0,1,2…), folded so any radius is valid.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable pass over one plane.
void blur_plane(const double* src, double* dst, int h, int w, const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += k[i + radius] * src[y * w + reflect_index(x + i, w)];
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += k[i + radius] * tmp[reflect_index(y + i, h) * w + x];
      dst[y * w + x] = s;
    }
}

}  // namespace

ImageRGB gaussian_blur(const ImageRGB& img, double sigma) {
  require(sigma >= 0.0, Errc::invalid_size, "blur sigma must be >= 0");
  if (sigma == 0.0) return img;
  ImageRGB out(img.height, img.width);
  const auto k = gaussian_kernel(sigma);
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c)
    blur_plane(img.data.data() + c * plane, out.data.data() + c * plane, img.height, img.width, k);
  return out;
}

GrayMap gaussian_blur(const GrayMap& map, double sigma) {
  require(sigma >= 0.0, Errc::invalid_size, "blur sigma must be >= 0");
  if (sigma == 0.0) return map;
  GrayMap out(map.height, map.width);
  out.value_min = map.value_min;
  out.value_max = map.value_max;
  blur_plane(map.data.data(), out.data.data(), map.height, map.width, gaussian_kernel(sigma));
  return out;
}

TrainSample linear_synthesize(const ImageRGB& transmission, const ImageRGB& reflection,
                              double alpha, double blur_sigma) {
  require(transmission.same_shape(reflection), Errc::shape_mismatch,
          "transmission and reflection shapes differ");
  require(alpha >= 0.0 && alpha <= 1.0, Errc::invalid_size, "alpha must be in [0,1]");

  ImageRGB blurred = gaussian_blur(reflection, blur_sigma);
  ImageRGB ambient(transmission.height, transmission.width);
  ImageRGB effective(transmission.height, transmission.width);
  for (std::size_t i = 0; i < ambient.data.size(); ++i) {
    double a = std::clamp(transmission.data[i] + alpha * blurred.data[i], 0.0, 1.0);
    ambient.data[i] = a;
    effective.data[i] = std::clamp(a - transmission.data[i], 0.0, 1.0);
  }

  TrainSample sample;
  sample.ambient = std::move(ambient);
  sample.transmission = transmission;
  sample.reflection = std::move(effective);
  sample.provenance = Provenance::linear_synthetic;
  return sample;
}

}  // namespace derefl
