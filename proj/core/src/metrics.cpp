#include "derefl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "derefl/depth.hpp"
#include "derefl/losses.hpp"
#include "derefl/model.hpp"

namespace derefl {

double psnr(const ImageRGB& x, const ImageRGB& y) {
  require(x.same_shape(y), Errc::shape_mismatch, "psnr inputs have different shapes");
  double se = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - y.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.data.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window(int window, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(window));
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-region separable filtering of one plane: output (h-window+1) rows.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& k) {
  const int window = static_cast<int>(k.size());
  const int ow = w - window + 1, oh = h - window + 1;
  std::vector<double> horiz(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < window; ++i) s += k[static_cast<std::size_t>(i)] * src[y * w + x + i];
      horiz[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < window; ++i)
        s += k[static_cast<std::size_t>(i)] * horiz[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const ImageRGB& x, const ImageRGB& y, int window, double sigma) {
  require(x.same_shape(y), Errc::shape_mismatch, "ssim inputs have different shapes");
  require(std::min(x.height, x.width) >= window, Errc::too_small,
          "ssim needs images of at least " + std::to_string(window) + " pixels per side");

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto k = gaussian_window(window, sigma);
  const std::size_t plane = static_cast<std::size_t>(x.height) * x.width;

  double score = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> xs(x.data.begin() + c * plane, x.data.begin() + (c + 1) * plane);
    std::vector<double> ys(y.data.begin() + c * plane, y.data.begin() + (c + 1) * plane);
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = xs[i] * xs[i];
      yy[i] = ys[i] * ys[i];
      xy[i] = xs[i] * ys[i];
    }
    auto mu_x = filter_valid(xs, x.height, x.width, k);
    auto mu_y = filter_valid(ys, x.height, x.width, k);
    auto e_xx = filter_valid(xx, x.height, x.width, k);
    auto e_yy = filter_valid(yy, x.height, x.width, k);
    auto e_xy = filter_valid(xy, x.height, x.width, k);

    double channel = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double var_x = e_xx[i] - mu_x[i] * mu_x[i];
      const double var_y = e_yy[i] - mu_y[i] * mu_y[i];
      const double cov = e_xy[i] - mu_x[i] * mu_y[i];
      const double num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2);
      channel += num / den;
    }
    score += channel / static_cast<double>(mu_x.size());
  }
  return score / 3.0;
}

// ---------------------------------------------------------------------------
// LPIPS backends

namespace {

// Deterministic perceptual distance: unit-normalize each tap's channels,
// average the squared difference. Zero iff inputs match; always >= 0.
class FeatureSpaceLpips : public LpipsBackend {
public:
  explicit FeatureSpaceLpips(std::uint64_t seed)
      : extractor_(FeatureExtractor::with_random_weights(seed)),
        name_("features:" + std::to_string(seed)) {}

  std::string name() const override { return name_; }

  double distance(const ImageRGB& x, const ImageRGB& y) const override {
    require(x.same_shape(y), Errc::shape_mismatch, "lpips inputs have different shapes");
    nn::NoGradGuard ng;
    auto fx = extractor_.features(nn::constant(image_to_tensor(x)));
    auto fy = extractor_.features(nn::constant(image_to_tensor(y)));
    double total = 0.0;
    for (int tap = 0; tap < 2; ++tap) {
      nn::Tensor a = unit_normalize(fx[static_cast<std::size_t>(tap)]->value);
      nn::Tensor b = unit_normalize(fy[static_cast<std::size_t>(tap)]->value);
      double s = 0.0;
      for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      total += s / static_cast<double>(a.size());
    }
    return total;
  }

private:
  static nn::Tensor unit_normalize(const nn::Tensor& t) {
    // per spatial position, normalize the channel vector
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    nn::Tensor out(t.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (std::int64_t i = 0; i < plane; ++i) {
      double norm = 0.0;
      for (int ch = 0; ch < c; ++ch) norm += t[ch * plane + i] * t[ch * plane + i];
      norm = std::sqrt(norm) + 1e-10;
      for (int ch = 0; ch < c; ++ch) out[ch * plane + i] = t[ch * plane + i] / norm;
    }
    return out;
  }

  FeatureExtractor extractor_;
  std::string name_;
};

}  // namespace

std::unique_ptr<LpipsBackend> make_lpips_backend(const std::string& spec) {
  if (spec.empty() || spec == "none") return nullptr;
  if (spec.rfind("features", 0) == 0) {
    std::uint64_t seed = 23;
    if (spec.size() > 9 && spec[8] == ':') seed = std::stoull(spec.substr(9));
    return std::make_unique<FeatureSpaceLpips>(seed);
  }
  raise(Errc::backend_unavailable, "unknown lpips backend \"" + spec + "\"");
}

// ---------------------------------------------------------------------------
// benchmark harness

MetricReport evaluate_benchmark(const InferenceFn& infer, const DatasetManifest& manifest,
                                const std::string& dataset_name, const LpipsBackend* lpips) {
  validate_manifest(manifest);
  MetricReport report;
  report.dataset_name = dataset_name;

  std::vector<const ManifestEntry*> entries;
  for (const auto& e : manifest.entries) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) { return a->id < b->id; });

  double sum_psnr = 0.0, sum_ssim = 0.0, sum_lpips = 0.0;
  for (const ManifestEntry* e : entries) {
    try {
      TrainSample sample = load_sample(manifest, *e);
      ImageRGB estimate = infer(sample);
      require(estimate.same_shape(sample.transmission), Errc::shape_mismatch,
              "inference output shape differs from target");
      MetricReport::Row row;
      row.id = e->id;
      row.psnr = psnr(estimate, sample.transmission);
      row.ssim = ssim(estimate, sample.transmission);
      if (lpips) row.lpips = lpips->distance(estimate, sample.transmission);
      sum_psnr += row.psnr;
      sum_ssim += row.ssim;
      if (row.lpips) sum_lpips += *row.lpips;
      report.per_sample.push_back(std::move(row));
    } catch (const Error& err) {
      report.failures.push_back(e->id + ": " + err.what());
    }
  }

  report.n_samples = static_cast<int>(report.per_sample.size());
  if (report.n_samples > 0) {
    report.mean_psnr = sum_psnr / report.n_samples;
    report.mean_ssim = sum_ssim / report.n_samples;
    if (lpips) report.mean_lpips = sum_lpips / report.n_samples;
  }
  return report;
}

MetricReport evaluate_benchmark(const ModelBundle& bundle, const DatasetManifest& manifest,
                                const DepthBackend& backend, const std::string& dataset_name,
                                const LpipsBackend* lpips) {
  InferenceFn infer = [&bundle, &backend](const TrainSample& sample) {
    RangedDepthMap rdm = quantize_depth(estimate_depth(sample.ambient, backend), bundle.k);
    return model_forward(bundle, sample.ambient, rdm).second;
  };
  return evaluate_benchmark(infer, manifest, dataset_name, lpips);
}

void save_report_json(const MetricReport& report, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.per_sample) {
    nlohmann::json row = {{"id", r.id}, {"psnr", r.psnr}, {"ssim", r.ssim}};
    if (r.lpips) row["lpips"] = *r.lpips;
    rows.push_back(std::move(row));
  }
  nlohmann::json means = {{"psnr", report.mean_psnr}, {"ssim", report.mean_ssim}};
  if (report.mean_lpips) means["lpips"] = *report.mean_lpips;
  nlohmann::json doc = {{"dataset", report.dataset_name},
                        {"n_samples", report.n_samples},
                        {"per_sample", std::move(rows)},
                        {"means", std::move(means)},
                        {"failures", report.failures}};
  std::ofstream out(path);
  require(out.good(), Errc::write_failure, path.string());
  out << doc.dump(2) << "\n";
  require(out.good(), Errc::write_failure, path.string());
}

void save_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), Errc::write_failure, path.string());
  const bool has_lpips = report.mean_lpips.has_value();
  out << "id,psnr,ssim" << (has_lpips ? ",lpips" : "") << "\n";
  for (const auto& r : report.per_sample) {
    out << r.id << "," << r.psnr << "," << r.ssim;
    if (has_lpips) out << "," << (r.lpips ? *r.lpips : 0.0);
    out << "\n";
  }
  require(out.good(), Errc::write_failure, path.string());
}

}  // namespace derefl
