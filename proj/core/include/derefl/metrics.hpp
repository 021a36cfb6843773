#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "derefl/dataset.hpp"
#include "derefl/image.hpp"

namespace derefl {

class ModelBundle;
class DepthBackend;

// 10*log10(1/MSE) over all RGB elements jointly, MAX = 1; capped at 100 dB.
double psnr(const ImageRGB& x, const ImageRGB& y);

// Gaussian-window SSIM (default 11x11, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2),
// computed per channel over the valid region and averaged.
double ssim(const ImageRGB& x, const ImageRGB& y, int window = 11, double sigma = 1.5);

// Perceptual distance backend; optional everywhere it appears.
class LpipsBackend {
public:
  virtual ~LpipsBackend() = default;
  virtual std::string name() const = 0;
  virtual double distance(const ImageRGB& x, const ImageRGB& y) const = 0;
};

// "none" -> nullptr (column omitted); "features[:seed]" -> deterministic
// feature-space distance over the seeded random extractor. Real LPIPS weights
// are an external resource; anything else raises BackendUnavailable.
std::unique_ptr<LpipsBackend> make_lpips_backend(const std::string& spec);

struct MetricReport {
  struct Row {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips;
  };
  std::string dataset_name;
  int n_samples = 0;  // successfully evaluated
  std::vector<Row> per_sample;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::optional<double> mean_lpips;
  std::vector<std::string> failures;  // per-sample failures, recorded not fatal
};

// Produces the target estimate for one sample; lets tests run identity or
// perfect stubs through the same harness plumbing as the real model.
using InferenceFn = std::function<ImageRGB(const TrainSample&)>;

MetricReport evaluate_benchmark(const InferenceFn& infer, const DatasetManifest& manifest,
                                const std::string& dataset_name,
                                const LpipsBackend* lpips = nullptr);

// RDM -> model_forward -> metrics per sample, deterministic id order.
MetricReport evaluate_benchmark(const ModelBundle& bundle, const DatasetManifest& manifest,
                                const DepthBackend& backend, const std::string& dataset_name,
                                const LpipsBackend* lpips = nullptr);

void save_report_json(const MetricReport& report, const std::filesystem::path& path);
void save_report_csv(const MetricReport& report, const std::filesystem::path& path);

// ---- comparison grids ----

struct GridRow {
  ImageRGB ambient;
  std::vector<ImageRGB> method_outputs;
  ImageRGB ground_truth;
};

// Tiled PNG: a label band on top, then one row per sample laid out as
// ambient | methods... | ground truth. All images must share one shape.
void comparison_grid(const std::vector<GridRow>& rows,
                     const std::vector<std::string>& method_labels,
                     const std::filesystem::path& out_path);

int grid_label_band_height();

}  // namespace derefl
