#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include <json.hpp>

#include "derefl/metrics.hpp"
#include "support/test_util.hpp"

using namespace derefl;
using namespace derefl::testing;

TEST_CASE("psnr analytics") {
  ImageRGB x = noise_image(16, 16, 1);
  CHECK(psnr(x, x) == 100.0);

  ImageRGB a = const_image(16, 16, 0.4), b = const_image(16, 16, 0.5);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));  // 10*log10(1/0.01)

  ImageRGB c = const_image(16, 16, 0.0), d = const_image(16, 16, 0.5);
  CHECK(psnr(c, d) == doctest::Approx(6.0206).epsilon(1e-4));  // 10*log10(4)

  CHECK_THROWS_AS(psnr(x, const_image(8, 8, 0.0)), Error);
}

TEST_CASE("psnr symmetry and monotone decay with offset") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    ImageRGB x = noise_image(12, 12, 100 + trial);
    ImageRGB y = noise_image(12, 12, 200 + trial);
    CHECK(psnr(x, y) == psnr(y, x));
  }
  double prev = 1e9;
  for (double off : {0.05, 0.1, 0.2, 0.4}) {
    double v = psnr(const_image(16, 16, 0.1), const_image(16, 16, 0.1 + off));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("ssim analytics") {
  ImageRGB x = noise_image(16, 16, 3);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  ImageRGB y = noise_image(16, 16, 4);
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));

  // constants 0.5 vs 0.6: contrast/structure term is 1 at zero variance, the
  // luminance term is (2*0.5*0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
  const double expect = (2.0 * 0.5 * 0.6 + 1e-4) / (0.5 * 0.5 + 0.6 * 0.6 + 1e-4);
  CHECK(ssim(const_image(16, 16, 0.5), const_image(16, 16, 0.6)) ==
        doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(0.9838).epsilon(5e-4));

  try {
    ssim(const_image(8, 8, 0.1), const_image(8, 8, 0.1));
    FAIL("expected TooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::too_small);
  }
  CHECK_THROWS_AS(ssim(x, const_image(12, 12, 0.0)), Error);
}

TEST_CASE("ssim stays within [-1, 1] on random pairs") {
  for (int trial = 0; trial < 20; ++trial) {
    double v = ssim(noise_image(16, 16, 300 + trial), noise_image(16, 16, 400 + trial));
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("lpips backends") {
  auto none = make_lpips_backend("none");
  CHECK(none == nullptr);

  auto feats = make_lpips_backend("features:23");
  REQUIRE(feats != nullptr);
  ImageRGB x = smooth_image(16, 16, 5);
  CHECK(feats->distance(x, x) == 0.0);
  for (int trial = 0; trial < 5; ++trial)
    CHECK(feats->distance(noise_image(16, 16, trial), noise_image(16, 16, 50 + trial)) >= 0.0);

  try {
    make_lpips_backend("alexnet");
    FAIL("expected BackendUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::backend_unavailable);
  }
}

namespace {

DatasetManifest toy_manifest(const TempDir& tmp, int n) {
  std::filesystem::create_directories(tmp / "ambient");
  std::filesystem::create_directories(tmp / "transmission");
  for (int i = 0; i < n; ++i) {
    TrainSample s = linear_synthesize(smooth_image(24, 24, 600 + i), blob_image(24, 24, 700 + i),
                                      0.5, 1.0);
    std::string id = "t" + std::to_string(i);
    save_image(s.ambient, tmp / ("ambient/" + id + ".png"));
    save_image(s.transmission, tmp / ("transmission/" + id + ".png"));
  }
  return build_manifest(tmp.path(), {}, Provenance::linear_synthetic, Split::test);
}

}  // namespace

TEST_CASE("benchmark harness with perfect and identity stubs") {
  TempDir tmp;
  DatasetManifest m = toy_manifest(tmp, 4);

  InferenceFn perfect = [](const TrainSample& s) { return s.transmission; };
  MetricReport p = evaluate_benchmark(perfect, m, "perfect");
  CHECK(p.n_samples == 4);
  CHECK(p.mean_psnr == 100.0);
  CHECK(p.mean_ssim == doctest::Approx(1.0).epsilon(1e-12));

  InferenceFn identity = [](const TrainSample& s) { return s.ambient; };
  MetricReport r = evaluate_benchmark(identity, m, "baseline");
  // plumbing correctness: per-sample rows equal direct ambient-vs-target metrics
  for (const auto& row : r.per_sample) {
    const ManifestEntry* entry = nullptr;
    for (const auto& e : m.entries)
      if (e.id == row.id) entry = &e;
    REQUIRE(entry != nullptr);
    TrainSample s = load_sample(m, *entry);
    CHECK(row.psnr == doctest::Approx(psnr(s.ambient, s.transmission)).epsilon(1e-12));
    CHECK(row.ssim == doctest::Approx(ssim(s.ambient, s.transmission)).epsilon(1e-12));
  }

  // means recompute exactly from rows
  double sum_psnr = 0.0, sum_ssim = 0.0;
  for (const auto& row : r.per_sample) {
    sum_psnr += row.psnr;
    sum_ssim += row.ssim;
  }
  CHECK(r.mean_psnr == doctest::Approx(sum_psnr / r.n_samples).epsilon(1e-15));
  CHECK(r.mean_ssim == doctest::Approx(sum_ssim / r.n_samples).epsilon(1e-15));
}

TEST_CASE("per-sample failures are recorded, not fatal") {
  TempDir tmp;
  DatasetManifest m = toy_manifest(tmp, 3);
  // corrupt one referenced file after manifest validation time
  {
    std::ofstream bad(tmp / m.entries[1].ambient, std::ios::binary | std::ios::trunc);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    bad.write(reinterpret_cast<const char*>(sig), 8);
    bad << "ruined";
  }
  InferenceFn identity = [](const TrainSample& s) { return s.ambient; };
  MetricReport r = evaluate_benchmark(identity, m, "with-failure");
  CHECK(r.n_samples == 2);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].find(m.entries[1].id) != std::string::npos);
}

TEST_CASE("report files") {
  TempDir tmp;
  DatasetManifest m = toy_manifest(tmp, 2);
  auto lp = make_lpips_backend("features:23");
  InferenceFn identity = [](const TrainSample& s) { return s.ambient; };
  MetricReport r = evaluate_benchmark(identity, m, "files", lp.get());

  save_report_json(r, tmp / "report.json");
  std::ifstream in(tmp / "report.json");
  nlohmann::json doc;
  in >> doc;
  CHECK(doc.at("dataset") == "files");
  CHECK(doc.at("n_samples") == 2);
  CHECK(doc.at("per_sample").size() == 2);
  CHECK(doc.at("means").contains("lpips"));

  save_report_csv(r, tmp / "report.csv");
  std::ifstream csv(tmp / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "id,psnr,ssim,lpips");
}

TEST_CASE("comparison grid layout and tile fidelity") {
  TempDir tmp;
  const int th = 24, tw = 24;
  std::vector<GridRow> rows;
  ImageRGB first_ambient = quantized_noise_image(th, tw, 31);
  for (int i = 0; i < 2; ++i) {
    GridRow row;
    row.ambient = i == 0 ? first_ambient : quantized_noise_image(th, tw, 32);
    for (int mth = 0; mth < 3; ++mth)
      row.method_outputs.push_back(quantized_noise_image(th, tw, 40 + 3 * i + mth));
    row.ground_truth = quantized_noise_image(th, tw, 50 + i);
    rows.push_back(std::move(row));
  }
  comparison_grid(rows, {"OURS", "BASE-A", "BASE-B"}, tmp / "grid.png");

  ImageRGB grid = load_image(tmp / "grid.png");  // decodable by load_image
  CHECK(grid.width == 5 * tw);                   // ambient + 3 methods + GT
  CHECK(grid.height == grid_label_band_height() + 2 * th);

  // tile (0,0) is pixel-equal to the first ambient
  double diff = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        diff = std::max(diff,
                        std::abs(grid.at(c, grid_label_band_height() + y, x) -
                                 first_ambient.at(c, y, x)));
  CHECK(diff == 0.0);

  CHECK_THROWS_AS(comparison_grid(rows, {"ONLY-ONE"}, tmp / "bad.png"), Error);
}
