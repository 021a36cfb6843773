#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "derefl/depth.hpp"
#include "support/test_util.hpp"

using namespace derefl;
using namespace derefl::testing;

TEST_CASE("pseudo depth of constant images is the luminance") {
  GrayMap d = pseudo_depth(const_image(16, 16, 0.5));
  for (double v : d.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  GrayMap white = pseudo_depth(const_image(16, 16, 1.0));
  for (double v : white.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pseudo depth of a left-black right-white step is row-monotone") {
  ImageRGB step(32, 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x) step.at(c, y, x) = 1.0;
  GrayMap d = pseudo_depth(step);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x + 1 < 32; ++x) CHECK(d.at(y, x) <= d.at(y, x + 1) + 1e-12);
}

TEST_CASE("estimate_depth is deterministic and shape preserving") {
  PseudoDepthBackend backend;
  ImageRGB img = smooth_image(336, 336, 6);
  GrayMap a = estimate_depth(img, backend);
  GrayMap b = estimate_depth(img, backend);
  CHECK(a.height == 336);
  CHECK(a.width == 336);
  CHECK(a.data == b.data);
  CHECK(a.value_min <= a.value_max);
}

TEST_CASE("backend registry") {
  CHECK(make_depth_backend("pseudo")->name() == "pseudo");
  try {
    make_depth_backend("midas");
    FAIL("expected BackendUnavailable");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::backend_unavailable);
  }
  CHECK_THROWS_AS(make_depth_backend("sonar"), Error);
}

TEST_CASE("quantizer worked example") {
  GrayMap d(1, 4);
  d.data = {0.0, 0.1, 0.5, 0.9};
  RangedDepthMap rdm = quantize_depth(d, 4);
  // min-max normalize {0, 1/9, 5/9, 1}; floor(d'*4) clamped -> {0, 0, 2, 3}
  CHECK(rdm.codes == std::vector<std::uint8_t>{0, 0, 2, 3});
  CHECK(rdm.encoding_at(0, 0) == 0.0);
  CHECK(rdm.encoding_at(0, 2) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(rdm.encoding_at(0, 3) == 1.0);
}

TEST_CASE("quantizer degenerate flat map") {
  GrayMap flat(8, 8, 0.7);
  RangedDepthMap rdm = quantize_depth(flat, 4);
  for (auto code : rdm.codes) CHECK(code == 0);
  GrayMap enc = rdm.encoding();
  for (double v : enc.data) CHECK(v == 0.0);
}

TEST_CASE("quantizer rejects bad k") {
  GrayMap d(4, 4, 0.5);
  try {
    quantize_depth(d, 1);
    FAIL("expected InvalidK");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_k);
  }
}

TEST_CASE("quantizer properties over random maps") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(6));
    GrayMap d(8, 8);
    for (double& v : d.data) v = rng.uniform(-3.0, 5.0);

    RangedDepthMap rdm = quantize_depth(d, k);

    // cardinality
    std::set<std::uint8_t> distinct(rdm.codes.begin(), rdm.codes.end());
    CHECK(static_cast<int>(distinct.size()) <= k);

    // monotonicity within the map
    for (std::size_t i = 0; i < d.data.size(); ++i)
      for (std::size_t j = 0; j < d.data.size(); ++j)
        if (d.data[i] <= d.data[j]) CHECK(rdm.codes[i] <= rdm.codes[j]);

    // affine invariance, a > 0
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    GrayMap affine(8, 8);
    for (std::size_t i = 0; i < d.data.size(); ++i) affine.data[i] = a * d.data[i] + b;
    CHECK(quantize_depth(affine, k).codes == rdm.codes);

    // idempotence at the encoding level
    CHECK(quantize_depth(rdm.encoding(), k).codes == rdm.codes);
  }
}
