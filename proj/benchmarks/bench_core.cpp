#include <benchmark/benchmark.h>

#include "derefl/depth.hpp"
#include "derefl/losses.hpp"
#include "derefl/metrics.hpp"
#include "derefl/model.hpp"
#include "derefl/rng.hpp"

using namespace derefl;

namespace {

ImageRGB bench_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageRGB img(size, size);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

void BM_conv2d_forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  Rng rng(1);
  nn::Tensor x({c, size, size}), w({c, c, 3, 3}), b({c});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, 0.1);
  nn::Var xv = nn::constant(x), wv = nn::constant(w), bv = nn::constant(b);
  nn::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(xv, wv, bv, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c) * c * 9 * size * size);
}
BENCHMARK(BM_conv2d_forward)->Args({8, 64})->Args({16, 64})->Args({64, 64})->Args({64, 336});

void BM_unet_forward(benchmark::State& state) {
  const int base = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  nn::UNetConfig cfg{4, 3, 5, base, 1, 0.0};
  nn::UNet net(cfg);
  Rng rng(2);
  nn::Tensor x({4, size, size});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  nn::Var xv = nn::constant(x);
  nn::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(xv));
}
BENCHMARK(BM_unet_forward)->Args({8, 64})->Args({8, 336})->Args({64, 336})->Unit(benchmark::kMillisecond);

void BM_model_forward_336(benchmark::State& state) {
  ModelBundle bundle = default_model(4, static_cast<int>(state.range(0)), 5, 3);
  ImageRGB img = bench_image(336, 3);
  RangedDepthMap rdm = quantize_depth(pseudo_depth(img), 4);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(bundle, img, rdm));
}
BENCHMARK(BM_model_forward_336)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_multi_step_train_iteration(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  ModelBundle bundle = default_model(4, 8, 5, 4);
  FeatureExtractor ex = FeatureExtractor::with_random_weights(17);
  PseudoDepthBackend backend;
  ImageRGB t = bench_image(64, 5), r = bench_image(64, 6);
  TrainSample s = linear_synthesize(t, r, 0.8, 1.0);
  nn::Tensor aux = gray_to_tensor(quantize_depth(pseudo_depth(s.ambient), 4).encoding());
  MultiStepOptions opt;
  opt.steps = m;
  for (auto _ : state) {
    MultiStepResult res =
        multi_step_loss(step_model(bundle, aux), image_to_tensor(s.ambient),
                        image_to_tensor(s.transmission), image_to_tensor(*s.reflection), ex, opt);
    nn::zero_grad(bundle.all_params());
    nn::backward(res.total);
  }
}
BENCHMARK(BM_multi_step_train_iteration)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_pseudo_depth(benchmark::State& state) {
  ImageRGB img = bench_image(static_cast<int>(state.range(0)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(pseudo_depth(img));
}
BENCHMARK(BM_pseudo_depth)->Arg(64)->Arg(336);

void BM_quantize_depth(benchmark::State& state) {
  GrayMap d(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)));
  Rng rng(8);
  for (double& v : d.data) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(quantize_depth(d, 4));
}
BENCHMARK(BM_quantize_depth)->Arg(64)->Arg(336);

void BM_psnr(benchmark::State& state) {
  ImageRGB a = bench_image(336, 9), b = bench_image(336, 10);
  for (auto _ : state) benchmark::DoNotOptimize(psnr(a, b));
}
BENCHMARK(BM_psnr);

void BM_ssim(benchmark::State& state) {
  ImageRGB a = bench_image(static_cast<int>(state.range(0)), 11);
  ImageRGB b = bench_image(static_cast<int>(state.range(0)), 12);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_ssim)->Arg(64)->Arg(336)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
