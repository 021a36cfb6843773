#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "derefl/config.hpp"
#include "derefl/metrics.hpp"

namespace {

using namespace derefl;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::missing_file:
    case Errc::backend_unavailable:
    case Errc::extractor_unavailable:
    case Errc::empty_dataset:
      return 3;
    case Errc::bad_config:
    case Errc::invalid_k:
    case Errc::invalid_m:
    case Errc::invalid_epoch:
    case Errc::invalid_size:
    case Errc::unsupported_format:
    case Errc::crop_too_large:
    case Errc::too_small:
      return 2;
    default:
      return 4;
  }
}

Config resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const auto& kv : overrides) cfg.set_pair(kv);
  return cfg;
}

void echo_config(const Config& cfg, std::ostream& out) {
  std::istringstream lines(cfg.echo());
  std::string line;
  out << "# resolved configuration\n";
  while (std::getline(lines, line)) out << "# " << line << "\n";
}

nlohmann::json config_json(const Config& cfg) {
  nlohmann::json obj;
  std::istringstream lines(cfg.echo());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    obj[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return nlohmann::json{{"config", obj}};
}

// flag-driven commands echo their effective settings the same way
void echo_flags(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# resolved configuration\n";
  for (const auto& [k, v] : kv) std::cout << "# " << k << "=" << v << "\n";
}

int cmd_depth(const std::string& input, int k, const std::string& backend_spec,
              const std::string& out_dir) {
  echo_flags({{"input", input},
              {"k", std::to_string(k)},
              {"backend", backend_spec},
              {"out", out_dir}});
  auto backend = make_depth_backend(backend_spec);
  ImageRGB img = load_image(input);
  GrayMap depth = estimate_depth(img, *backend);
  RangedDepthMap rdm = quantize_depth(depth, k);

  std::filesystem::create_directories(out_dir);
  const std::string stem = std::filesystem::path(input).stem().string();
  const auto depth_path = std::filesystem::path(out_dir) / (stem + "_depth.png");
  const auto rdm_path = std::filesystem::path(out_dir) / (stem + "_rdm.png");
  const auto json_path = std::filesystem::path(out_dir) / (stem + "_depth.json");

  save_gray16_png(depth, depth_path);
  save_gray16_png(rdm.encoding(), rdm_path);
  std::ofstream side(json_path);
  require(side.good(), Errc::write_failure, json_path.string());
  side << nlohmann::json{{"min", depth.value_min}, {"max", depth.value_max}, {"k", k}}.dump(2)
       << "\n";

  std::cout << "depth:  " << depth_path.string() << "\n"
            << "rdm:    " << rdm_path.string() << "\n"
            << "sidecar:" << json_path.string() << "\n";
  return 0;
}

int cmd_train(const Config& cfg) {
  const std::string train_path = cfg.get("train_manifest");
  const std::string val_path = cfg.get("val_manifest");
  require(!train_path.empty(), Errc::bad_config, "train_manifest is required");
  require(!val_path.empty(), Errc::bad_config, "val_manifest is required");

  TrainConfig train_cfg = cfg.to_train_config();
  DatasetManifest train_m = load_manifest(train_path);
  DatasetManifest val_m = load_manifest(val_path);
  auto backend = make_depth_backend(cfg.get("depth_backend"));

  std::ofstream log_file;
  const std::string log_path = cfg.get("log_file");
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    require(log_file.good(), Errc::write_failure, log_path);
    log = &log_file;
  }
  echo_config(cfg, std::cout);
  *log << config_json(cfg).dump() << "\n";

  ModelBundle bundle = default_model(train_cfg.k, train_cfg.base_channels, train_cfg.unet_depth,
                                     train_cfg.seed);
  bundle.meta = "derefl train seed=" + std::to_string(train_cfg.seed);
  TrainState state = train(bundle, train_m, val_m, train_cfg, *backend, *log,
                           cfg.get("checkpoint_dir"));
  std::cout << "finished epoch " << state.epoch << ", best val PSNR " << state.best_val_psnr
            << " dB, checkpoints in " << cfg.get("checkpoint_dir") << "\n";
  return 0;
}

int cmd_train_refgan(const Config& cfg, const std::string& pairs_path, const std::string& out) {
  require(!pairs_path.empty(), Errc::bad_config, "a pairs manifest is required (--pairs)");
  GanTrainConfig gan_cfg = cfg.to_gan_config();
  DatasetManifest pairs = load_manifest(pairs_path);

  std::ofstream log_file;
  const std::string log_path = cfg.get("log_file");
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    require(log_file.good(), Errc::write_failure, log_path);
    log = &log_file;
  }
  echo_config(cfg, std::cout);
  *log << config_json(cfg).dump() << "\n";

  RefGANBundle bundle = train_refgan(pairs, gan_cfg, *log);
  save_refgan(bundle, out);
  std::cout << "refgan checkpoint written to " << out << "\n";
  return 0;
}

int cmd_synthesize(const std::string& gan_path, const std::string& targets_path, int count,
                   const std::string& out_dir, std::uint64_t seed, int size) {
  echo_flags({{"gan", gan_path},
              {"targets", targets_path},
              {"count", std::to_string(count)},
              {"out", out_dir},
              {"seed", std::to_string(seed)},
              {"size", std::to_string(size)}});
  RefGANBundle bundle = load_refgan(gan_path);
  DatasetManifest sources = load_manifest(targets_path);
  SynthJob job;
  job.out_dir = out_dir;
  job.count = count;
  job.seed = seed;
  job.image_size = size;
  DatasetManifest result = synthesize_dataset(bundle, sources, job);
  save_manifest(result, std::filesystem::path(out_dir) / "manifest.json");
  std::cout << "synthesized " << result.entries.size() << " pairs under " << out_dir << "\n";
  return 0;
}

int cmd_infer(const std::string& model_path, const std::string& input, const std::string& output,
              const std::string& backend_spec, const std::string& aux) {
  echo_flags({{"model", model_path},
              {"input", input},
              {"out", output},
              {"backend", backend_spec},
              {"aux", aux}});
  ModelBundle bundle = load_checkpoint(model_path);
  auto backend = make_depth_backend(backend_spec);
  ImageRGB img = load_image(input);

  AuxFeature mode = AuxFeature::rdm;
  if (aux == "depth") mode = AuxFeature::depth;
  else if (aux == "none") mode = AuxFeature::none;
  else require(aux == "rdm", Errc::bad_config, "aux must be rdm, depth, or none");

  const auto t0 = std::chrono::steady_clock::now();
  nn::Tensor aux_t = aux_plane(img, mode, *backend, bundle.k);
  nn::NoGradGuard ng;
  auto [r_hat, t_hat] =
      model_forward_vars(bundle, nn::constant(image_to_tensor(img)), nn::constant(aux_t));
  const auto t1 = std::chrono::steady_clock::now();
  save_image(tensor_to_image(t_hat->value), output);

  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << "inferred " << img.width << "x" << img.height << " in " << ms << " ms -> "
            << output << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& manifest_path,
                 const std::string& report_path, const std::string& csv_path,
                 const std::string& backend_spec, const std::string& lpips_spec,
                 const std::string& name, bool baseline) {
  echo_flags({{"model", model_path},
              {"manifest", manifest_path},
              {"report", report_path},
              {"csv", csv_path},
              {"backend", backend_spec},
              {"lpips", lpips_spec},
              {"name", name},
              {"baseline", baseline ? "true" : "false"}});
  DatasetManifest manifest = load_manifest(manifest_path);
  auto lpips = make_lpips_backend(lpips_spec);
  MetricReport report;
  if (baseline) {
    // do-nothing baseline: the unprocessed ambient against the target
    InferenceFn identity = [](const TrainSample& s) { return s.ambient; };
    report = evaluate_benchmark(identity, manifest, name.empty() ? "baseline" : name, lpips.get());
  } else {
    ModelBundle bundle = load_checkpoint(model_path);
    auto backend = make_depth_backend(backend_spec);
    report = evaluate_benchmark(bundle, manifest, *backend, name.empty() ? "dataset" : name,
                                lpips.get());
  }
  save_report_json(report, report_path);
  if (!csv_path.empty()) save_report_csv(report, csv_path);
  std::cout << report.dataset_name << ": n=" << report.n_samples
            << " PSNR=" << report.mean_psnr << " SSIM=" << report.mean_ssim;
  if (report.mean_lpips) std::cout << " LPIPS=" << *report.mean_lpips;
  if (!report.failures.empty()) std::cout << " failures=" << report.failures.size();
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"derefl: single-image reflection removal toolkit"};
  app.require_subcommand(1);

  // depth
  auto* depth = app.add_subcommand("depth", "estimate a depth map and its ranged quantization");
  std::string depth_input, depth_backend = "pseudo", depth_out = ".";
  int depth_k = 4;
  depth->add_option("--input", depth_input, "input image")->required();
  depth->add_option("--k", depth_k, "number of ranges");
  depth->add_option("--backend", depth_backend, "pseudo | midas[:path]");
  depth->add_option("--out", depth_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train the R-CNN/T-CNN reflection removal model");
  std::string train_config;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_config, "flat key=value config file");
  train->add_option("--set", train_sets, "override: key=value (repeatable)");

  // train-refgan
  auto* gan = app.add_subcommand("train-refgan", "train the pix2pix data synthesizer");
  std::string gan_config, gan_pairs, gan_out = "refgan.ckpt";
  std::vector<std::string> gan_sets;
  gan->add_option("--config", gan_config, "flat key=value config file");
  gan->add_option("--set", gan_sets, "override: key=value (repeatable)");
  gan->add_option("--pairs", gan_pairs, "manifest of (transmission, ambient) pairs")->required();
  gan->add_option("--out", gan_out, "output checkpoint path");

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "emit a refgan-synthesized paired dataset");
  std::string synth_gan, synth_targets, synth_out;
  int synth_count = 10, synth_size = 0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--gan", synth_gan, "refgan checkpoint")->required();
  synth->add_option("--targets", synth_targets, "source manifest for targets")->required();
  synth->add_option("--count", synth_count, "pairs to synthesize")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "sampling seed");
  synth->add_option("--size", synth_size, "resize targets (0 = native)");

  // infer
  auto* infer = app.add_subcommand("infer", "remove reflections from one image");
  std::string infer_model, infer_input, infer_out, infer_backend = "pseudo", infer_aux = "rdm";
  infer->add_option("--model", infer_model, "model checkpoint")->required();
  infer->add_option("--input", infer_input, "input image")->required();
  infer->add_option("--out", infer_out, "output image")->required();
  infer->add_option("--backend", infer_backend, "depth backend");
  infer->add_option("--aux", infer_aux, "rdm | depth | none");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "run the PSNR/SSIM[/LPIPS] benchmark");
  std::string eval_model, eval_manifest, eval_report, eval_csv, eval_backend = "pseudo";
  std::string eval_lpips = "none", eval_name;
  bool eval_baseline = false;
  eval->add_option("--model", eval_model, "model checkpoint");
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--report", eval_report, "output report JSON")->required();
  eval->add_option("--csv", eval_csv, "optional CSV flattening");
  eval->add_option("--backend", eval_backend, "depth backend");
  eval->add_option("--lpips", eval_lpips, "none | features[:seed]");
  eval->add_option("--name", eval_name, "dataset name in the report");
  eval->add_flag("--baseline", eval_baseline, "evaluate the do-nothing ambient baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // help/version exit 0, any usage problem exits 2
  }

  try {
    if (*depth) return cmd_depth(depth_input, depth_k, depth_backend, depth_out);
    if (*train) return cmd_train(resolve_config(train_config, train_sets));
    if (*gan) return cmd_train_refgan(resolve_config(gan_config, gan_sets), gan_pairs, gan_out);
    if (*synth)
      return cmd_synthesize(synth_gan, synth_targets, synth_count, synth_out, synth_seed,
                            synth_size);
    if (*infer) return cmd_infer(infer_model, infer_input, infer_out, infer_backend, infer_aux);
    if (*eval) {
      if (!eval_baseline)
        require(!eval_model.empty(), Errc::bad_config, "--model is required unless --baseline");
      return cmd_evaluate(eval_model, eval_manifest, eval_report, eval_csv, eval_backend,
                          eval_lpips, eval_name, eval_baseline);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
