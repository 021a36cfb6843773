#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "derefl/model.hpp"
#include "derefl/refgan.hpp"
#include "support/test_util.hpp"

using namespace derefl;
using namespace derefl::testing;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const TempDir& tmp, const std::string& args) {
  const std::string out_path = (tmp / "cli_stdout.txt").string();
  const std::string err_path = (tmp / "cli_stderr.txt").string();
  const std::string cmd =
      std::string(DEREFL_CLI_PATH) + " " + args + " > " + out_path + " 2> " + err_path;
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

}  // namespace

TEST_CASE("depth command writes the three artifacts with at most k ranges") {
  TempDir tmp;
  save_image(smooth_image(48, 48, 1), tmp / "in.png");
  CliResult r = run_cli(tmp, "depth --input " + (tmp / "in.png").string() + " --k 4 --backend pseudo --out " + (tmp / "out").string());
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(tmp / "out/in_depth.png"));
  CHECK(std::filesystem::exists(tmp / "out/in_rdm.png"));
  CHECK(std::filesystem::exists(tmp / "out/in_depth.json"));

  ImageRGB rdm = load_image(tmp / "out/in_rdm.png");
  std::set<double> distinct;
  for (int y = 0; y < rdm.height; ++y)
    for (int x = 0; x < rdm.width; ++x) distinct.insert(rdm.at(0, y, x));
  CHECK(distinct.size() <= 4);

  std::ifstream side(tmp / "out/in_depth.json");
  nlohmann::json doc;
  side >> doc;
  CHECK(doc.at("k") == 4);
  CHECK(doc.contains("min"));
  CHECK(doc.contains("max"));
}

TEST_CASE("depth command exit codes: 2 on bad args, 3 on backend failure") {
  TempDir tmp;
  CliResult missing = run_cli(tmp, "depth --k 4");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--input") != std::string::npos);

  save_image(smooth_image(16, 16, 2), tmp / "in.png");
  CliResult midas = run_cli(tmp, "depth --input " + (tmp / "in.png").string() + " --backend midas");
  CHECK(midas.code == 3);

  CliResult absent = run_cli(tmp, "depth --input " + (tmp / "ghost.png").string());
  CHECK(absent.code == 3);
}

TEST_CASE("infer produces a same-size image and prints the wall time") {
  TempDir tmp;
  ModelBundle bundle = default_model(4, 8, 5, 5);
  save_checkpoint(bundle, tmp / "model.ckpt");
  save_image(smooth_image(336, 336, 3), tmp / "in.png");

  CliResult r = run_cli(tmp, "infer --model " + (tmp / "model.ckpt").string() + " --input " +
                                 (tmp / "in.png").string() + " --out " + (tmp / "out.png").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find(" ms") != std::string::npos);
  ImageRGB out = load_image(tmp / "out.png");
  CHECK(out.height == 336);
  CHECK(out.width == 336);
}

TEST_CASE("synthesize emits the requested pair count and manifest") {
  TempDir tmp;
  write_toy_dataset(tmp / "src", 3, 32, 11);
  GanTrainConfig gan_cfg;
  gan_cfg.generator_depth = 4;
  gan_cfg.generator_base_channels = 8;
  gan_cfg.discriminator.base_channels = 8;
  save_refgan(init_refgan(gan_cfg), tmp / "gan.ckpt");

  CliResult r = run_cli(tmp, "synthesize --gan " + (tmp / "gan.ckpt").string() + " --targets " +
                                 (tmp / "src/manifest.json").string() + " --count 10 --out " +
                                 (tmp / "synth").string() + " --size 32");
  REQUIRE(r.code == 0);
  DatasetManifest m = load_manifest(tmp / "synth/manifest.json");
  CHECK(m.entries.size() == 10);
  validate_manifest(m);
}

TEST_CASE("train runs a toy config end to end with config echo and logs") {
  TempDir tmp;
  write_toy_dataset(tmp / "train", 3, 32, 21);
  write_toy_dataset(tmp / "val", 2, 32, 31);

  std::ofstream cfg(tmp / "toy.cfg");
  cfg << "epochs = 2\nimage_size = 0\nunet_depth = 4\nbase_channels = 8\nlr0 = 1e-3\n"
      << "initial_m = 2\nupgraded_m = 2\nseed = 9\n";
  cfg.close();

  CliResult r = run_cli(
      tmp, "train --config " + (tmp / "toy.cfg").string() +
               " --set train_manifest=" + (tmp / "train/manifest.json").string() +
               " --set val_manifest=" + (tmp / "val/manifest.json").string() +
               " --set checkpoint_dir=" + (tmp / "ckpt").string() +
               " --set log_file=" + (tmp / "train.jsonl").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("# resolved configuration") != std::string::npos);
  CHECK(std::filesystem::exists(tmp / "ckpt/best.ckpt"));

  // log head carries the resolved config, then JSONL training lines
  std::ifstream log(tmp / "train.jsonl");
  std::string first;
  std::getline(log, first);
  CHECK(nlohmann::json::parse(first).contains("config"));
  int iter_lines = 0;
  std::string line;
  while (std::getline(log, line))
    if (!line.empty() && nlohmann::json::parse(line).contains("iter")) ++iter_lines;
  CHECK(iter_lines == 6);  // 3 samples x 2 epochs
}

TEST_CASE("train rejects unknown config keys with exit 2") {
  TempDir tmp;
  CliResult r = run_cli(tmp, "train --set no_such_key=1");
  CHECK(r.code == 2);
}

TEST_CASE("evaluate --baseline writes a parseable report") {
  TempDir tmp;
  write_toy_dataset(tmp / "data", 3, 32, 41);
  CliResult r = run_cli(tmp, "evaluate --baseline --manifest " +
                                 (tmp / "data/manifest.json").string() + " --report " +
                                 (tmp / "report.json").string() + " --csv " +
                                 (tmp / "report.csv").string() + " --name toy");
  REQUIRE(r.code == 0);
  std::ifstream in(tmp / "report.json");
  nlohmann::json doc;
  in >> doc;
  CHECK(doc.at("dataset") == "toy");
  CHECK(doc.at("n_samples") == 3);
  CHECK(std::filesystem::exists(tmp / "report.csv"));
}

TEST_CASE("evaluate a trained checkpoint end to end") {
  TempDir tmp;
  write_toy_dataset(tmp / "data", 2, 32, 51);
  ModelBundle bundle = default_model(4, 8, 4, 13);
  save_checkpoint(bundle, tmp / "model.ckpt");
  CliResult r = run_cli(tmp, "evaluate --model " + (tmp / "model.ckpt").string() + " --manifest " +
                                 (tmp / "data/manifest.json").string() + " --report " +
                                 (tmp / "report.json").string());
  REQUIRE(r.code == 0);
  std::ifstream in(tmp / "report.json");
  nlohmann::json doc;
  in >> doc;
  CHECK(doc.at("n_samples") == 2);
}

TEST_CASE("missing subcommand and missing resources map to the documented codes") {
  TempDir tmp;
  CliResult none = run_cli(tmp, "");
  CHECK(none.code == 2);

  CliResult bad_model = run_cli(tmp, "infer --model " + (tmp / "ghost.ckpt").string() +
                                         " --input x.png --out y.png");
  CHECK(bad_model.code == 3);
}
