#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "derefl/config.hpp"
#include "support/test_util.hpp"

using namespace derefl;
using namespace derefl::testing;

TEST_CASE("registry defaults resolve") {
  Config cfg;
  CHECK(cfg.get_int("epochs") == 100);
  CHECK(cfg.get_double("lr0") == doctest::Approx(1e-4));
  CHECK(cfg.get_int("batch_size") == 1);
  CHECK(cfg.get_int("initial_m") == 2);
  CHECK(cfg.get_int("upgraded_m") == 3);
  CHECK(cfg.get_int("k") == 4);
  CHECK(cfg.get("upgrade_mode") == "plateau");
  CHECK_FALSE(cfg.get_bool("augment"));
}

TEST_CASE("unknown keys are rejected everywhere") {
  Config cfg;
  CHECK_THROWS_AS(cfg.set("no_such_key", "1"), Error);
  CHECK_THROWS_AS(cfg.get("no_such_key"), Error);

  TempDir tmp;
  std::ofstream f(tmp / "bad.cfg");
  f << "epochs = 5\nmystery_key = 2\n";
  f.close();
  Config cfg2;
  try {
    cfg2.load_file(tmp / "bad.cfg");
    FAIL("expected BadConfig");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_config);
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }
}

TEST_CASE("file parsing: comments, spacing, overrides") {
  TempDir tmp;
  std::ofstream f(tmp / "t.cfg");
  f << "# toy preset\n"
    << "epochs = 7\n"
    << "k=5   # trailing comment\n"
    << "\n"
    << "  lr0 = 2e-3\n";
  f.close();
  Config cfg;
  cfg.load_file(tmp / "t.cfg");
  CHECK(cfg.get_int("epochs") == 7);
  CHECK(cfg.get_int("k") == 5);
  CHECK(cfg.get_double("lr0") == doctest::Approx(2e-3));
  CHECK(cfg.get_int("batch_size") == 1);  // untouched default
}

TEST_CASE("flag precedence beats file beats default (property)") {
  Rng rng(77);
  const auto& reg = Config::registry();
  for (int trial = 0; trial < 50; ++trial) {
    TempDir tmp;
    std::ofstream f(tmp / "p.cfg");
    std::map<std::string, std::string> in_file, in_flags;
    for (const auto& key : reg) {
      if (rng.bernoulli(0.4)) {
        in_file[key.key] = "file-" + std::to_string(trial);
        f << key.key << " = " << in_file[key.key] << "\n";
      }
    }
    f.close();

    Config cfg;
    cfg.load_file(tmp / "p.cfg");
    for (const auto& key : reg)
      if (rng.bernoulli(0.3)) {
        in_flags[key.key] = "flag-" + std::to_string(trial);
        cfg.set(key.key, in_flags[key.key]);
      }

    for (const auto& key : reg) {
      const std::string got = cfg.get(key.key);
      if (in_flags.count(key.key))
        CHECK(got == in_flags[key.key]);
      else if (in_file.count(key.key))
        CHECK(got == in_file[key.key]);
      else
        CHECK(got == key.default_value);
    }
  }
}

TEST_CASE("echo lists every key once") {
  Config cfg;
  std::istringstream is(cfg.echo());
  std::set<std::string> seen;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    CHECK(seen.insert(line.substr(0, eq)).second);
  }
  CHECK(seen.size() == Config::registry().size());
}

TEST_CASE("to_train_config maps enums and validates") {
  Config cfg;
  cfg.set("reflection_loss_steps", "first");
  cfg.set("loss_variant", "repeated_single");
  cfg.set("aux_feature", "depth");
  cfg.set("upgrade_mode", "fixed_epoch");
  cfg.set("upgrade_epoch", "9");
  TrainConfig t = cfg.to_train_config();
  CHECK(t.reflection_loss_steps == ReflectionSupervision::first_step);
  CHECK(t.loss_variant == LossVariant::repeated_single);
  CHECK(t.aux_feature == AuxFeature::depth);
  CHECK(t.upgrade.mode == UpgradePolicy::Mode::fixed_epoch);
  CHECK(t.upgrade.epoch == 9);

  cfg.set("aux_feature", "sideways");
  CHECK_THROWS_AS(cfg.to_train_config(), Error);
  cfg.set("aux_feature", "rdm");
  cfg.set("initial_m", "5");  // > upgraded_m
  CHECK_THROWS_AS(cfg.to_train_config(), Error);
}

TEST_CASE("to_gan_config maps the gan keys") {
  Config cfg;
  cfg.set("gan_iterations", "44");
  cfg.set("gan_lambda_l1", "50");
  cfg.set("gan_disc_layers", "2");
  GanTrainConfig g = cfg.to_gan_config();
  CHECK(g.iterations == 44);
  CHECK(g.lambda_l1 == doctest::Approx(50.0));
  CHECK(g.discriminator.layers == 2);
  CHECK(g.lr == doctest::Approx(2e-4));
  CHECK(g.beta1 == doctest::Approx(0.5));
}

TEST_CASE("ablation presets parse against the registry") {
  // the shipped preset files must stay valid configurations
  const char* presets[] = {
      "k2.cfg",       "k3.cfg",     "k4.cfg",       "k5.cfg",          "k6.cfg",
      "k7.cfg",       "steps-1.cfg", "steps-2.cfg", "steps-3x1.cfg",   "steps-3.cfg",
      "steps-ours.cfg", "depth-vs-rdm.cfg", "no-refgan.cfg",
  };
  const std::filesystem::path dir = DEREFL_ABLATION_DIR;
  for (const char* name : presets) {
    Config cfg;
    cfg.load_file(dir / name);
    (void)cfg.to_train_config();  // must produce a valid TrainConfig
  }
}
