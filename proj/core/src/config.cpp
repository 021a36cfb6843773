#include "derefl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace derefl {

const std::vector<ConfigKey>& Config::registry() {
  static const std::vector<ConfigKey> keys = {
      {"epochs", "100", "training epochs"},
      {"lr0", "1e-4", "initial learning rate (cosine-annealed to 0)"},
      {"batch_size", "1", "samples per optimizer step"},
      {"initial_m", "2", "multi-step loss M at the start of training"},
      {"upgraded_m", "3", "multi-step loss M after the upgrade fires"},
      {"upgrade_mode", "plateau", "plateau | fixed_epoch"},
      {"upgrade_patience", "5", "plateau: validations without improvement"},
      {"upgrade_min_delta", "0.05", "plateau: dB improvement that counts"},
      {"upgrade_epoch", "0", "fixed_epoch: epoch at which M upgrades"},
      {"seed", "0", "master seed; everything derives from it"},
      {"w_pixel", "1", "pixel loss weight"},
      {"w_feature", "1", "feature loss weight"},
      {"w_grad", "1", "gradient loss weight"},
      {"reflection_loss_steps", "all", "first | all: steps with an R term"},
      {"loss_variant", "multi_step", "multi_step | repeated_single (the Mx1-step baseline)"},
      {"aux_feature", "rdm", "rdm | depth | none: auxiliary channel fed to both networks"},
      {"k", "4", "ranged depth map bins"},
      {"image_size", "336", "training/validation resolution (0 = native)"},
      {"unet_depth", "5", "UNet encoder levels"},
      {"base_channels", "64", "UNet base width"},
      {"augment", "false", "enable random crop + horizontal flip"},
      {"augment_crop", "0", "crop size when augmentation is on"},
      {"hflip_prob", "0.5", "horizontal flip probability"},
      {"provenance_filter", "", "comma-separated allow list (real,refgan,linear-synthetic)"},
      {"feature_extractor", "test:17", "test[:seed] | vgg19:<weights-path>"},
      {"depth_backend", "pseudo", "pseudo | midas[:weights-path]"},
      {"train_manifest", "", "path to the training manifest JSON"},
      {"val_manifest", "", "path to the validation manifest JSON"},
      {"checkpoint_dir", "checkpoints", "directory for best/last checkpoints"},
      {"log_file", "", "JSONL log path (empty = stdout)"},
      {"gan_iterations", "200", "refgan training iterations"},
      {"gan_lr", "2e-4", "refgan Adam learning rate"},
      {"gan_beta1", "0.5", "refgan Adam beta1"},
      {"gan_lambda_l1", "100", "refgan L1 weight"},
      {"gan_image_size", "64", "refgan training resolution (0 = native)"},
      {"gan_depth", "5", "refgan generator UNet depth"},
      {"gan_base_channels", "64", "refgan generator base width"},
      {"gan_dropout", "0.5", "refgan generator decoder dropout"},
      {"gan_disc_layers", "3", "refgan discriminator stride-2 layers"},
      {"gan_disc_base_channels", "64", "refgan discriminator base width"},
      {"gan_seed", "0", "refgan seed"},
  };
  return keys;
}

Config::Config() {
  for (const auto& k : registry()) values_[k.key] = k.default_value;
}

bool Config::known(const std::string& key) const { return values_.count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) {
  require(known(key), Errc::bad_config, "unknown configuration key \"" + key + "\"");
  values_[key] = value;
}

void Config::set_pair(const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  require(eq != std::string::npos, Errc::bad_config,
          "expected key=value, got \"" + key_eq_value + "\"");
  std::string key = key_eq_value.substr(0, eq);
  std::string value = key_eq_value.substr(eq + 1);
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  };
  trim(key);
  trim(value);
  set(key, value);
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto content = line.find_first_not_of(" \t\r");
    if (content == std::string::npos) continue;
    try {
      set_pair(line);
    } catch (const Error& e) {
      raise(Errc::bad_config, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string Config::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), Errc::bad_config, "unknown configuration key \"" + key + "\"");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    raise(Errc::bad_config, "key \"" + key + "\" is not an integer: " + get(key));
  }
}

double Config::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    raise(Errc::bad_config, "key \"" + key + "\" is not a number: " + get(key));
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  raise(Errc::bad_config, "key \"" + key + "\" is not a boolean: " + v);
}

std::uint64_t Config::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    raise(Errc::bad_config, "key \"" + key + "\" is not an unsigned integer: " + get(key));
  }
}

std::string Config::echo() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
  return os.str();
}

TrainConfig Config::to_train_config() const {
  TrainConfig cfg;
  cfg.epochs = get_int("epochs");
  cfg.lr0 = get_double("lr0");
  cfg.batch_size = get_int("batch_size");
  cfg.initial_m = get_int("initial_m");
  cfg.upgraded_m = get_int("upgraded_m");
  const std::string mode = get("upgrade_mode");
  if (mode == "plateau")
    cfg.upgrade.mode = UpgradePolicy::Mode::plateau;
  else if (mode == "fixed_epoch")
    cfg.upgrade.mode = UpgradePolicy::Mode::fixed_epoch;
  else
    raise(Errc::bad_config, "upgrade_mode must be plateau or fixed_epoch, got " + mode);
  cfg.upgrade.patience = get_int("upgrade_patience");
  cfg.upgrade.min_delta_db = get_double("upgrade_min_delta");
  cfg.upgrade.epoch = get_int("upgrade_epoch");
  cfg.seed = get_u64("seed");
  cfg.loss_weights.pixel = get_double("w_pixel");
  cfg.loss_weights.feature = get_double("w_feature");
  cfg.loss_weights.gradient = get_double("w_grad");
  const std::string refl = get("reflection_loss_steps");
  if (refl == "first")
    cfg.reflection_loss_steps = ReflectionSupervision::first_step;
  else if (refl == "all")
    cfg.reflection_loss_steps = ReflectionSupervision::all_steps;
  else
    raise(Errc::bad_config, "reflection_loss_steps must be first or all, got " + refl);
  const std::string variant = get("loss_variant");
  if (variant == "multi_step")
    cfg.loss_variant = LossVariant::multi_step;
  else if (variant == "repeated_single")
    cfg.loss_variant = LossVariant::repeated_single;
  else
    raise(Errc::bad_config, "loss_variant must be multi_step or repeated_single, got " + variant);
  const std::string aux = get("aux_feature");
  if (aux == "rdm")
    cfg.aux_feature = AuxFeature::rdm;
  else if (aux == "depth")
    cfg.aux_feature = AuxFeature::depth;
  else if (aux == "none")
    cfg.aux_feature = AuxFeature::none;
  else
    raise(Errc::bad_config, "aux_feature must be rdm, depth, or none, got " + aux);
  cfg.k = get_int("k");
  cfg.image_size = get_int("image_size");
  cfg.unet_depth = get_int("unet_depth");
  cfg.base_channels = get_int("base_channels");
  cfg.augment_enabled = get_bool("augment");
  cfg.augment_crop = get_int("augment_crop");
  cfg.hflip_prob = get_double("hflip_prob");
  cfg.provenance_filter = get("provenance_filter");
  cfg.feature_extractor = get("feature_extractor");
  cfg.validate();
  return cfg;
}

GanTrainConfig Config::to_gan_config() const {
  GanTrainConfig cfg;
  cfg.iterations = get_int("gan_iterations");
  cfg.lr = get_double("gan_lr");
  cfg.beta1 = get_double("gan_beta1");
  cfg.lambda_l1 = get_double("gan_lambda_l1");
  cfg.image_size = get_int("gan_image_size");
  cfg.generator_depth = get_int("gan_depth");
  cfg.generator_base_channels = get_int("gan_base_channels");
  cfg.generator_dropout = get_double("gan_dropout");
  cfg.discriminator.layers = get_int("gan_disc_layers");
  cfg.discriminator.base_channels = get_int("gan_disc_base_channels");
  cfg.seed = get_u64("gan_seed");
  cfg.validate();
  return cfg;
}

}  // namespace derefl
