#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "derefl/refgan.hpp"
#include "derefl/trainer.hpp"

namespace derefl {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

// Flat key=value configuration with three precedence layers:
// registry default < config file < explicit override (CLI flag).
// Unknown keys are errors at every layer.
class Config {
public:
  static const std::vector<ConfigKey>& registry();

  Config();  // registry defaults

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);  // flag override
  void set_pair(const std::string& key_eq_value);               // "key=value"

  bool known(const std::string& key) const;
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  // Fully-resolved "key=value" lines, sorted; echoed at every run's log head.
  std::string echo() const;

  TrainConfig to_train_config() const;
  GanTrainConfig to_gan_config() const;

private:
  std::map<std::string, std::string> values_;
};

}  // namespace derefl
