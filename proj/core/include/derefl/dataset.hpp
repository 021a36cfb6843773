#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "derefl/image.hpp"

namespace derefl {

enum class Split { train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestEntry {
  std::string id;
  std::string ambient;       // paths relative to root
  std::string transmission;
  std::optional<std::string> reflection;
  Provenance provenance = Provenance::real;
};

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::train;
  std::vector<ManifestEntry> entries;
};

// Subdirectory names searched under the dataset root; pairing is by shared
// filename stem. `pattern` filters by extension ("*" accepts png/jpg/jpeg).
struct PairingRule {
  std::string ambient_subdir = "ambient";
  std::string transmission_subdir = "transmission";
  std::string reflection_subdir = "reflection";
  std::string pattern = "*";
};

// Entries sorted by id. Unpaired files land in `warnings` and are excluded.
DatasetManifest build_manifest(const std::filesystem::path& root, const PairingRule& rule,
                               Provenance provenance, Split split,
                               std::vector<std::string>* warnings = nullptr);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Checks id uniqueness and that every referenced path exists.
void validate_manifest(const DatasetManifest& manifest);

TrainSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

// Deterministic one-reader sample stream. shuffle=true applies a
// seed-determined permutation, shuffle=false yields id order.
class SampleStream {
public:
  SampleStream(const DatasetManifest& manifest, std::uint64_t seed, bool shuffle);

  bool has_next() const { return pos_ < order_.size(); }
  TrainSample next();
  std::size_t size() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }

private:
  const DatasetManifest& manifest_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Same crop window and flip decision applied to ambient, transmission, and
// reflection jointly.
TrainSample augment(const TrainSample& sample, std::uint64_t seed, int crop, double hflip_prob);

}  // namespace derefl
