#include "derefl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "derefl/rng.hpp"

namespace derefl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  raise(Errc::corrupt_data, "unknown split \"" + name + "\"");
}

namespace {

bool matches_pattern(const fs::path& p, const std::string& pattern) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const bool is_image = ext == ".png" || ext == ".jpg" || ext == ".jpeg";
  if (pattern == "*" || pattern.empty()) return is_image;
  // pattern of the form "*.png"
  std::string want = pattern.substr(pattern.find_last_of('.'));
  for (char& c : want) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return is_image && ext == want;
}

std::map<std::string, std::string> stems_in(const fs::path& dir, const std::string& pattern) {
  std::map<std::string, std::string> out;  // stem -> filename
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !matches_pattern(e.path(), pattern)) continue;
    out[e.path().stem().string()] = e.path().filename().string();
  }
  return out;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root, const PairingRule& rule,
                               Provenance provenance, Split split,
                               std::vector<std::string>* warnings) {
  require(fs::is_directory(root), Errc::missing_file, root.string() + " is not a directory");

  auto ambients = stems_in(root / rule.ambient_subdir, rule.pattern);
  auto transmissions = stems_in(root / rule.transmission_subdir, rule.pattern);
  auto reflections = stems_in(root / rule.reflection_subdir, rule.pattern);

  DatasetManifest m;
  m.root = root;
  m.split = split;
  for (const auto& [stem, a_file] : ambients) {
    auto t = transmissions.find(stem);
    if (t == transmissions.end()) {
      if (warnings) warnings->push_back("unpaired ambient file: " + a_file);
      continue;
    }
    ManifestEntry e;
    e.id = stem;
    e.ambient = rule.ambient_subdir + "/" + a_file;
    e.transmission = rule.transmission_subdir + "/" + t->second;
    if (auto r = reflections.find(stem); r != reflections.end())
      e.reflection = rule.reflection_subdir + "/" + r->second;
    e.provenance = provenance;
    m.entries.push_back(std::move(e));
  }
  for (const auto& [stem, t_file] : transmissions)
    if (warnings && !ambients.count(stem))
      warnings->push_back("unpaired transmission file: " + t_file);

  require(!m.entries.empty(), Errc::empty_dataset, "no paired images under " + root.string());
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json je = {{"id", e.id},
               {"ambient", e.ambient},
               {"transmission", e.transmission},
               {"reflection", e.reflection ? json(*e.reflection) : json(nullptr)},
               {"provenance", provenance_name(e.provenance)}};
    entries.push_back(std::move(je));
  }
  json doc = {{"root", manifest.root.string()},
              {"split", split_name(manifest.split)},
              {"entries", std::move(entries)}};
  std::ofstream out(path);
  require(out.good(), Errc::write_failure, path.string());
  out << doc.dump(2) << "\n";
  require(out.good(), Errc::write_failure, path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(Errc::corrupt_data, path.string() + ": " + e.what());
  }
  try {
    DatasetManifest m;
    m.root = doc.at("root").get<std::string>();
    m.split = split_from_name(doc.at("split").get<std::string>());
    for (const auto& je : doc.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.ambient = je.at("ambient").get<std::string>();
      e.transmission = je.at("transmission").get<std::string>();
      if (!je.at("reflection").is_null()) e.reflection = je.at("reflection").get<std::string>();
      e.provenance = provenance_from_name(je.at("provenance").get<std::string>());
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& e) {
    raise(Errc::corrupt_data, path.string() + ": " + e.what());
  }
}

void validate_manifest(const DatasetManifest& manifest) {
  require(!manifest.entries.empty(), Errc::empty_dataset, "manifest has no entries");
  std::set<std::string> ids;
  for (const auto& e : manifest.entries) {
    require(ids.insert(e.id).second, Errc::corrupt_data, "duplicate id \"" + e.id + "\"");
    for (const auto* rel : {&e.ambient, &e.transmission}) {
      require(fs::exists(manifest.root / *rel), Errc::missing_file,
              "entry " + e.id + ": " + (manifest.root / *rel).string());
    }
    if (e.reflection)
      require(fs::exists(manifest.root / *e.reflection), Errc::missing_file,
              "entry " + e.id + ": " + (manifest.root / *e.reflection).string());
  }
}

TrainSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  try {
    TrainSample s;
    s.id = entry.id;
    s.ambient = load_image(manifest.root / entry.ambient);
    s.transmission = load_image(manifest.root / entry.transmission);
    if (entry.reflection) s.reflection = load_image(manifest.root / *entry.reflection);
    s.provenance = entry.provenance;
    require(s.ambient.same_shape(s.transmission), Errc::shape_mismatch,
            "entry " + entry.id + ": ambient/transmission shapes differ");
    if (s.reflection)
      require(s.ambient.same_shape(*s.reflection), Errc::shape_mismatch,
              "entry " + entry.id + ": reflection shape differs");
    return s;
  } catch (const Error& e) {
    if (e.code() == Errc::shape_mismatch) throw;
    raise(Errc::load_failure, "sample \"" + entry.id + "\": " + e.what());
  }
}

SampleStream::SampleStream(const DatasetManifest& manifest, std::uint64_t seed, bool shuffle)
    : manifest_(manifest) {
  order_.resize(manifest.entries.size());
  std::vector<std::size_t> by_id(manifest.entries.size());
  for (std::size_t i = 0; i < by_id.size(); ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    return manifest.entries[a].id < manifest.entries[b].id;
  });
  order_ = std::move(by_id);
  if (shuffle) {
    Rng rng(mix_seed(seed, 0x5u));
    rng.shuffle(order_);
  }
}

TrainSample SampleStream::next() {
  require(has_next(), Errc::load_failure, "stream exhausted");
  return load_sample(manifest_, manifest_.entries[order_[pos_++]]);
}

namespace {

void hflip_inplace(ImageRGB& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x)
        std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

ImageRGB crop_image(const ImageRGB& img, int oy, int ox, int size) {
  ImageRGB out(size, size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, oy + y, ox + x);
  return out;
}

}  // namespace

TrainSample augment(const TrainSample& sample, std::uint64_t seed, int crop, double hflip_prob) {
  const int h = sample.ambient.height, w = sample.ambient.width;
  require(crop > 0 && crop <= std::min(h, w), Errc::crop_too_large,
          "crop " + std::to_string(crop) + " exceeds " + std::to_string(std::min(h, w)));

  Rng rng(mix_seed(seed, 0xA6u));
  const int oy = static_cast<int>(rng.uniform_index(h - crop + 1));
  const int ox = static_cast<int>(rng.uniform_index(w - crop + 1));
  const bool flip = rng.bernoulli(hflip_prob);

  TrainSample out;
  out.id = sample.id;
  out.provenance = sample.provenance;
  out.ambient = crop_image(sample.ambient, oy, ox, crop);
  out.transmission = crop_image(sample.transmission, oy, ox, crop);
  if (sample.reflection) out.reflection = crop_image(*sample.reflection, oy, ox, crop);
  if (flip) {
    hflip_inplace(out.ambient);
    hflip_inplace(out.transmission);
    if (out.reflection) hflip_inplace(*out.reflection);
  }
  return out;
}

}  // namespace derefl
