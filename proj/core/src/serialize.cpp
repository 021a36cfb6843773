#include "derefl/serialize.hpp"

#include <bit>
#include <cstring>

namespace derefl {

static_assert(std::endian::native == std::endian::little,
              "archive code assumes a little-endian host");

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary), path_(path) {
  require(out_.good(), Errc::write_failure, "cannot open " + path.string() + " for writing");
}

void BinaryWriter::magic(const std::string& tag) { out_.write(tag.data(), tag.size()); }
void BinaryWriter::u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
void BinaryWriter::u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
void BinaryWriter::u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
void BinaryWriter::i64(std::int64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
void BinaryWriter::f64(double v) { out_.write(reinterpret_cast<const char*>(&v), 8); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  out_.write(s.data(), s.size());
}

void BinaryWriter::f64_array(const double* data, std::size_t n) {
  out_.write(reinterpret_cast<const char*>(data), n * sizeof(double));
}

void BinaryWriter::close() {
  out_.close();
  require(out_.good(), Errc::write_failure, "error while writing " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
  require(in_.good(), Errc::missing_file, "cannot open " + path.string());
}

void BinaryReader::read_raw(void* dst, std::size_t n) {
  in_.read(reinterpret_cast<char*>(dst), n);
  require(static_cast<std::size_t>(in_.gcount()) == n, Errc::corrupt_data,
          "truncated archive " + path_.string());
}

void BinaryReader::expect_magic(const std::string& tag) {
  std::string got(tag.size(), '\0');
  read_raw(got.data(), tag.size());
  require(got == tag, Errc::corrupt_data,
          path_.string() + ": bad magic, expected \"" + tag + "\"");
}

std::uint8_t BinaryReader::u8() { std::uint8_t v; read_raw(&v, 1); return v; }
std::uint32_t BinaryReader::u32() { std::uint32_t v; read_raw(&v, 4); return v; }
std::uint64_t BinaryReader::u64() { std::uint64_t v; read_raw(&v, 8); return v; }
std::int64_t BinaryReader::i64() { std::int64_t v; read_raw(&v, 8); return v; }
double BinaryReader::f64() { double v; read_raw(&v, 8); return v; }

std::string BinaryReader::str() {
  std::uint64_t n = u64();
  require(n < (1ull << 32), Errc::corrupt_data, "unreasonable string length in archive");
  std::string s(n, '\0');
  read_raw(s.data(), n);
  return s;
}

void BinaryReader::f64_array(double* data, std::size_t n) {
  read_raw(data, n * sizeof(double));
}

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::missing_file: return "MissingFile";
    case Errc::unsupported_format: return "UnsupportedFormat";
    case Errc::corrupt_data: return "CorruptData";
    case Errc::write_failure: return "WriteFailure";
    case Errc::invalid_size: return "InvalidSize";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::load_failure: return "LoadFailure";
    case Errc::crop_too_large: return "CropTooLarge";
    case Errc::invalid_k: return "InvalidK";
    case Errc::invalid_m: return "InvalidM";
    case Errc::invalid_epoch: return "InvalidEpoch";
    case Errc::bad_config: return "BadConfig";
    case Errc::backend_unavailable: return "BackendUnavailable";
    case Errc::extractor_unavailable: return "ExtractorUnavailable";
    case Errc::insufficient_sources: return "InsufficientSources";
    case Errc::too_small: return "TooSmall";
    case Errc::data_error: return "DataError";
    case Errc::non_finite_loss: return "NonFiniteLoss";
  }
  return "Error";
}

}  // namespace derefl
