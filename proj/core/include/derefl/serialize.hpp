#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "derefl/error.hpp"

namespace derefl {

// Little-endian binary archive primitives. All checkpoint formats
// ("DEREFL1", "REFGAN1", "DRVGG19") are built from these.
class BinaryWriter {
public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(const std::string& tag);  // raw bytes, no length prefix
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(const std::string& s);                // u64 length + bytes
  void f64_array(const double* data, std::size_t n);
  void close();

private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class BinaryReader {
public:
  explicit BinaryReader(const std::filesystem::path& path);

  void expect_magic(const std::string& tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  void f64_array(double* data, std::size_t n);

private:
  void read_raw(void* dst, std::size_t n);
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace derefl
