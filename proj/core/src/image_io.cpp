#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "derefl/image.hpp"

namespace derefl {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode, Errc on_fail) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  require(f != nullptr, on_fail, path.string());
  return f;
}

enum class FileKind { png, jpeg, other };

FileKind sniff(std::FILE* f) {
  unsigned char sig[8] = {0};
  std::size_t n = std::fread(sig, 1, 8, f);
  std::rewind(f);
  if (n >= 8 && png_sig_cmp(sig, 0, 8) == 0) return FileKind::png;
  if (n >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return FileKind::jpeg;
  return FileKind::other;
}

// ---------------------------------------------------------------------------
// PNG

ImageRGB load_png(std::FILE* f, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(png && info, Errc::corrupt_data, "png allocation failed");

  std::vector<std::vector<unsigned char>> rows;
  int width = 0, height = 0, bit_depth = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    raise(Errc::corrupt_data, name + ": png decode failed");
  }

  png_init_io(png, f);
  png_read_info(png, info);

  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // little-endian samples
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  rows.assign(height, std::vector<unsigned char>(rowbytes));
  std::vector<png_bytep> row_ptrs(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageRGB img(height, width);
  if (bit_depth == 16) {
    for (int y = 0; y < height; ++y) {
      const auto* p = reinterpret_cast<const std::uint16_t*>(rows[y].data());
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = p[x * 3 + c] / 65535.0;
    }
  } else {
    for (int y = 0; y < height; ++y) {
      const unsigned char* p = rows[y].data();
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = p[x * 3 + c] / 255.0;
    }
  }
  return img;
}

void write_png_impl(std::FILE* f, const std::string& name, int height, int width,
                    int bit_depth, int color_type, std::vector<png_bytep>& row_ptrs) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(png && info, Errc::write_failure, "png allocation failed");

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    raise(Errc::write_failure, name + ": png encode failed");
  }

  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// JPEG

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

ImageRGB load_jpeg(std::FILE* f, const std::string& name) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  std::vector<unsigned char> row;
  ImageRGB img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    raise(Errc::corrupt_data, name + ": jpeg decode failed");
  }

  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  img = ImageRGB(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
  row.resize(static_cast<std::size_t>(cinfo.output_width) * 3);
  unsigned char* rowp = row.data();
  while (cinfo.output_scanline < cinfo.output_height) {
    int y = static_cast<int>(cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &rowp, 1);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x * 3 + c] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void save_jpeg(const ImageRGB& img, std::FILE* f, const std::string& name, int quality) {
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    raise(Errc::write_failure, name + ": jpeg encode failed");
  }

  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = img.width;
  cinfo.image_height = img.height;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);

  unsigned char* rowp = row.data();
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[x * 3 + c] = static_cast<unsigned char>(v * 255.0 + 0.5);
      }
    jpeg_write_scanlines(&cinfo, &rowp, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string e = path.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

}  // namespace

ImageRGB load_image(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::missing_file, path.string());
  FilePtr f = open_file(path, "rb", Errc::missing_file);
  switch (sniff(f.get())) {
    case FileKind::png: return load_png(f.get(), path.string());
    case FileKind::jpeg: return load_jpeg(f.get(), path.string());
    case FileKind::other: break;
  }
  raise(Errc::unsupported_format, path.string() + " is neither PNG nor JPEG");
}

void save_image(const ImageRGB& img, const std::filesystem::path& path) {
  require(img.height > 0 && img.width > 0, Errc::invalid_size, "empty image");
  const std::string ext = lower_ext(path);
  FilePtr f = open_file(path, "wb", Errc::write_failure);

  if (ext == ".jpg" || ext == ".jpeg") {
    save_jpeg(img, f.get(), path.string(), 95);
    return;
  }
  require(ext == ".png", Errc::unsupported_format, "can only write .png/.jpg/.jpeg: " + path.string());

  std::vector<std::vector<unsigned char>> rows(img.height,
                                               std::vector<unsigned char>(img.width * 3));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        rows[y][x * 3 + c] = static_cast<unsigned char>(v * 255.0 + 0.5);
      }
  std::vector<png_bytep> row_ptrs(img.height);
  for (int y = 0; y < img.height; ++y) row_ptrs[y] = rows[y].data();
  write_png_impl(f.get(), path.string(), img.height, img.width, 8, PNG_COLOR_TYPE_RGB, row_ptrs);
}

void save_gray16_png(const GrayMap& map, const std::filesystem::path& path) {
  require(map.height > 0 && map.width > 0, Errc::invalid_size, "empty map");
  FilePtr f = open_file(path, "wb", Errc::write_failure);

  const double lo = map.value_min;
  const double span = map.value_max > map.value_min ? map.value_max - map.value_min : 1.0;
  std::vector<std::vector<unsigned char>> rows(
      map.height, std::vector<unsigned char>(static_cast<std::size_t>(map.width) * 2));
  for (int y = 0; y < map.height; ++y) {
    auto* p = reinterpret_cast<std::uint16_t*>(rows[y].data());
    for (int x = 0; x < map.width; ++x) {
      double v = std::clamp((map.at(y, x) - lo) / span, 0.0, 1.0);
      p[x] = static_cast<std::uint16_t>(v * 65535.0 + 0.5);
    }
  }
  std::vector<png_bytep> row_ptrs(map.height);
  for (int y = 0; y < map.height; ++y) row_ptrs[y] = rows[y].data();
  write_png_impl(f.get(), path.string(), map.height, map.width, 16, PNG_COLOR_TYPE_GRAY, row_ptrs);
}

}  // namespace derefl
