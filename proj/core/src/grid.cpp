#include <algorithm>
#include <cctype>

#include "derefl/metrics.hpp"

namespace derefl {

namespace {

constexpr int kBandHeight = 12;
constexpr int kGlyphW = 5, kGlyphH = 7;

// 5x7 glyph rows, 5 bits each, MSB leftmost. A-Z, 0-9, '-'.
struct Glyph {
  char ch;
  unsigned char rows[7];
};
constexpr Glyph kFont[] = {
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
};

const unsigned char* glyph_for(char c) {
  c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.ch == c) return g.rows;
  return nullptr;  // unknown characters render as space
}

void draw_label(ImageRGB& canvas, const std::string& text, int x0, int max_x) {
  const int y0 = 2;
  int x = x0;
  for (char c : text) {
    if (x + kGlyphW >= max_x) break;
    if (const unsigned char* rows = glyph_for(c)) {
      for (int ry = 0; ry < kGlyphH; ++ry)
        for (int rx = 0; rx < kGlyphW; ++rx)
          if (rows[ry] & (1 << (kGlyphW - 1 - rx)))
            for (int ch = 0; ch < 3; ++ch) canvas.at(ch, y0 + ry, x + rx) = 1.0;
    }
    x += kGlyphW + 1;
  }
}

}  // namespace

int grid_label_band_height() { return kBandHeight; }

void comparison_grid(const std::vector<GridRow>& rows,
                     const std::vector<std::string>& method_labels,
                     const std::filesystem::path& out_path) {
  require(!rows.empty(), Errc::invalid_size, "comparison grid needs at least one sample row");
  const ImageRGB& ref = rows[0].ambient;
  const std::size_t n_methods = rows[0].method_outputs.size();
  require(method_labels.size() == n_methods, Errc::invalid_size,
          "one label per method output is required");
  for (const auto& row : rows) {
    require(row.method_outputs.size() == n_methods, Errc::shape_mismatch,
            "rows disagree on method count");
    require(row.ambient.same_shape(ref) && row.ground_truth.same_shape(ref),
            Errc::shape_mismatch, "all grid images must share one shape");
    for (const auto& img : row.method_outputs)
      require(img.same_shape(ref), Errc::shape_mismatch, "all grid images must share one shape");
  }

  const int tile_h = ref.height, tile_w = ref.width;
  const int cols = static_cast<int>(n_methods) + 2;
  ImageRGB canvas(kBandHeight + static_cast<int>(rows.size()) * tile_h, cols * tile_w, 0.15);

  std::vector<std::string> labels{"INPUT"};
  labels.insert(labels.end(), method_labels.begin(), method_labels.end());
  labels.push_back("GT");
  for (int c = 0; c < cols; ++c)
    draw_label(canvas, labels[static_cast<std::size_t>(c)], c * tile_w + 2, (c + 1) * tile_w);

  auto blit = (+[](ImageRGB& dst, const ImageRGB& src, int oy, int ox) {
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) dst.at(ch, oy + y, ox + x) = src.at(ch, y, x);
  });

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int oy = kBandHeight + static_cast<int>(r) * tile_h;
    blit(canvas, rows[r].ambient, oy, 0);
    for (std::size_t m = 0; m < n_methods; ++m)
      blit(canvas, rows[r].method_outputs[m], oy, static_cast<int>(m + 1) * tile_w);
    blit(canvas, rows[r].ground_truth, oy, (cols - 1) * tile_w);
  }
  save_image(canvas, out_path);
}

}  // namespace derefl
