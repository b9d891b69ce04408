#include "vlo/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace vlo {

namespace {

Grid from_rgb8(const std::vector<uint8_t>& px, int h, int w) {
  Grid out(h, w, 3);
  for (size_t i = 0; i < px.size(); ++i) out.v[i] = px[i] / 255.0;
  return out;
}

Grid load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_image: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("load_image: bad PPM magic in " + path);
  auto skip_ws_comments = [&f] {
    while (true) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
  };
  int w = 0, h = 0, maxval = 0;
  skip_ws_comments();
  f >> w;
  skip_ws_comments();
  f >> h;
  skip_ws_comments();
  f >> maxval;
  f.get();  // single whitespace after header
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("load_image: unsupported PPM header in " + path);
  std::vector<uint8_t> px(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw std::runtime_error("load_image: truncated PPM " + path);
  return from_rgb8(px, h, w);
}

Grid load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("load_image: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("load_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("load_image: PNG decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<uint8_t> px(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int r = 0; r < h; ++r) rows[r] = px.data() + static_cast<size_t>(r) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_rgb8(px, h, w);
}

}  // namespace

Grid load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("load_image: cannot open " + path);
  uint8_t magic[8] = {0};
  probe.read(reinterpret_cast<char*>(magic), sizeof(magic));
  probe.close();
  static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (std::memcmp(magic, png_sig, 8) == 0) return load_png(path);
  if (magic[0] == 'P' && magic[1] == '6') return load_ppm(path);
  char name[3] = {static_cast<char>(magic[0]), static_cast<char>(magic[1]), 0};
  throw std::runtime_error("load_image: unsupported format (magic '" + std::string(name) +
                           "') in " + path);
}

void save_ppm(const std::string& path, const Grid& rgb) {
  if (rgb.c != 3) throw std::invalid_argument("save_ppm: grid must have 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_ppm: cannot write " + path);
  f << "P6\n" << rgb.w << " " << rgb.h << "\n255\n";
  std::vector<uint8_t> px(rgb.v.size());
  for (size_t i = 0; i < rgb.v.size(); ++i) {
    const double v = std::clamp(rgb.v[i], 0.0, 1.0);
    px[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw std::runtime_error("save_ppm: short write to " + path);
}

Grid pad_image(const Grid& img, int target_h, int target_w) {
  if (img.h > target_h || img.w > target_w)
    throw std::invalid_argument("pad_image: image exceeds pad target");
  if (img.h == target_h && img.w == target_w) return img;
  Grid out(target_h, target_w, img.c);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < img.c; ++ch) out.at(r, c, ch) = img.at(r, c, ch);
  return out;
}

}  // namespace vlo
