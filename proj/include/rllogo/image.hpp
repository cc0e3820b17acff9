#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rllogo {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("Image: non-positive size");
  }

  std::uint8_t* px(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* px(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = px(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

// Binary PPM, magic "P6", max value 255.
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: bad magic in " + path);
  auto next_int = [&]() {
    // Skips whitespace and '#' comment lines between header fields.
    int c;
    while ((c = f.peek()) != EOF) {
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    int v;
    if (!(f >> v)) throw std::runtime_error("read_ppm: bad header in " + path);
    return v;
  };
  int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  Image img(w, h);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  return img;
}

// Exact counter-clockwise rotation by k*90 degrees. Square images only.
inline Image rotate_90k(const Image& img, int k) {
  if (img.width != img.height)
    throw std::invalid_argument("rotate_90k: image must be square");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  int n = img.width;
  Image out(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sx, sy;
      switch (k) {
        case 1: sx = n - 1 - y; sy = x; break;
        case 2: sx = n - 1 - x; sy = n - 1 - y; break;
        default: sx = y; sy = n - 1 - x; break;
      }
      const std::uint8_t* s = img.px(sx, sy);
      out.set(x, y, s[0], s[1], s[2]);
    }
  return out;
}

// Bilinear sample at continuous pixel coordinates (pixel centers at integer
// positions), clamped at the borders.
inline void bilinear_sample(const Image& img, double x, double y, double out[3]) {
  double cx = std::min(std::max(x, 0.0), static_cast<double>(img.width - 1));
  double cy = std::min(std::max(y, 0.0), static_cast<double>(img.height - 1));
  int x0 = static_cast<int>(std::floor(cx));
  int y0 = static_cast<int>(std::floor(cy));
  int x1 = std::min(x0 + 1, img.width - 1);
  int y1 = std::min(y0 + 1, img.height - 1);
  double fx = cx - x0, fy = cy - y0;
  const std::uint8_t* p00 = img.px(x0, y0);
  const std::uint8_t* p10 = img.px(x1, y0);
  const std::uint8_t* p01 = img.px(x0, y1);
  const std::uint8_t* p11 = img.px(x1, y1);
  for (int c = 0; c < 3; ++c) {
    double top = p00[c] * (1.0 - fx) + p10[c] * fx;
    double bot = p01[c] * (1.0 - fx) + p11[c] * fx;
    out[c] = top * (1.0 - fy) + bot * fy;
  }
}

}  // namespace rllogo
