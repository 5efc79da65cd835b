#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace asymtrack {

// RGB image, values in [0,1], row-major (y, x, channel).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pix;  // height*width*3

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pix(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  double mean_intensity() const {
    double s = 0.0;
    for (double v : pix) s += v;
    return pix.empty() ? 0.0 : s / static_cast<double>(pix.size());
  }
};

// Axis-aligned rectangle in pixel coordinates, top-left convention.
struct Rect {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double area() const { return w * h; }
};

inline double rect_iou(const Rect& a, const Rect& b) {
  double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  // rounding in the corner arithmetic can push identical boxes a ulp past 1
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

inline double quantize_byte(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

// ----- PPM (P6) / PGM (P5) round-trippable binary codecs -----

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pix) {
    unsigned char b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    f.put(static_cast<char>(b));
  }
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  int w, h, maxv;
  f >> magic >> w >> h >> maxv;
  if (magic != "P6" || maxv != 255) throw std::runtime_error("read_ppm: unsupported format in " + path);
  f.get();  // single whitespace after header
  Image img(h, w);
  for (auto& v : img.pix) {
    int b = f.get();
    if (b < 0) throw std::runtime_error("read_ppm: truncated file " + path);
    v = static_cast<double>(b) / 255.0;
  }
  return img;
}

inline void write_pgm(const std::vector<double>& gray, int height, int width,
                      const std::string& path) {
  if (static_cast<std::size_t>(height) * width != gray.size())
    throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  for (double v : gray) {
    unsigned char b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    f.put(static_cast<char>(b));
  }
}

// ----- geometry -----

// Extracts an axis-aligned square crop centered at (cx, cy) with the given
// side, resampled to out_size x out_size by bilinear interpolation. Regions
// outside the frame are padded with the frame mean intensity.
inline Image crop_resize(const Image& frame, double cx, double cy, double side, int out_size) {
  if (side <= 0.0) throw std::invalid_argument("crop_resize: non-positive side");
  Image out(out_size, out_size);
  double pad = frame.mean_intensity();
  double x0 = cx - side / 2.0;
  double y0 = cy - side / 2.0;
  double step = side / static_cast<double>(out_size);
  for (int oy = 0; oy < out_size; ++oy) {
    for (int ox = 0; ox < out_size; ++ox) {
      double sx = x0 + (ox + 0.5) * step - 0.5;
      double sy = y0 + (oy + 0.5) * step - 0.5;
      int ix = static_cast<int>(std::floor(sx));
      int iy = static_cast<int>(std::floor(sy));
      double fx = sx - ix, fy = sy - iy;
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int yy, int xx) {
          if (yy < 0 || yy >= frame.height || xx < 0 || xx >= frame.width) return pad;
          return frame.at(yy, xx, c);
        };
        double v = (1 - fy) * ((1 - fx) * sample(iy, ix) + fx * sample(iy, ix + 1)) +
                   fy * ((1 - fx) * sample(iy + 1, ix) + fx * sample(iy + 1, ix + 1));
        out.at(oy, ox, c) = v;
      }
    }
  }
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

inline Image adjust_brightness(const Image& img, double factor) {
  Image out = img;
  for (auto& v : out.pix) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

}  // namespace asymtrack
