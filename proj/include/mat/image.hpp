#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mat {

// Channel-major RGB float image, values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> px;  // 3*h*w, plane order R,G,B

  Image() = default;
  Image(int hh, int ww) : h(hh), w(ww), px((size_t)3 * hh * ww, 0.0f) {}

  float& at(int c, int y, int x) { return px[((size_t)c * h + y) * w + x]; }
  float at(int c, int y, int x) const { return px[((size_t)c * h + y) * w + x]; }

  std::vector<float> gray() const;  // (h*w), channel mean
  void clamp01();
};

// Binary 8-bit PPM (P6). Quantization: round(clamp(v,0,1)*255).
void save_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

// Binary 8-bit PGM (P5) from a single-channel buffer; values clamped to [lo,hi]
// then scaled to 0..255.
void save_pgm(const std::vector<float>& data, int h, int w, const std::string& path,
              float lo = 0.0f, float hi = 1.0f);

}  // namespace mat
