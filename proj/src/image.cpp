#include "mat/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mat {

std::vector<float> Image::gray() const {
  std::vector<float> g((size_t)h * w);
  const size_t n = (size_t)h * w;
  for (size_t i = 0; i < n; ++i) g[i] = (px[i] + px[n + i] + px[2 * n + i]) / 3.0f;
  return g;
}

void Image::clamp01() {
  for (float& v : px) v = std::min(1.0f, std::max(0.0f, v));
}

static uint8_t quant8(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return (uint8_t)std::lround(c * 255.0f);
}

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  const size_t n = (size_t)img.h * img.w;
  std::vector<uint8_t> buf(n * 3);
  for (size_t i = 0; i < n; ++i) {
    buf[i * 3] = quant8(img.px[i]);
    buf[i * 3 + 1] = quant8(img.px[n + i]);
    buf[i * 3 + 2] = quant8(img.px[2 * n + i]);
  }
  f.write((const char*)buf.data(), (std::streamsize)buf.size());
  if (!f) throw std::runtime_error("write failed: " + path);
}

static int read_pnm_int(std::istream& in) {
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  int v = 0;
  bool any = false;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("malformed PNM header");
  return v;
}

Image load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char m0 = (char)f.get(), m1 = (char)f.get();
  if (m0 != 'P' || m1 != '6') throw std::runtime_error("not a P6 PPM: " + path);
  const int w = read_pnm_int(f);
  const int h = read_pnm_int(f);
  const int maxv = read_pnm_int(f);
  if (maxv != 255) throw std::runtime_error("unsupported PPM maxval in " + path);
  const size_t n = (size_t)h * w;
  std::vector<uint8_t> buf(n * 3);
  f.read((char*)buf.data(), (std::streamsize)buf.size());
  if ((size_t)f.gcount() != buf.size()) throw std::runtime_error("truncated PPM: " + path);
  Image img(h, w);
  for (size_t i = 0; i < n; ++i) {
    img.px[i] = buf[i * 3] / 255.0f;
    img.px[n + i] = buf[i * 3 + 1] / 255.0f;
    img.px[2 * n + i] = buf[i * 3 + 2] / 255.0f;
  }
  return img;
}

void save_pgm(const std::vector<float>& data, int h, int w, const std::string& path,
              float lo, float hi) {
  if ((size_t)h * w != data.size()) throw std::invalid_argument("save_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  const float span = hi > lo ? hi - lo : 1.0f;
  std::vector<uint8_t> buf(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    float v = (data[i] - lo) / span;
    v = std::min(1.0f, std::max(0.0f, v));
    buf[i] = (uint8_t)std::lround(v * 255.0f);
  }
  f.write((const char*)buf.data(), (std::streamsize)buf.size());
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace mat
