#include "mat/fft.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace mat {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey on a strided view.
void fft1d(std::complex<double>* a, int n, int stride, bool inverse) {
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[(size_t)i * stride], a[(size_t)j * stride]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / len;
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        auto& u = a[(size_t)(i + k) * stride];
        auto& v = a[(size_t)(i + k + len / 2) * stride];
        const std::complex<double> t = v * w;
        v = u - t;
        u = u + t;
        w *= wl;
      }
    }
  }
}

}  // namespace

void fft2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse) {
  if (!is_pow2(h) || !is_pow2(w)) throw std::invalid_argument("fft2d: dimensions must be powers of two");
  if ((size_t)h * w != a.size()) throw std::invalid_argument("fft2d: buffer size mismatch");
  for (int y = 0; y < h; ++y) fft1d(a.data() + (size_t)y * w, w, 1, inverse);
  for (int x = 0; x < w; ++x) fft1d(a.data() + x, h, w, inverse);
  if (inverse) {
    const double inv = 1.0 / ((double)h * w);
    for (auto& z : a) z *= inv;
  }
}

std::vector<float> spectrum(const Image& img) {
  const int h = img.h, w = img.w;
  const auto g = img.gray();
  std::vector<std::complex<double>> a((size_t)h * w);
  for (size_t i = 0; i < a.size(); ++i) a[i] = g[i];
  fft2d(a, h, w, false);
  std::vector<float> out((size_t)h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // shift DC to the center
      const int sy = (y + h / 2) % h;
      const int sx = (x + w / 2) % w;
      out[(size_t)sy * w + sx] = (float)std::log1p(std::abs(a[(size_t)y * w + x]));
    }
  }
  return out;
}

namespace {

// Iterate non-DC bins with their radial fraction r in (0, ~0.71] of Nyquist
// and energy |F|^2.
template <class Fn>
void for_each_bin(const Image& img, Fn fn) {
  const int h = img.h, w = img.w;
  const auto g = img.gray();
  std::vector<std::complex<double>> a((size_t)h * w);
  for (size_t i = 0; i < a.size(); ++i) a[i] = g[i];
  fft2d(a, h, w, false);
  for (int y = 0; y < h; ++y) {
    const int fy = y <= h / 2 ? y : y - h;  // signed frequency
    for (int x = 0; x < w; ++x) {
      const int fx = x <= w / 2 ? x : x - w;
      if (fx == 0 && fy == 0) continue;
      const double ry = (double)fy / (h / 2);
      const double rx = (double)fx / (w / 2);
      const double r = std::sqrt(rx * rx + ry * ry);
      const double e = std::norm(a[(size_t)y * w + x]);
      fn(r, std::atan2((double)fy, (double)fx), e);
    }
  }
}

}  // namespace

BandFeatures band_features(const Image& img) {
  constexpr int kAngBins = 12;
  double low = 0.0, mid = 0.0, high = 0.0;
  std::array<double, kAngBins> ang{};
  for_each_bin(img, [&](double r, double theta, double e) {
    if (r > BandFeatures::kHighHi) return;  // editors do not write up here
    if (r <= BandFeatures::kLowHi) {
      low += e;
    } else if (r <= BandFeatures::kMidHi) {
      mid += e;
      // fold to [0, pi): spectra of real images are point-symmetric
      double t = theta < 0 ? theta + M_PI : theta;
      int bin = (int)(t / M_PI * kAngBins);
      if (bin >= kAngBins) bin = kAngBins - 1;
      ang[(size_t)bin] += e;
    } else {
      high += e;
    }
  });
  const double total = low + mid + high;
  BandFeatures f;
  if (total <= 0.0) return f;
  f.v[0] = low / total;
  f.v[1] = mid / total;
  f.v[2] = high / total;
  // directionality: share of mid-band energy in its three strongest angular
  // bins (oriented gratings concentrate there, isotropic texture does not)
  std::sort(ang.begin(), ang.end(), std::greater<double>());
  double sum = 0.0;
  for (double e : ang) sum += e;
  f.v[3] = sum > 0.0 ? (ang[0] + ang[1] + ang[2]) / sum : 0.0;
  return f;
}

double high_low_energy_ratio(const Image& img) {
  // per-bin densities, so flat (white) spectra score 1 regardless of the
  // very different bin counts of the two annuli
  double low = 0.0, high = 0.0;
  int64_t nlow = 0, nhigh = 0;
  for_each_bin(img, [&](double r, double, double e) {
    if (r <= BandFeatures::kLowHi) {
      low += e;
      ++nlow;
    } else if (r > BandFeatures::kMidHi && r <= BandFeatures::kHighHi) {
      high += e;
      ++nhigh;
    }
  });
  if (nlow == 0 || nhigh == 0) return 0.0;
  return (high / (double)nhigh) / (low / (double)nlow + 1e-30);
}

double region_high_low_energy_ratio(const Image& img, const std::vector<uint8_t>& mask) {
  const int h = img.h, w = img.w;
  if ((size_t)h * w != mask.size()) throw std::invalid_argument("mask size mismatch");
  int y0 = h, y1 = -1, x0 = w, x1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[(size_t)y * w + x]) {
        y0 = std::min(y0, y); y1 = std::max(y1, y);
        x0 = std::min(x0, x); x1 = std::max(x1, x);
      }
  if (y1 < y0) throw std::invalid_argument("empty mask");
  int side = 8;
  while (side < y1 - y0 + 1 || side < x1 - x0 + 1) side <<= 1;
  const int cy = (y0 + y1) / 2, cx = (x0 + x1) / 2;
  const size_t n = (size_t)h * w;
  double mean = 0.0;
  int64_t cnt = 0;
  std::vector<float> g = img.gray();
  for (size_t i = 0; i < n; ++i)
    if (mask[i]) { mean += g[i]; ++cnt; }
  mean /= (double)cnt;
  Image window(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int sy = cy - side / 2 + y, sx = cx - side / 2 + x;
      float v = (float)mean;
      if (sy >= 0 && sy < h && sx >= 0 && sx < w && mask[(size_t)sy * w + sx]) v = g[(size_t)sy * w + sx];
      for (int c = 0; c < 3; ++c) window.at(c, y, x) = v;
    }
  return high_low_energy_ratio(window);
}

}  // namespace mat
