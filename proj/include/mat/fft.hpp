#pragma once

#include <array>
#include <complex>
#include <vector>

#include "mat/image.hpp"

namespace mat {

// In-place radix-2 2-D FFT on row-major data; h and w must be powers of two.
void fft2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse);

// Centered log(1 + |FFT|) magnitude map of the channel-averaged image,
// same spatial dimensions, DC at (h/2, w/2).
std::vector<float> spectrum(const Image& img);

// Spectral band summary used to tell editors apart: fractions of non-DC
// energy in three radial bands plus an angular-peakiness score of the mid
// band. Radii are relative to the Nyquist frequency.
struct BandFeatures {
  static constexpr double kLowHi = 0.08;   // low band: (0, 0.08]
  static constexpr double kHighHi = 0.75;  // bins above this are ignored
  static constexpr double kMidHi = 0.26;   // mid band: (0.08, 0.26]
  std::array<double, 4> v{};               // {low, mid, high, mid directionality}

  double l2_dist(const BandFeatures& o) const {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double d = v[i] - o.v[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
};

BandFeatures band_features(const Image& img);

// Ratio of high-band to low-band energy (DC excluded); the quantity that
// jumps when broadband high-frequency texture is injected.
double high_low_energy_ratio(const Image& img);

// Same ratio computed on a region cutout: pixels outside the mask are
// replaced by the region mean, and the bounding box is padded to a
// power-of-two window.
double region_high_low_energy_ratio(const Image& img, const std::vector<uint8_t>& mask);

}  // namespace mat
