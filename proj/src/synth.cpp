#include "mat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace mat {

namespace {

constexpr double kShadeStep = 0.07;        // luminance step per observed prior edit
constexpr double kShadeBias = -0.105;      // centers the four steps around zero
constexpr double kEditedResidual = 0.012;  // stamp-projection threshold of the detector
constexpr double kStampAmp = 0.18;         // high-frequency stamp every editor leaves
constexpr double kStampFreq = 0.30;        // cycles per pixel, per axis

struct Ellipse {
  double cx, cy, rx, ry;  // pixel units
  double q(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy;
  }
};

double smoothstep(double t) {
  t = std::min(1.0, std::max(0.0, t));
  return t * t * (3.0 - 2.0 * t);
}

// soft coverage of an ellipse at pixel center with the given feather width
double ellipse_alpha(const Ellipse& e, double x, double y, double feather) {
  const double d = (std::sqrt(e.q(x, y)) - 1.0) * std::sqrt(e.rx * e.ry);
  return smoothstep(0.5 - d / feather);
}

struct FaceLayout {
  Ellipse face;
  std::array<std::vector<Ellipse>, 4> parts;  // per region, 1-2 ellipses
};

FaceLayout make_layout(Rng& rng, int size) {
  auto jit = [&](double base, double amp) { return base + rng.uniform(-amp, amp); };
  const double s = (double)size;
  FaceLayout L;
  L.face = {jit(0.50, 0.015) * s, jit(0.53, 0.015) * s, jit(0.37, 0.02) * s, jit(0.44, 0.02) * s};
  auto mk = [&](double cx, double cy, double rx, double ry, double cjit, double rjit) {
    Ellipse e;
    e.cx = jit(cx, cjit) * s;
    e.cy = jit(cy, cjit) * s;
    e.rx = std::max(rx * s * jit(1.0, rjit), 2.6);
    e.ry = std::max(ry * s * jit(1.0, rjit), 1.6);
    return e;
  };
  L.parts[kNose] = {mk(0.50, 0.60, 0.065, 0.072, 0.008, 0.08)};
  L.parts[kEyes] = {mk(0.36, 0.43, 0.068, 0.042, 0.008, 0.08),
                    mk(0.64, 0.43, 0.068, 0.042, 0.008, 0.08)};
  L.parts[kMouth] = {mk(0.50, 0.78, 0.105, 0.042, 0.008, 0.08)};
  L.parts[kBrows] = {mk(0.36, 0.26, 0.075, 0.036, 0.006, 0.08),
                     mk(0.64, 0.26, 0.075, 0.036, 0.006, 0.08)};
  return L;
}

using Color = std::array<double, 3>;

Color jitter_color(Rng& rng, Color c, double amp) {
  for (auto& v : c) v += rng.uniform(-amp, amp);
  return c;
}

// Band-limited real noise field: random spectrum restricted to the radial
// annulus [lo, hi] (fractions of Nyquist), inverse transformed and
// RMS-normalized. Deterministic in rng state.
std::vector<float> band_noise(int h, int w, double lo, double hi, Rng& rng) {
  std::vector<std::complex<double>> a((size_t)h * w, {0.0, 0.0});
  for (int y = 0; y < h; ++y) {
    const int fy = y <= h / 2 ? y : y - h;
    for (int x = 0; x < w; ++x) {
      const int fx = x <= w / 2 ? x : x - w;
      const double ry = (double)fy / (h / 2), rx = (double)fx / (w / 2);
      const double r = std::sqrt(rx * rx + ry * ry);
      // rng must be drawn for every bin so the stream layout is fixed
      const double re = rng.normal(), im = rng.normal();
      if (r >= lo && r <= hi) a[(size_t)y * w + x] = {re, im};
    }
  }
  fft2d(a, h, w, true);
  std::vector<float> out((size_t)h * w);
  double ss = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = (float)a[i].real();
    ss += (double)out[i] * out[i];
  }
  const double rms = std::sqrt(ss / (double)out.size());
  if (rms > 1e-12) {
    const float inv = (float)(1.0 / rms);
    for (auto& v : out) v *= inv;
  }
  return out;
}

std::vector<float> gaussian_blur_1c(const std::vector<float>& src, int h, int w, double sigma) {
  const int rad = std::max(1, (int)std::ceil(sigma * 3.0));
  std::vector<double> k((size_t)rad * 2 + 1);
  double ks = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    k[(size_t)(i + rad)] = std::exp(-0.5 * (double)i * i / (sigma * sigma));
    ks += k[(size_t)(i + rad)];
  }
  for (auto& v : k) v /= ks;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
  };
  std::vector<float> tmp((size_t)h * w), out((size_t)h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) acc += k[(size_t)(i + rad)] * src[(size_t)y * w + reflect(x + i, w)];
      tmp[(size_t)y * w + x] = (float)acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) acc += k[(size_t)(i + rad)] * tmp[(size_t)reflect(y + i, h) * w + x];
      out[(size_t)y * w + x] = (float)acc;
    }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  Image out(img.h, img.w);
  const size_t n = (size_t)img.h * img.w;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> ch(img.px.begin() + (size_t)c * n, img.px.begin() + (size_t)(c + 1) * n);
    auto b = gaussian_blur_1c(ch, img.h, img.w, sigma);
    std::copy(b.begin(), b.end(), out.px.begin() + (size_t)c * n);
  }
  return out;
}

Mask erode1(const Mask& m, int h, int w) {
  Mask out((size_t)h * w, 0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const size_t i = (size_t)y * w + x;
      if (m[i] && m[i - 1] && m[i + 1] && m[i - w] && m[i + w]) out[i] = 1;
    }
  return out;
}

Mask dilate1(const Mask& m, int h, int w) {
  Mask out = m;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = (size_t)y * w + x;
      if (m[i]) continue;
      const bool nb = (x > 0 && m[i - 1]) || (x < w - 1 && m[i + 1]) ||
                      (y > 0 && m[i - w]) || (y < h - 1 && m[i + w]);
      if (nb) out[i] = 1;
    }
  return out;
}

Color region_mean_color(const Image& img, const Mask& m) {
  const size_t n = (size_t)img.h * img.w;
  Color c{0, 0, 0};
  int64_t cnt = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!m[i]) continue;
    ++cnt;
    for (int ch = 0; ch < 3; ++ch) c[(size_t)ch] += img.px[(size_t)ch * n + i];
  }
  if (cnt > 0)
    for (auto& v : c) v /= (double)cnt;
  return c;
}

int count_edited_others(const Image& img, const std::array<Mask, 4>& masks, int region) {
  int k = 0;
  for (int r = 0; r < kNumRegions; ++r) {
    if (r == region) continue;
    if (region_edit_residual(img, masks[(size_t)r], img.h, img.w) > kEditedResidual) ++k;
  }
  return k;
}

double mask_mean(const std::vector<float>& field, const Mask& m) {
  double acc = 0.0;
  int64_t cnt = 0;
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i]) { acc += field[i]; ++cnt; }
  return cnt > 0 ? acc / (double)cnt : 0.0;
}

}  // namespace

const char* region_name(int r) {
  switch (r) {
    case kNose: return "nose";
    case kEyes: return "eyes";
    case kMouth: return "mouth";
    case kBrows: return "eyebrows";
    default: throw std::invalid_argument("unknown region id " + std::to_string(r));
  }
}

int region_from_name(const std::string& name) {
  for (int r = 0; r < kNumRegions; ++r)
    if (name == region_name(r)) return r;
  throw std::invalid_argument("unknown region name '" + name + "'");
}

namespace {

// Quadrature projection of plane-detrended gray content onto the stamp
// frequency, over one pixel set. The window never includes anything outside
// the set, so boundary contrast cannot contaminate the estimate.
double stamp_projection(const std::vector<float>& g, const std::vector<int>& px_idx, int w) {
  const int n = (int)px_idx.size();
  // detrend with a quadratic surface via Gaussian elimination; region bowls
  // and gradients die, the high-frequency stamp survives
  constexpr int P = 6;
  double ata[P][P] = {};
  double atb[P] = {};
  double cx = 0, cy = 0;
  for (int idx : px_idx) { cx += idx % w; cy += idx / w; }
  cx /= n; cy /= n;
  auto basis = [&](int idx, double* b) {
    const double x = idx % w - cx, y = idx / w - cy;
    b[0] = 1; b[1] = x; b[2] = y; b[3] = x * x; b[4] = x * y; b[5] = y * y;
  };
  for (int idx : px_idx) {
    double b[P];
    basis(idx, b);
    const double v = g[(size_t)idx];
    for (int i = 0; i < P; ++i) {
      atb[i] += b[i] * v;
      for (int j = 0; j < P; ++j) ata[i][j] += b[i] * b[j];
    }
  }
  double coef[P] = {};
  {
    double a[P][P + 1];
    for (int i = 0; i < P; ++i) {
      for (int j = 0; j < P; ++j) a[i][j] = ata[i][j];
      a[i][P] = atb[i];
      a[i][i] += 1e-9;  // tiny ridge keeps degenerate lobes solvable
    }
    for (int col = 0; col < P; ++col) {
      int piv = col;
      for (int r = col + 1; r < P; ++r)
        if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
      for (int j = 0; j <= P; ++j) std::swap(a[col][j], a[piv][j]);
      if (std::fabs(a[col][col]) < 1e-12) continue;
      for (int r = 0; r < P; ++r) {
        if (r == col) continue;
        const double f = a[r][col] / a[col][col];
        for (int j = col; j <= P; ++j) a[r][j] -= f * a[col][j];
      }
    }
    for (int i = 0; i < P; ++i) coef[i] = std::fabs(a[i][i]) < 1e-12 ? 0.0 : a[i][P] / a[i][i];
  }
  const double wf = 2.0 * M_PI * kStampFreq;
  double dot[4] = {0, 0, 0, 0}, nrm[4] = {0, 0, 0, 0};
  for (int idx : px_idx) {
    const int x = idx % w, y = idx / w;
    double b[P];
    basis(idx, b);
    double fit = 0;
    for (int i = 0; i < P; ++i) fit += coef[i] * b[i];
    const double v = g[(size_t)idx] - fit;
    const double q[4] = {std::sin(wf * x) * std::sin(wf * y), std::sin(wf * x) * std::cos(wf * y),
                         std::cos(wf * x) * std::sin(wf * y), std::cos(wf * x) * std::cos(wf * y)};
    for (int k = 0; k < 4; ++k) {
      dot[k] += v * q[k];
      nrm[k] += q[k] * q[k];
    }
  }
  double amp2 = 0.0;
  for (int k = 0; k < 4; ++k)
    if (nrm[k] > 1e-9) amp2 += (dot[k] / nrm[k]) * (dot[k] / nrm[k]) * (nrm[k] / (double)n);
  return std::sqrt(amp2);
}

}  // namespace

double region_edit_residual(const Image& img, const Mask& mask, int h, int w) {
  auto count = [](const Mask& m) {
    int64_t c = 0;
    for (auto v : m) c += v;
    return c;
  };
  // prefer a 1-pixel-eroded interior, but keep windows big enough for a
  // stable projection; the window never reads outside pixels either way
  Mask er = erode1(mask, h, w);
  if (count(er) < 24) er = mask;
  if (count(er) < 4) return 0.0;
  const auto g = img.gray();
  // split into connected components: two-lobed regions (eyes, brows) are
  // detrended per lobe, a single shared plane would leave spurious structure
  std::vector<int> comp((size_t)h * w, -1);
  std::vector<std::vector<int>> comps;
  for (int start = 0; start < h * w; ++start) {
    if (!er[(size_t)start] || comp[(size_t)start] >= 0) continue;
    const int id = (int)comps.size();
    comps.emplace_back();
    std::vector<int> stack = {start};
    comp[(size_t)start] = id;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      comps[(size_t)id].push_back(cur);
      const int x = cur % w, y = cur / w;
      const int nb[4] = {x > 0 ? cur - 1 : -1, x < w - 1 ? cur + 1 : -1,
                         y > 0 ? cur - w : -1, y < h - 1 ? cur + w : -1};
      for (int nn : nb) {
        if (nn >= 0 && er[(size_t)nn] && comp[(size_t)nn] < 0) {
          comp[(size_t)nn] = id;
          stack.push_back(nn);
        }
      }
    }
  }
  double best = 0.0;
  bool any = false;
  for (const auto& c : comps) {
    if ((int64_t)c.size() < 14) continue;
    any = true;
    best = std::max(best, stamp_projection(g, c, w));
  }
  if (!any) {
    // all lobes tiny; project over everything as a last resort
    std::vector<int> all;
    for (int i = 0; i < h * w; ++i)
      if (er[(size_t)i]) all.push_back(i);
    best = stamp_projection(g, all, w);
  }
  return best;
}

BaseImage gen_base_image(uint64_t seed, int size) {
  if (size != 32 && size != 64 && size != 128)
    throw std::invalid_argument("gen_base_image: size must be 32, 64 or 128");
  Rng rng(hash_seed(seed, 0xBA5Eull));
  const FaceLayout L = make_layout(rng, size);

  const Color bg_top = jitter_color(rng, {0.55, 0.62, 0.70}, 0.05);
  const Color bg_bot = jitter_color(rng, {0.30, 0.35, 0.42}, 0.05);
  const Color skin = jitter_color(rng, {0.78, 0.62, 0.52}, 0.04);
  const std::array<Color, 4> part_color = {
      Color{skin[0] * 0.90, skin[1] * 0.88, skin[2] * 0.88},  // nose
      jitter_color(rng, {0.25, 0.22, 0.30}, 0.03),            // eyes
      jitter_color(rng, {0.62, 0.28, 0.30}, 0.04),            // mouth
      jitter_color(rng, {0.30, 0.22, 0.16}, 0.03),            // eyebrows
  };

  BaseImage out;
  out.seed = seed;
  out.img = Image(size, size);
  for (auto& m : out.masks) m.assign((size_t)size * size, 0);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double ty = (double)y / (size - 1);
      Color col;
      for (int c = 0; c < 3; ++c) col[(size_t)c] = bg_top[(size_t)c] * (1 - ty) + bg_bot[(size_t)c] * ty;
      const double fa = ellipse_alpha(L.face, px, py, 3.0);
      if (fa > 0) {
        const double shade = 1.0 - 0.14 * L.face.q(px, py);
        for (int c = 0; c < 3; ++c) col[(size_t)c] = col[(size_t)c] * (1 - fa) + skin[(size_t)c] * shade * fa;
      }
      for (int r = 0; r < kNumRegions; ++r) {
        for (const auto& e : L.parts[(size_t)r]) {
          const double pa = ellipse_alpha(e, px, py, 1.2);
          if (pa > 0) {
            const double shade = 1.0 - 0.10 * e.q(px, py);
            for (int c = 0; c < 3; ++c)
              col[(size_t)c] = col[(size_t)c] * (1 - pa) + part_color[(size_t)r][(size_t)c] * shade * pa;
          }
          if (e.q(px, py) <= 1.0) out.masks[(size_t)r][(size_t)y * size + x] = 1;
        }
      }
      for (int c = 0; c < 3; ++c)
        out.img.at(c, y, x) = (float)std::min(1.0, std::max(0.0, col[(size_t)c]));
    }
  }
  // soften drawing edges so the untouched image carries almost no
  // high-frequency energy; editor textures then dominate their bands.
  // sigma scales with size, keeping base spectra alike across sizes.
  out.img = gaussian_blur(out.img, size / 32.0);
  return out;
}

const EditorParadigm& editor_paradigm(char id) {
  static const EditorParadigm s{'S', 0.01, 0.06, 0.15, 1.2, {}, 0.8};
  static const EditorParadigm d{'D', 0.38, 0.58, 0.32, 0.0, {}, 0.0};
  static const EditorParadigm f{'F', 0.12, 0.20, 0.28, 0.0,
                                {15.0 * M_PI / 180, 75.0 * M_PI / 180, 135.0 * M_PI / 180}, 0.0};
  switch (id) {
    case 'S': return s;
    case 'D': return d;
    case 'F': return f;
    default: throw std::invalid_argument(std::string("unknown editor id '") + id + "'");
  }
}

Image apply_editor(const Image& img, const std::array<Mask, 4>& masks, int region,
                   const EditorParadigm& editor, uint64_t seed) {
  if (region < 0 || region >= kNumRegions)
    throw std::invalid_argument("apply_editor: bad region " + std::to_string(region));
  const int h = img.h, w = img.w;
  const size_t n = (size_t)h * w;
  const Mask& m = masks[(size_t)region];
  Rng rng(hash_seed(seed, (uint64_t)editor.id));

  const double shade = kShadeStep * count_edited_others(img, masks, region) + kShadeBias;
  const Color fill = region_mean_color(img, m);

  // Every editor leaves a small high-frequency stamp on top of its own
  // texture. It keeps freshly edited regions detectable by the plane-residual
  // probe even when the paradigm pattern is locally smooth (editor S), and it
  // survives S's later global smoothing.
  std::vector<float> stamp(n);
  {
    const double p1 = rng.uniform(0.0, 2.0 * M_PI), p2 = rng.uniform(0.0, 2.0 * M_PI);
    const double wf = 2.0 * M_PI * kStampFreq;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        stamp[(size_t)y * w + x] = (float)(std::sin(wf * x + p1) * std::sin(wf * y + p2));
  }

  // per-editor synthesis field over the whole image, sampled inside the mask
  std::vector<float> pattern;
  Image carrier(h, w);  // content the pattern rides on
  if (editor.id == 'S') {
    pattern = band_noise(h, w, editor.band_lo, editor.band_hi, rng);
    Image bl = gaussian_blur(img, editor.smooth_radius);
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < n; ++i)
        carrier.px[(size_t)c * n + i] = (float)(0.7 * bl.px[(size_t)c * n + i] + 0.3 * fill[(size_t)c]);
  } else if (editor.id == 'D') {
    pattern = band_noise(h, w, editor.band_lo, editor.band_hi, rng);
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < n; ++i) carrier.px[(size_t)c * n + i] = (float)fill[(size_t)c];
  } else if (editor.id == 'F') {
    // oriented gratings at the paradigm's warp angles, plus a mirrored clone
    pattern.assign(n, 0.0f);
    const double fr = 0.5 * (editor.band_lo + editor.band_hi) * 0.5;  // cycles per pixel
    for (double ang : editor.warp_angles) {
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const double kx = 2.0 * M_PI * fr * std::cos(ang), ky = 2.0 * M_PI * fr * std::sin(ang);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          pattern[(size_t)y * w + x] += (float)(std::sin(kx * x + ky * y + phase) / (double)editor.warp_angles.size());
    }
    // normalize the grating mix to unit RMS like the noise fields
    double ss = 0.0;
    for (float v : pattern) ss += (double)v * v;
    const double rms = std::sqrt(ss / (double)n);
    if (rms > 1e-12)
      for (auto& v : pattern) v = (float)(v / rms);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          carrier.at(c, y, x) = (float)(0.5 * fill[(size_t)c] + 0.5 * img.at(c, y, w - 1 - x));
  } else {
    throw std::invalid_argument("apply_editor: unknown editor");
  }

  // Mean-center the texture components inside the mask and pin the carrier
  // to the region's original mean, so the region mean moves by exactly
  // `shade`. Stage decoding then reduces to reading a local mean offset.
  const double pat_mean = mask_mean(pattern, m);
  const double stamp_mean = mask_mean(stamp, m);
  std::array<double, 3> carrier_mean{};
  for (int c = 0; c < 3; ++c) {
    std::vector<float> ch(carrier.px.begin() + (size_t)c * n, carrier.px.begin() + (size_t)(c + 1) * n);
    carrier_mean[(size_t)c] = mask_mean(ch, m);
  }

  // blend weights: hard mask for S and D, 2-pixel feathered halo for F
  std::vector<float> alpha(n, 0.0f);
  for (size_t i = 0; i < n; ++i) alpha[i] = m[i] ? 1.0f : 0.0f;
  if (editor.id == 'F') {
    const Mask ring1 = dilate1(m, h, w);
    const Mask ring2 = dilate1(ring1, h, w);
    for (size_t i = 0; i < n; ++i) {
      if (m[i]) continue;
      if (ring1[i]) alpha[i] = 0.55f;
      else if (ring2[i]) alpha[i] = 0.20f;
    }
  }

  Image out = img;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) {
      const float a = alpha[i];
      if (a <= 0.0f) continue;
      const float synth = (float)(carrier.px[(size_t)c * n + i] - carrier_mean[(size_t)c] +
                                  fill[(size_t)c] + editor.pattern_amp * (pattern[i] - pat_mean) +
                                  kStampAmp * (stamp[i] - stamp_mean) + shade);
      out.px[(size_t)c * n + i] = (1.0f - a) * out.px[(size_t)c * n + i] + a * synth;
    }
  }

  if (editor.global_side_effect > 0.0) {
    // whole-image regeneration residual: mild smoothing pull plus a smooth
    // noise field, both scaled by the paradigm's side-effect amplitude.
    // The perturbation is re-centered inside each region so region means
    // (and with them the shade code) survive later S stages.
    const double g = editor.global_side_effect;
    const double blend = 0.35 * g;
    const double namp = 0.11 * g;
    Image bl = gaussian_blur(out, 1.0);
    std::vector<float> field = band_noise(h, w, 0.02, 0.06, rng);
    std::vector<float> delta(n);
    for (int c = 0; c < 3; ++c) {
      for (size_t i = 0; i < n; ++i)
        delta[i] = (float)(blend * (bl.px[(size_t)c * n + i] - out.px[(size_t)c * n + i]) +
                           namp * field[i]);
      for (const auto& mm : masks) {
        const double dm = mask_mean(delta, mm);
        for (size_t i = 0; i < n; ++i)
          if (mm[i]) delta[i] -= (float)dm;
      }
      for (size_t i = 0; i < n; ++i) out.px[(size_t)c * n + i] += delta[i];
    }
  }
  out.clamp01();
  return out;
}

ManipulationPlan sample_plan(Rng& rng) {
  ManipulationPlan p;
  std::vector<int> order = {kNose, kEyes, kMouth, kBrows};
  rng.shuffle(order);
  std::copy(order.begin(), order.end(), p.region_order.begin());
  while (true) {
    bool seen[3] = {false, false, false};
    for (auto& e : p.editors) {
      const int k = (int)rng.randint(3);
      e = kEditorIds[k];
      seen[k] = true;
    }
    if (seen[0] && seen[1] && seen[2]) break;
  }
  return p;
}

float quality_score(const Image& img) {
  const auto g = img.gray();
  const int h = img.h, w = img.w;
  double acc = 0.0;
  int64_t cnt = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x, ++cnt) acc += std::fabs(g[(size_t)y * w + x + 1] - g[(size_t)y * w + x]);
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x, ++cnt) acc += std::fabs(g[(size_t)(y + 1) * w + x] - g[(size_t)y * w + x]);
  const double contrast = acc / (double)cnt;
  int64_t clipped = 0;
  for (float v : img.px)
    if (v < 0.002f || v > 0.998f) ++clipped;
  const double clip_frac = (double)clipped / (double)img.px.size();
  const double score = std::min(1.0, contrast / 0.02) * (1.0 - clip_frac);
  return (float)score;
}

GeneratedSet gen_set(uint64_t set_seed, int size) {
  GeneratedSet s;
  s.base = gen_base_image(set_seed, size);
  Rng prng(hash_seed(set_seed, 0x9E11ull));
  s.plan = sample_plan(prng);
  s.stages[0] = s.base.img;
  for (int k = 0; k < 4; ++k) {
    s.stages[(size_t)k + 1] =
        apply_editor(s.stages[(size_t)k], s.base.masks, s.plan.region_order[(size_t)k],
                     editor_paradigm(s.plan.editors[(size_t)k]), hash_seed(set_seed, 100 + (uint64_t)k));
  }
  s.quality = quality_score(s.stages[4]);
  return s;
}

DatasetManifest gen_dataset(const GenConfig& cfg) {
  if (cfg.sets < 1) throw std::invalid_argument("gen_dataset: sets must be >= 1");
  fs::create_directories(cfg.out_dir);
  DatasetManifest m;
  m.size = cfg.size;
  m.seed = cfg.seed;
  m.quality_threshold = cfg.quality_threshold;
  m.records.resize((size_t)cfg.sets);
  std::string firsterr;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < cfg.sets; ++i) {
    try {
      bool done = false;
      for (int attempt = 0; attempt < 64 && !done; ++attempt) {
        const uint64_t set_seed = hash_seed(cfg.seed, (uint64_t)i, (uint64_t)attempt);
        GeneratedSet gs = gen_set(set_seed, cfg.size);
        if (gs.quality < cfg.quality_threshold) continue;
        SetRecord rec;
        rec.id = i;
        rec.seed = set_seed;
        rec.region_order = gs.plan.region_order;
        rec.editors = gs.plan.editors;
        rec.quality = gs.quality;
        char buf[64];
        for (int k = 0; k < 5; ++k) {
          std::snprintf(buf, sizeof(buf), "set%05d_s%d.ppm", i, k);
          rec.paths[(size_t)k] = buf;
          save_ppm(gs.stages[(size_t)k], (fs::path(cfg.out_dir) / buf).string());
        }
        m.records[(size_t)i] = rec;
        done = true;
      }
      if (!done) throw std::runtime_error("set " + std::to_string(i) + " failed quality 64 times");
    } catch (const std::exception& e) {
#pragma omp critical
      if (firsterr.empty()) firsterr = e.what();
    }
  }
  if (!firsterr.empty()) throw std::runtime_error("gen_dataset: " + firsterr);
  save_manifest(m, (fs::path(cfg.out_dir) / "manifest.jsonl").string());
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  ordered_json hdr;
  hdr["type"] = "header";
  hdr["sets"] = m.records.size();
  hdr["size"] = m.size;
  hdr["seed"] = m.seed;
  hdr["quality_threshold"] = m.quality_threshold;
  f << hdr.dump() << "\n";
  for (const auto& r : m.records) {
    ordered_json j;
    j["id"] = r.id;
    j["seed"] = r.seed;
    j["region_order"] = ordered_json::array();
    for (int rr : r.region_order) j["region_order"].push_back(region_name(rr));
    j["editors"] = ordered_json::array();
    for (char e : r.editors) j["editors"].push_back(std::string(1, e));
    j["paths"] = ordered_json::array();
    for (const auto& p : r.paths) j["paths"].push_back(p);
    j["quality"] = r.quality;
    f << j.dump() << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  DatasetManifest m;
  std::string line;
  size_t declared = 0;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = ordered_json::parse(line);
    if (!have_header) {
      if (j.value("type", "") != "header") throw std::runtime_error("manifest missing header line");
      declared = j.at("sets").get<size_t>();
      m.size = j.at("size").get<int>();
      m.seed = j.at("seed").get<uint64_t>();
      m.quality_threshold = j.at("quality_threshold").get<float>();
      have_header = true;
      continue;
    }
    SetRecord r;
    r.id = j.at("id").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    const auto& ro = j.at("region_order");
    const auto& ed = j.at("editors");
    const auto& ps = j.at("paths");
    if (ro.size() != 4 || ed.size() != 4 || ps.size() != 5)
      throw std::runtime_error("malformed manifest record for set " + std::to_string(r.id));
    for (int k = 0; k < 4; ++k) {
      r.region_order[(size_t)k] = region_from_name(ro[(size_t)k].get<std::string>());
      r.editors[(size_t)k] = ed[(size_t)k].get<std::string>().at(0);
    }
    for (int k = 0; k < 5; ++k) r.paths[(size_t)k] = ps[(size_t)k].get<std::string>();
    r.quality = j.at("quality").get<float>();
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw std::runtime_error("empty manifest: " + path);
  if (m.records.size() != declared)
    throw std::runtime_error("manifest record count " + std::to_string(m.records.size()) +
                             " does not match header count " + std::to_string(declared));
  return m;
}

int CentroidOracle::classify(const BandFeatures& f) const {
  int best = 0;
  double bd = f.l2_dist(centroids[0]);
  for (int i = 1; i < 3; ++i) {
    const double d = f.l2_dist(centroids[(size_t)i]);
    if (d < bd) { bd = d; best = i; }
  }
  return best;
}

namespace {

// one random single-stage edit; returns (editor index, band features)
std::pair<int, BandFeatures> single_stage_sample(uint64_t seed, int size) {
  Rng rng(hash_seed(seed, 0x51A6ull));
  BaseImage base = gen_base_image(hash_seed(seed, 1), size);
  const int ei = (int)rng.randint(3);
  const int region = (int)rng.randint(kNumRegions);
  Image edited = apply_editor(base.img, base.masks, region, editor_paradigm(kEditorIds[ei]),
                              hash_seed(seed, 2));
  return {ei, band_features(edited)};
}

}  // namespace

CentroidOracle fit_centroid_oracle(uint64_t seed, int n_fit, int size) {
  CentroidOracle o;
  std::array<std::array<double, 4>, 3> acc{};
  std::array<int, 3> cnt{};
  for (int i = 0; i < n_fit; ++i) {
    auto [ei, f] = single_stage_sample(hash_seed(seed, 5000 + (uint64_t)i), size);
    for (int k = 0; k < 4; ++k) acc[(size_t)ei][(size_t)k] += f.v[(size_t)k];
    cnt[(size_t)ei]++;
  }
  for (int e = 0; e < 3; ++e) {
    if (cnt[(size_t)e] == 0) throw std::runtime_error("centroid oracle: editor unseen in fit sample");
    for (int k = 0; k < 4; ++k) o.centroids[(size_t)e].v[(size_t)k] = acc[(size_t)e][(size_t)k] / cnt[(size_t)e];
  }
  return o;
}

double editor_separability_accuracy(uint64_t seed, int n_fit, int n_eval, int size) {
  const CentroidOracle o = fit_centroid_oracle(seed, n_fit, size);
  int correct = 0;
  for (int i = 0; i < n_eval; ++i) {
    auto [ei, f] = single_stage_sample(hash_seed(seed, 900000 + (uint64_t)i), size);
    if (o.classify(f) == ei) ++correct;
  }
  return (double)correct / n_eval;
}

double overwrite_property_rate(uint64_t seed, int trials, int size) {
  int ok = 0;
  for (int i = 0; i < trials; ++i) {
    const uint64_t s = hash_seed(seed, 7000 + (uint64_t)i);
    Rng rng(s);
    BaseImage base = gen_base_image(hash_seed(s, 1), size);
    const char prev = (i % 2 == 0) ? 'D' : 'F';
    const int ra = (int)rng.randint(kNumRegions);
    int rb = (int)rng.randint(kNumRegions);
    if (rb == ra) rb = (rb + 1) % kNumRegions;
    Image prev_img = apply_editor(base.img, base.masks, ra, editor_paradigm(prev), hash_seed(s, 2));
    Image final_img = apply_editor(prev_img, base.masks, rb, editor_paradigm('S'), hash_seed(s, 3));
    Image pure_s = apply_editor(base.img, base.masks, rb, editor_paradigm('S'), hash_seed(s, 3));
    const BandFeatures bf = band_features(final_img);
    const double to_s = bf.l2_dist(band_features(pure_s));
    const double to_prev = bf.l2_dist(band_features(prev_img));
    if (to_s < to_prev) ++ok;
  }
  return (double)ok / trials;
}

}  // namespace mat
