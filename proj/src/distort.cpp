#include "naref/distort.hpp"

#include "naref/error.hpp"
#include "naref/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace naref {

namespace {

using Planes = std::array<Plane, 3>;

// ---------------------------------------------------------------------------
// Catalog table. Every row lists parameters for levels 1..5; level 1 sits near
// the visibility threshold and level 5 is strongly visible.

CatalogEntry entry(std::string id, std::string category, bool stochastic,
                   std::array<std::vector<double>, kDistortionLevels> levels) {
  return {std::move(id), std::move(category), stochastic, std::move(levels)};
}

DistortionCatalog build_catalog() {
  DistortionCatalog c;
  c.push_back(entry("gaussian-blur", "blur", false, {{{0.6}, {1.0}, {1.6}, {2.4}, {3.5}}}));
  c.push_back(entry("lens-blur", "blur", false, {{{1}, {2}, {3}, {4}, {6}}}));
  c.push_back(entry("motion-blur", "blur", false, {{{3, 30}, {5, 30}, {9, 30}, {13, 30}, {19, 30}}}));
  c.push_back(entry("hue-rotate", "color", false, {{{10}, {20}, {35}, {55}, {80}}}));
  c.push_back(entry("saturate-up", "color", false, {{{1.3}, {1.6}, {2.0}, {2.6}, {3.4}}}));
  c.push_back(entry("saturate-down", "color", false, {{{0.8}, {0.6}, {0.4}, {0.2}, {0.0}}}));
  c.push_back(entry("color-quantize", "color", false, {{{48}, {24}, {12}, {6}, {3}}}));
  c.push_back(entry("chromatic-aberration", "color", false, {{{1}, {2}, {3}, {4}, {6}}}));
  c.push_back(entry("block-dct-quantize", "compression", false, {{{0.5}, {1}, {2}, {4}, {8}}}));
  c.push_back(entry("block-average", "compression", false, {{{2}, {3}, {4}, {6}, {8}}}));
  c.push_back(entry("bit-depth-banding", "compression", false, {{{6}, {5}, {4}, {3}, {2}}}));
  c.push_back(entry("gaussian-luma", "noise", true, {{{0.01}, {0.03}, {0.06}, {0.10}, {0.16}}}));
  c.push_back(entry("gaussian-color", "noise", true, {{{0.01}, {0.03}, {0.06}, {0.10}, {0.16}}}));
  c.push_back(entry("impulse", "noise", true, {{{0.005}, {0.02}, {0.05}, {0.10}, {0.20}}}));
  c.push_back(entry("speckle", "noise", true, {{{0.05}, {0.10}, {0.20}, {0.35}, {0.50}}}));
  c.push_back(entry("poisson-like", "noise", true, {{{400}, {120}, {40}, {12}, {4}}}));
  c.push_back(entry("over-box-smooth", "denoise", false, {{{1}, {2}, {3}, {4}, {6}}}));
  c.push_back(entry("over-median-smooth", "denoise", false, {{{1}, {2}, {3}, {4}, {5}}}));
  c.push_back(entry("brighten", "brightness", false, {{{0.04}, {0.08}, {0.14}, {0.22}, {0.32}}}));
  c.push_back(entry("darken", "brightness", false, {{{0.04}, {0.08}, {0.14}, {0.22}, {0.32}}}));
  c.push_back(entry("vignette", "brightness", false, {{{0.15}, {0.3}, {0.45}, {0.6}, {0.8}}}));
  c.push_back(entry("illumination-gradient", "brightness", false, {{{0.1}, {0.2}, {0.3}, {0.45}, {0.6}}}));
  c.push_back(entry("nearest-down-up", "downsample", false, {{{2}, {3}, {4}, {6}, {8}}}));
  c.push_back(entry("bilinear-down-up", "downsample", false, {{{1.5}, {2}, {3}, {4}, {6}}}));
  c.push_back(entry("unsharp-overshoot", "sharpen", false,
                    {{{0.5, 1.5}, {1.0, 1.5}, {1.8, 1.5}, {2.8, 1.5}, {4.0, 1.5}}}));
  c.push_back(entry("highpass-boost", "sharpen", false, {{{0.3}, {0.6}, {1.0}, {1.6}, {2.4}}}));
  c.push_back(entry("contrast-up", "contrast", false, {{{1.2}, {1.4}, {1.7}, {2.1}, {2.6}}}));
  c.push_back(entry("contrast-down", "contrast", false, {{{0.85}, {0.7}, {0.55}, {0.4}, {0.25}}}));
  c.push_back(entry("gamma-up", "contrast", false, {{{1.2}, {1.45}, {1.8}, {2.3}, {3.0}}}));
  c.push_back(entry("gamma-down", "contrast", false, {{{0.83}, {0.69}, {0.55}, {0.43}, {0.33}}}));
  c.push_back(entry("micro-translation", "geometric", false, {{{1, 0}, {2, 1}, {3, 1}, {4, 2}, {6, 3}}}));
  c.push_back(entry("sinusoidal-warp", "geometric", false,
                    {{{0.5, 24}, {1, 24}, {2, 24}, {3, 24}, {5, 24}}}));
  c.push_back(entry("patch-jitter", "geometric", true, {{{16, 1}, {16, 2}, {16, 3}, {16, 5}, {16, 8}}}));
  c.push_back(entry("ghosting-overlay", "geometric", false,
                    {{{0.1, 10, 4}, {0.2, 10, 4}, {0.3, 10, 4}, {0.4, 10, 4}, {0.5, 10, 4}}}));
  return c;
}

// ---------------------------------------------------------------------------
// Plane helpers. All reads outside the frame replicate the border.

int clampi(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

float sample_bilinear(const Plane& p, double x, double y) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const auto tx = static_cast<float>(x - x0);
  const auto ty = static_cast<float>(y - y0);
  const float a = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * tx;
  const float b = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * tx;
  return a + (b - a) * ty;
}

Plane shift_clamped(const Plane& p, int dx, int dy) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = p(clampi(y - dy, 0, h - 1), clampi(x - dx, 0, w - 1));
  return out;
}

Plane convolve_separable(const Plane& p, const std::vector<float>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Plane tmp(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * p(y, clampi(x + k, 0, w - 1));
      tmp(y, x) = acc;
    }
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * tmp(clampi(y + k, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

Plane gaussian_blur(const Plane& p, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (int i = -r; i <= r; ++i)
    k[i + r] = static_cast<float>(std::exp(-(i * i) / (2.0 * sigma * sigma)) / total);
  return convolve_separable(p, k);
}

Plane box_blur(const Plane& p, int r) {
  return convolve_separable(p, std::vector<float>(static_cast<std::size_t>(2 * r + 1), 1.0f / (2 * r + 1)));
}

Plane disk_blur(const Plane& p, int r) {
  std::vector<std::pair<int, int>> taps;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) taps.emplace_back(dx, dy);
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  const float norm = 1.0f / static_cast<float>(taps.size());
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (const auto& [dx, dy] : taps) acc += p(clampi(y + dy, 0, h - 1), clampi(x + dx, 0, w - 1));
      out(y, x) = acc * norm;
    }
  return out;
}

Plane motion_blur(const Plane& p, double length, double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ux = std::cos(a);
  const double uy = std::sin(a);
  const int taps = std::max(1, static_cast<int>(std::lround(length)));
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int t = 0; t < taps; ++t) {
        const double s = t - (taps - 1) / 2.0;
        acc += sample_bilinear(p, x + s * ux, y + s * uy);
      }
      out(y, x) = acc / static_cast<float>(taps);
    }
  return out;
}

Plane median_filter(const Plane& p, int r) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Plane out(h, w);
  std::vector<float> window(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
  const auto mid = static_cast<std::ptrdiff_t>(window.size() / 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) window[k++] = p(clampi(y + dy, 0, h - 1), clampi(x + dx, 0, w - 1));
      std::nth_element(window.begin(), window.begin() + mid, window.end());
      out(y, x) = window[static_cast<std::size_t>(mid)];
    }
  return out;
}

Plane laplacian(const Plane& p) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = p(clampi(y - 1, 0, h - 1), x) + p(clampi(y + 1, 0, h - 1), x) +
                  p(y, clampi(x - 1, 0, w - 1)) + p(y, clampi(x + 1, 0, w - 1)) - 4.0f * p(y, x);
  return out;
}

// BT.601 full range on unit floats, plane-wise.
Planes rgb_to_ycc(const Planes& rgb) {
  const Plane& r = rgb[0];
  const Plane& g = rgb[1];
  const Plane& b = rgb[2];
  return {0.299f * r + 0.587f * g + 0.114f * b, 0.5f - 0.168736f * r - 0.331264f * g + 0.5f * b,
          0.5f + 0.5f * r - 0.418688f * g - 0.081312f * b};
}

Planes ycc_to_rgb(const Planes& ycc) {
  const Plane u = ycc[1] - 0.5f;
  const Plane v = ycc[2] - 0.5f;
  return {ycc[0] + 1.402f * v, ycc[0] - 0.344136f * u - 0.714136f * v, ycc[0] + 1.772f * u};
}

template <typename Fn>
Planes per_channel(const Planes& in, Fn&& fn) {
  return {fn(in[0]), fn(in[1]), fn(in[2])};
}

constexpr int kLumaTable[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaTable[64] = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

using Block8 = Eigen::Matrix<double, 8, 8>;

const Block8& dct_basis() {
  static const Block8 basis = [] {
    Block8 c;
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        c(u, x) = (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                  std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    return c;
  }();
  return basis;
}

// 8x8 block DCT quantization in the 0..255 domain (no entropy coding).
Plane dct_quantize(const Plane& p, const int* table, double scale) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  const Block8& c = dct_basis();
  Plane out(h, w);
  for (int by = 0; by < h; by += 8)
    for (int bx = 0; bx < w; bx += 8) {
      Block8 block;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          block(y, x) = 255.0 * p(clampi(by + y, 0, h - 1), clampi(bx + x, 0, w - 1)) - 128.0;
      Block8 coeff = c * block * c.transpose();
      for (int i = 0; i < 64; ++i) {
        const double step = std::max(1.0, table[i] * scale);
        coeff(i / 8, i % 8) = std::round(coeff(i / 8, i % 8) / step) * step;
      }
      const Block8 rec = c.transpose() * coeff * c;
      for (int y = 0; y < 8 && by + y < h; ++y)
        for (int x = 0; x < 8 && bx + x < w; ++x)
          out(by + y, bx + x) = static_cast<float>((rec(y, x) + 128.0) / 255.0);
    }
  return out;
}

Plane quantize_levels(const Plane& p, double levels) {
  const float n = static_cast<float>(levels - 1.0);
  return (p.max(0.0f).min(1.0f) * n).round() / n;
}

// ---------------------------------------------------------------------------
// Generators. `key` seeds counter-based noise for stochastic types.

struct Context {
  const Planes& rgb;
  const std::vector<double>& p;
  std::uint64_t key;
  int w;
  int h;
};

using Generator = std::function<Planes(const Context&)>;

float noise_normal(const Context& ctx, int x, int y, int c) {
  return static_cast<float>(counter_normal(ctx.key, (static_cast<std::uint64_t>(y) * ctx.w + x) * 3 + c));
}

const std::map<std::string, Generator, std::less<>>& generators() {
  static const std::map<std::string, Generator, std::less<>> table = {
      {"gaussian-blur",
       [](const Context& c) { return per_channel(c.rgb, [&](const Plane& p) { return gaussian_blur(p, c.p[0]); }); }},
      {"lens-blur",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) { return disk_blur(p, static_cast<int>(c.p[0])); });
       }},
      {"motion-blur",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) { return motion_blur(p, c.p[0], c.p[1]); });
       }},
      {"hue-rotate",
       [](const Context& c) {
         Planes ycc = rgb_to_ycc(c.rgb);
         const double a = c.p[0] * std::numbers::pi / 180.0;
         const auto cs = static_cast<float>(std::cos(a));
         const auto sn = static_cast<float>(std::sin(a));
         const Plane u = ycc[1] - 0.5f;
         const Plane v = ycc[2] - 0.5f;
         ycc[1] = 0.5f + cs * u - sn * v;
         ycc[2] = 0.5f + sn * u + cs * v;
         return ycc_to_rgb(ycc);
       }},
      {"saturate-up",
       [](const Context& c) {
         Planes ycc = rgb_to_ycc(c.rgb);
         const auto s = static_cast<float>(c.p[0]);
         ycc[1] = 0.5f + s * (ycc[1] - 0.5f);
         ycc[2] = 0.5f + s * (ycc[2] - 0.5f);
         return ycc_to_rgb(ycc);
       }},
      {"saturate-down",
       [](const Context& c) {
         Planes ycc = rgb_to_ycc(c.rgb);
         const auto s = static_cast<float>(c.p[0]);
         ycc[1] = 0.5f + s * (ycc[1] - 0.5f);
         ycc[2] = 0.5f + s * (ycc[2] - 0.5f);
         return ycc_to_rgb(ycc);
       }},
      {"color-quantize",
       [](const Context& c) { return per_channel(c.rgb, [&](const Plane& p) { return quantize_levels(p, c.p[0]); }); }},
      {"chromatic-aberration",
       [](const Context& c) {
         const int d = static_cast<int>(c.p[0]);
         return Planes{shift_clamped(c.rgb[0], d, 0), c.rgb[1], shift_clamped(c.rgb[2], -d, 0)};
       }},
      {"block-dct-quantize",
       [](const Context& c) {
         Planes ycc = rgb_to_ycc(c.rgb);
         ycc[0] = dct_quantize(ycc[0], kLumaTable, c.p[0]);
         ycc[1] = dct_quantize(ycc[1], kChromaTable, c.p[0]);
         ycc[2] = dct_quantize(ycc[2], kChromaTable, c.p[0]);
         return ycc_to_rgb(ycc);
       }},
      {"block-average",
       [](const Context& c) {
         const int b = static_cast<int>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) {
           Plane out(c.h, c.w);
           for (int by = 0; by < c.h; by += b)
             for (int bx = 0; bx < c.w; bx += b) {
               const int bh = std::min(b, c.h - by);
               const int bw = std::min(b, c.w - bx);
               out.block(by, bx, bh, bw).setConstant(p.block(by, bx, bh, bw).mean());
             }
           return out;
         });
       }},
      {"bit-depth-banding",
       [](const Context& c) {
         Planes ycc = rgb_to_ycc(c.rgb);
         ycc[0] = quantize_levels(ycc[0], std::exp2(c.p[0]));
         return ycc_to_rgb(ycc);
       }},
      {"gaussian-luma",
       [](const Context& c) {
         Planes out = c.rgb;
         const auto s = static_cast<float>(c.p[0]);
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x) {
             const float n = s * noise_normal(c, x, y, 0);
             for (auto& p : out) p(y, x) += n;
           }
         return out;
       }},
      {"gaussian-color",
       [](const Context& c) {
         Planes out = c.rgb;
         const auto s = static_cast<float>(c.p[0]);
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x)
             for (int ch = 0; ch < 3; ++ch) out[ch](y, x) += s * noise_normal(c, x, y, ch);
         return out;
       }},
      {"impulse",
       [](const Context& c) {
         Planes out = c.rgb;
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x) {
             const auto idx = static_cast<std::uint64_t>(y) * c.w + x;
             if (counter_uniform(c.key, 2 * idx) >= c.p[0]) continue;
             const float v = counter_uniform(c.key, 2 * idx + 1) < 0.5 ? 0.0f : 1.0f;
             for (auto& p : out) p(y, x) = v;
           }
         return out;
       }},
      {"speckle",
       [](const Context& c) {
         Planes out = c.rgb;
         const auto s = static_cast<float>(c.p[0]);
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x)
             for (int ch = 0; ch < 3; ++ch) out[ch](y, x) *= 1.0f + s * noise_normal(c, x, y, ch);
         return out;
       }},
      {"poisson-like",
       [](const Context& c) {
         Planes out = c.rgb;
         const double peak = c.p[0];
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x)
             for (int ch = 0; ch < 3; ++ch) {
               const double v = out[ch](y, x);
               out[ch](y, x) = static_cast<float>(v + std::sqrt(std::max(v, 0.0) / peak) * noise_normal(c, x, y, ch));
             }
         return out;
       }},
      {"over-box-smooth",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) { return box_blur(p, static_cast<int>(c.p[0])); });
       }},
      {"over-median-smooth",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) { return median_filter(p, static_cast<int>(c.p[0])); });
       }},
      {"brighten",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p + static_cast<float>(c.p[0]); });
       }},
      {"darken",
       [](const Context& c) {
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p - static_cast<float>(c.p[0]); });
       }},
      {"vignette",
       [](const Context& c) {
         Plane gain(c.h, c.w);
         const double cx = (c.w - 1) / 2.0;
         const double cy = (c.h - 1) / 2.0;
         const double r2max = cx * cx + cy * cy;
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x) {
             const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
             gain(y, x) = static_cast<float>(1.0 - c.p[0] * r2 / std::max(r2max, 1.0));
           }
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p * gain; });
       }},
      {"illumination-gradient",
       [](const Context& c) {
         Plane gain(c.h, c.w);
         for (int y = 0; y < c.h; ++y)
           for (int x = 0; x < c.w; ++x) {
             const double t = 0.5 * (x / std::max(1.0, c.w - 1.0) + y / std::max(1.0, c.h - 1.0));
             gain(y, x) = static_cast<float>(1.0 + c.p[0] * (2.0 * t - 1.0));
           }
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p * gain; });
       }},
      {"nearest-down-up",
       [](const Context& c) {
         const double f = c.p[0];
         const int sw = std::max(1, static_cast<int>(std::lround(c.w / f)));
         const int sh = std::max(1, static_cast<int>(std::lround(c.h / f)));
         return per_channel(c.rgb, [&](const Plane& p) {
           Plane out(c.h, c.w);
           for (int y = 0; y < c.h; ++y)
             for (int x = 0; x < c.w; ++x) {
               // Nearest sample of the small grid, then of the original.
               const int sx = std::min(sw - 1, static_cast<int>((x + 0.5) * sw / c.w));
               const int sy = std::min(sh - 1, static_cast<int>((y + 0.5) * sh / c.h));
               const int ox = std::min(c.w - 1, static_cast<int>((sx + 0.5) * c.w / sw));
               const int oy = std::min(c.h - 1, static_cast<int>((sy + 0.5) * c.h / sh));
               out(y, x) = p(oy, ox);
             }
           return out;
         });
       }},
      {"bilinear-down-up",
       [](const Context& c) {
         const int sw = std::max(1, static_cast<int>(std::lround(c.w / c.p[0])));
         const int sh = std::max(1, static_cast<int>(std::lround(c.h / c.p[0])));
         return per_channel(c.rgb, [&](const Plane& p) {
           return resize_bilinear(resize_bilinear(p, sw, sh), c.w, c.h);
         });
       }},
      {"unsharp-overshoot",
       [](const Context& c) {
         const auto a = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p + a * (p - gaussian_blur(p, c.p[1])); });
       }},
      {"highpass-boost",
       [](const Context& c) {
         const auto a = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p - a * laplacian(p); });
       }},
      {"contrast-up",
       [](const Context& c) {
         const auto k = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return 0.5f + k * (p - 0.5f); });
       }},
      {"contrast-down",
       [](const Context& c) {
         const auto k = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return 0.5f + k * (p - 0.5f); });
       }},
      {"gamma-up",
       [](const Context& c) {
         const auto g = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p.max(0.0f).pow(g); });
       }},
      {"gamma-down",
       [](const Context& c) {
         const auto g = static_cast<float>(c.p[0]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane { return p.max(0.0f).pow(g); });
       }},
      {"micro-translation",
       [](const Context& c) {
         const int dx = static_cast<int>(c.p[0]);
         const int dy = static_cast<int>(c.p[1]);
         return per_channel(c.rgb, [&](const Plane& p) { return shift_clamped(p, dx, dy); });
       }},
      {"sinusoidal-warp",
       [](const Context& c) {
         const double amp = c.p[0];
         const double k = 2.0 * std::numbers::pi / c.p[1];
         return per_channel(c.rgb, [&](const Plane& p) {
           Plane out(c.h, c.w);
           for (int y = 0; y < c.h; ++y)
             for (int x = 0; x < c.w; ++x)
               out(y, x) = sample_bilinear(p, x + amp * std::sin(k * y), y + amp * std::sin(k * x));
           return out;
         });
       }},
      {"patch-jitter",
       [](const Context& c) {
         const int b = static_cast<int>(c.p[0]);
         const double d = c.p[1];
         const int nbx = (c.w + b - 1) / b;
         return per_channel(c.rgb, [&](const Plane& p) {
           Plane out(c.h, c.w);
           for (int y = 0; y < c.h; ++y)
             for (int x = 0; x < c.w; ++x) {
               const auto block = static_cast<std::uint64_t>(y / b) * nbx + static_cast<std::uint64_t>(x / b);
               const int ox = static_cast<int>(std::lround(d * (2.0 * counter_uniform(c.key, 2 * block) - 1.0)));
               const int oy = static_cast<int>(std::lround(d * (2.0 * counter_uniform(c.key, 2 * block + 1) - 1.0)));
               out(y, x) = p(clampi(y - oy, 0, c.h - 1), clampi(x - ox, 0, c.w - 1));
             }
           return out;
         });
       }},
      {"ghosting-overlay",
       [](const Context& c) {
         const auto wgt = static_cast<float>(c.p[0]);
         const int dx = static_cast<int>(c.p[1]);
         const int dy = static_cast<int>(c.p[2]);
         return per_channel(c.rgb, [&](const Plane& p) -> Plane {
           return (1.0f - wgt) * p + wgt * shift_clamped(p, dx, dy);
         });
       }},
  };
  return table;
}

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const DistortionCatalog& catalog_list() {
  static const DistortionCatalog catalog = build_catalog();
  return catalog;
}

std::size_t catalog_index(std::string_view type_id) {
  const auto& catalog = catalog_list();
  for (std::size_t i = 0; i < catalog.size(); ++i)
    if (catalog[i].type_id == type_id) return i;
  throw Error(ErrorKind::UnknownType, "unknown distortion type '" + std::string(type_id) + "'");
}

const CatalogEntry& catalog_entry(std::string_view type_id) {
  return catalog_list()[catalog_index(type_id)];
}

std::string catalog_to_csv(const DistortionCatalog& catalog) {
  std::ostringstream out;
  out << "# naref distortion catalog, version " << kCatalogVersion << "\n";
  out << "type_id,category,stochastic,level,p1,p2,p3\n";
  for (const auto& e : catalog) {
    for (int l = 0; l < kDistortionLevels; ++l) {
      out << e.type_id << ',' << e.category << ',' << (e.stochastic ? 1 : 0) << ',' << (l + 1);
      for (std::size_t k = 0; k < 3; ++k) {
        out << ',';
        if (k < e.levels[l].size()) out << format_number(e.levels[l][k]);
      }
      out << '\n';
    }
  }
  return out.str();
}

DistortionCatalog catalog_from_csv(std::string_view text) {
  DistortionCatalog catalog;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("type_id,", 0) != 0) throw Error(ErrorKind::Parse, "catalog: missing header");
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() < 4) throw Error(ErrorKind::Parse, "catalog line " + std::to_string(line_no) + ": too few fields");
    const int level = std::stoi(cells[3]);
    if (level < 1 || level > kDistortionLevels) {
      throw Error(ErrorKind::Parse, "catalog line " + std::to_string(line_no) + ": bad level");
    }
    if (catalog.empty() || catalog.back().type_id != cells[0]) {
      if (level != 1) throw Error(ErrorKind::Parse, "catalog line " + std::to_string(line_no) + ": levels out of order");
      catalog.push_back({cells[0], cells[1], cells[2] == "1", {}});
    }
    std::vector<double> params;
    for (std::size_t k = 4; k < cells.size(); ++k) {
      if (!cells[k].empty()) params.push_back(std::stod(cells[k]));
    }
    catalog.back().levels[level - 1] = std::move(params);
  }
  return catalog;
}

std::vector<double> resolve_params(const DistortionSpec& spec) {
  const CatalogEntry& e = catalog_entry(spec.type_id);
  if (spec.level < 1 || spec.level > kDistortionLevels) {
    throw Error(ErrorKind::InvalidArgument, "distortion level must be in 1..5, got " + std::to_string(spec.level));
  }
  if (spec.params.empty()) return e.levels[spec.level - 1];
  if (spec.params.size() != e.arity()) {
    throw Error(ErrorKind::InvalidArgument, "parameter arity mismatch for " + spec.type_id);
  }
  return spec.params;
}

std::array<Plane, 3> distort_planes(const Image& img, const DistortionSpec& spec) {
  const std::vector<double> params = resolve_params(spec);
  if (img.width() < 32 || img.height() < 32) {
    throw Error(ErrorKind::InvalidArgument, "apply_distortion: image must be at least 32x32");
  }
  const Planes rgb = to_planes(img);
  const std::uint64_t key = derive_seed(spec.seed, {fnv1a64(spec.type_id), static_cast<std::uint64_t>(spec.level)});
  const Context ctx{rgb, params, key, img.width(), img.height()};
  Planes out = generators().find(spec.type_id)->second(ctx);
  for (auto& p : out) p = p.unaryExpr([](float v) { return std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f); });
  return out;
}

Image apply_distortion(const Image& img, const DistortionSpec& spec) {
  Image out = from_planes(distort_planes(img, spec), img.color_space());
  return img.sample_type() == SampleType::U8 ? out.to_u8() : out;
}

Image apply_masked(const Image& img, const DistortionSpec& spec, const TroiMask& mask) {
  if (mask.width != img.width() || mask.height != img.height()) {
    throw Error(ErrorKind::ShapeMismatch, "apply_masked: mask and image dimensions differ");
  }
  if (!mask.has_soft()) throw Error(ErrorKind::InvalidArgument, "apply_masked: mask has no soft weights");
  const Planes d = distort_planes(img, spec);
  const bool bytes = img.sample_type() == SampleType::U8;
  std::vector<std::uint8_t> out8;
  std::vector<float> outf;
  if (bytes) out8.assign(img.u8().begin(), img.u8().end());
  else outf.assign(img.f32().begin(), img.f32().end());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const float s = mask.soft(y, x);
      if (s == 0.0f) continue;
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = img.index(x, y, c);
        const float v = s * d[c](y, x) + (1.0f - s) * img.sample(i);
        if (bytes) out8[i] = quantize_unit(v);
        else outf[i] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  if (bytes) return Image(img.width(), img.height(), std::move(out8), img.color_space());
  return Image(img.width(), img.height(), std::move(outf), img.color_space());
}

}  // namespace naref
