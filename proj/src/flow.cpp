#include "naref/flow.hpp"

#include "naref/binary_io.hpp"
#include "naref/error.hpp"
#include "naref/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace naref {

namespace {

Plane downsample2(const Plane& p) {
  const Eigen::Index h = p.rows() / 2;
  const Eigen::Index w = p.cols() / 2;
  Plane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = 0.25f * (p(2 * y, 2 * x) + p(2 * y, 2 * x + 1) + p(2 * y + 1, 2 * x) +
                           p(2 * y + 1, 2 * x + 1));
  return out;
}

struct Displacement {
  int dx = 0;
  int dy = 0;
};

// SAD between the block of `curr` at (x0, y0) and `prev` displaced by -d.
// Reads from `prev` use clamped coordinates.
float block_sad(const Plane& prev, const Plane& curr, int x0, int y0, int bw, int bh,
                Displacement d) {
  const int max_x = static_cast<int>(prev.cols()) - 1;
  const int max_y = static_cast<int>(prev.rows()) - 1;
  float sad = 0.0f;
  for (int y = y0; y < y0 + bh; ++y) {
    const int sy = std::clamp(y - d.dy, 0, max_y);
    for (int x = x0; x < x0 + bw; ++x) {
      const int sx = std::clamp(x - d.dx, 0, max_x);
      sad += std::abs(curr(y, x) - prev(sy, sx));
    }
  }
  return sad;
}

Displacement search_block(const Plane& prev, const Plane& curr, int x0, int y0, int bw, int bh,
                          Displacement center, int radius) {
  Displacement best = center;
  float best_cost = 0.0f;
  long best_mag = 0;
  bool have = false;
  for (int dy = center.dy - radius; dy <= center.dy + radius; ++dy) {
    for (int dx = center.dx - radius; dx <= center.dx + radius; ++dx) {
      const float cost = block_sad(prev, curr, x0, y0, bw, bh, {dx, dy});
      const long mag = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
      if (!have || cost < best_cost || (cost == best_cost && mag < best_mag)) {
        best = {dx, dy};
        best_cost = cost;
        best_mag = mag;
        have = true;
      }
    }
  }
  return best;
}

struct BlockFlow {
  int nbx = 0;
  int nby = 0;
  std::vector<Displacement> d;

  const Displacement& at(int bx, int by) const { return d[static_cast<std::size_t>(by) * nbx + bx]; }
};

BlockFlow match_level(const Plane& prev, const Plane& curr, const BlockFlow* parent,
                      const FlowOptions& opts) {
  const int w = static_cast<int>(curr.cols());
  const int h = static_cast<int>(curr.rows());
  BlockFlow out;
  out.nbx = (w + opts.block - 1) / opts.block;
  out.nby = (h + opts.block - 1) / opts.block;
  out.d.resize(static_cast<std::size_t>(out.nbx) * out.nby);
  parallel_for(out.d.size(), opts.jobs, [&](std::size_t i) {
    const int bx = static_cast<int>(i) % out.nbx;
    const int by = static_cast<int>(i) / out.nbx;
    const int x0 = bx * opts.block;
    const int y0 = by * opts.block;
    const int bw = std::min(opts.block, w - x0);
    const int bh = std::min(opts.block, h - y0);
    Displacement center;
    int radius = opts.coarse_radius;
    if (parent) {
      const auto& up = parent->at(std::min(bx / 2, parent->nbx - 1), std::min(by / 2, parent->nby - 1));
      center = {2 * up.dx, 2 * up.dy};
      radius = opts.refine_radius;
    }
    out.d[i] = search_block(prev, curr, x0, y0, bw, bh, center, radius);
  });
  return out;
}

IntPlane median3x3(const IntPlane& in) {
  const auto h = static_cast<int>(in.rows());
  const auto w = static_cast<int>(in.cols());
  IntPlane out(h, w);
  std::array<int, 9> window{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          window[k++] = in(std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
      std::nth_element(window.begin(), window.begin() + 4, window.end());
      out(y, x) = window[4];
    }
  return out;
}

}  // namespace

int max_search_radius(const FlowOptions& opts) {
  int r = opts.coarse_radius;
  for (int l = 1; l < opts.levels; ++l) r = 2 * r + opts.refine_radius;
  return r;
}

FlowField estimate_flow(const Image& prev, const Image& curr, const FlowOptions& opts) {
  if (prev.width() != curr.width() || prev.height() != curr.height()) {
    throw Error(ErrorKind::ShapeMismatch, "estimate_flow: frame dimensions differ");
  }
  if (std::min(prev.width(), prev.height()) < 32) {
    throw Error(ErrorKind::InvalidArgument, "estimate_flow: frames must be at least 32x32");
  }
  if (opts.levels < 1 || opts.block < 1) {
    throw Error(ErrorKind::InvalidArgument, "estimate_flow: invalid options");
  }
  std::vector<Plane> prev_pyr{luma_plane(prev)};
  std::vector<Plane> curr_pyr{luma_plane(curr)};
  for (int l = 1; l < opts.levels; ++l) {
    prev_pyr.push_back(downsample2(prev_pyr.back()));
    curr_pyr.push_back(downsample2(curr_pyr.back()));
  }
  BlockFlow blocks;
  for (int l = opts.levels - 1; l >= 0; --l) {
    const bool coarsest = l == opts.levels - 1;
    blocks = match_level(prev_pyr[l], curr_pyr[l], coarsest ? nullptr : &blocks, opts);
  }
  FlowField flow;
  flow.width = curr.width();
  flow.height = curr.height();
  IntPlane u(flow.height, flow.width);
  IntPlane v(flow.height, flow.width);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const auto& d = blocks.at(std::min(x / opts.block, blocks.nbx - 1),
                                std::min(y / opts.block, blocks.nby - 1));
      u(y, x) = d.dx;
      v(y, x) = d.dy;
    }
  flow.u = median3x3(u);
  flow.v = median3x3(v);
  return flow;
}

Plane flow_magnitude(const FlowField& flow) {
  const auto uf = flow.u.cast<float>();
  const auto vf = flow.v.cast<float>();
  return (uf * uf + vf * vf).sqrt();
}

std::size_t troi_pixel_count(double coverage, std::size_t n) {
  // The epsilon keeps e.g. 0.85 * 100 = 85.000000000000014 from rounding up.
  const double raw = coverage * static_cast<double>(n);
  const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::min(count, n);
}

namespace {

MaskBits dilate3(const MaskBits& in) {
  const auto h = static_cast<int>(in.rows());
  const auto w = static_cast<int>(in.cols());
  MaskBits out = MaskBits::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t any = 0;
      for (int dy = -1; dy <= 1 && !any; ++dy)
        for (int dx = -1; dx <= 1 && !any; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w && in(yy, xx)) any = 1;
        }
      out(y, x) = any;
    }
  return out;
}

MaskBits erode3(const MaskBits& in) {
  const auto h = static_cast<int>(in.rows());
  const auto w = static_cast<int>(in.cols());
  MaskBits out = MaskBits::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t all = 1;
      for (int dy = -1; dy <= 1 && all; ++dy)
        for (int dx = -1; dx <= 1 && all; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w && !in(yy, xx)) all = 0;
        }
      out(y, x) = all;
    }
  return out;
}

void remove_small_components(MaskBits& bits, int min_size) {
  const auto h = static_cast<int>(bits.rows());
  const auto w = static_cast<int>(bits.cols());
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<int> stack;
  std::vector<int> members;
  for (int start = 0; start < w * h; ++start) {
    if (label[start] >= 0 || !bits(start / w, start % w)) continue;
    members.clear();
    stack.assign(1, start);
    label[start] = start;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int py = p / w;
      const int px = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = py + dy;
          const int xx = px + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (label[q] < 0 && bits(yy, xx)) {
            label[q] = start;
            stack.push_back(q);
          }
        }
    }
    if (static_cast<int>(members.size()) < min_size) {
      for (int p : members) bits(p / w, p % w) = 0;
    }
  }
}

}  // namespace

TroiMask troi_from_flow(const Plane& magnitude, double coverage, const TroiOptions& opts) {
  if (magnitude.size() == 0) throw Error(ErrorKind::InvalidArgument, "troi_from_flow: empty map");
  if (!opts.allow_any_coverage && (coverage < 0.30 - 1e-12 || coverage > 0.85 + 1e-12)) {
    throw Error(ErrorKind::InvalidArgument,
                "coverage " + std::to_string(coverage) + " outside [0.30, 0.85]");
  }
  if (!(coverage >= 0.0 && coverage <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "coverage must lie in [0, 1]");
  }
  const auto h = static_cast<int>(magnitude.rows());
  const auto w = static_cast<int>(magnitude.cols());
  const auto n = static_cast<std::size_t>(w) * h;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto mag_at = [&](std::size_t i) { return magnitude(static_cast<int>(i / w), static_cast<int>(i % w)); };
  const std::size_t keep = troi_pixel_count(coverage, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const float ma = mag_at(a);
                      const float mb = mag_at(b);
                      return ma > mb || (ma == mb && a < b);
                    });
  TroiMask mask;
  mask.width = w;
  mask.height = h;
  mask.requested_coverage = coverage;
  mask.bits = MaskBits::Zero(h, w);
  for (std::size_t k = 0; k < keep; ++k) {
    mask.bits(static_cast<int>(order[k] / w), static_cast<int>(order[k] % w)) = 1;
  }
  mask.pre_cleanup_count = keep;
  const auto floor_pixels = static_cast<std::size_t>(opts.min_component) * opts.min_component;
  if (opts.cleanup && n >= floor_pixels) {
    mask.bits = erode3(dilate3(mask.bits));
    remove_small_components(mask.bits, opts.min_component);
  }
  mask.coverage = static_cast<double>(mask.count()) / static_cast<double>(n);
  return mask;
}

TroiMask uniform_mask(int width, int height, bool on) {
  TroiMask mask;
  mask.width = width;
  mask.height = height;
  mask.bits = MaskBits::Constant(height, width, on ? 1 : 0);
  mask.requested_coverage = on ? 1.0 : 0.0;
  mask.coverage = mask.requested_coverage;
  mask.pre_cleanup_count = on ? static_cast<std::size_t>(width) * height : 0;
  return mask;
}

namespace {

struct Tap {
  int dx, dy;
  double w;
};

std::vector<Tap> disk_taps(double sigma, double radius) {
  std::vector<Tap> taps;
  const int r = static_cast<int>(std::floor(radius));
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double d2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
      if (d2 > radius * radius) continue;
      const double wt = sigma > 0.0 ? std::exp(-d2 / (2.0 * sigma * sigma)) : 1.0;
      taps.push_back({dx, dy, wt});
      total += wt;
    }
  for (auto& t : taps) t.w /= total;
  return taps;
}

}  // namespace

TroiMask feather_mask(TroiMask mask, double sigma) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "feather sigma must be >= 0");
  const int h = mask.height;
  const int w = mask.width;
  const auto taps = disk_taps(sigma, 3.0 * sigma);
  mask.soft = Plane::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      std::size_t hits = 0;
      for (const auto& t : taps) {
        const int yy = std::clamp(y + t.dy, 0, h - 1);
        const int xx = std::clamp(x + t.dx, 0, w - 1);
        if (mask.bits(yy, xx)) {
          acc += t.w;
          ++hits;
        }
      }
      float v = 0.0f;
      if (hits == taps.size()) {
        v = 1.0f;
      } else if (hits > 0) {
        v = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
      mask.soft(y, x) = v;
    }
  mask.feather_sigma = sigma;
  return mask;
}

MaskBits dilate_disk(const MaskBits& bits, double radius) {
  const auto h = static_cast<int>(bits.rows());
  const auto w = static_cast<int>(bits.cols());
  const auto taps = disk_taps(0.0, radius);
  MaskBits out = MaskBits::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!bits(y, x)) continue;
      for (const auto& t : taps) {
        const int yy = y + t.dy;
        const int xx = x + t.dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) out(yy, xx) = 1;
      }
    }
  return out;
}

void write_flow(const FlowField& flow, const std::filesystem::path& path) {
  binio::Writer out;
  out.magic("NVFL");
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(flow.width));
  out.u32(static_cast<std::uint32_t>(flow.height));
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      out.i16(static_cast<std::int16_t>(flow.u(y, x)));
      out.i16(static_cast<std::int16_t>(flow.v(y, x)));
    }
  out.save(path);
}

FlowField read_flow(const std::filesystem::path& path) {
  auto in = binio::Reader::from_file(path);
  if (in.magic() != "NVFL") throw Error(ErrorKind::Format, "bad flow magic in " + path.string());
  if (in.u16() != 1) throw Error(ErrorKind::Format, "unsupported flow version");
  FlowField flow;
  flow.width = static_cast<int>(in.u32());
  flow.height = static_cast<int>(in.u32());
  if (in.remaining() != static_cast<std::size_t>(flow.width) * flow.height * 4) {
    throw Error(ErrorKind::Format, "flow payload size mismatch");
  }
  flow.u.resize(flow.height, flow.width);
  flow.v.resize(flow.height, flow.width);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      flow.u(y, x) = in.i16();
      flow.v(y, x) = in.i16();
    }
  return flow;
}

void save_mask_png(const TroiMask& mask, const std::filesystem::path& path) {
  save_gray_png(mask.bits.cast<float>(), path);
}

}  // namespace naref
