#include "fracmil/synthetic_pxr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <numbers>

#include "fracmil/image_io.hpp"
#include "fracmil/rng.hpp"

namespace fracmil {
namespace {

constexpr int kMaxPlacementTries = 200;
constexpr int kGtPadding = 4;

struct Ring {
  double cx, cy, rx, ry, thickness;
};

struct Point {
  double x, y;
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, IntRange r) {
  return std::uniform_int_distribution<int>(r.min, r.max)(rng);
}

// Coarse uniform noise on a (g x g) lattice, bilinearly upsampled.
void add_background(Grid2D<float>& img, Rng& rng) {
  const int s = img.rows();
  constexpr int g = 5;
  double lattice[g][g];
  for (auto& row : lattice) {
    for (double& v : row) v = uniform(rng, -0.06, 0.06);
  }
  std::normal_distribution<double> fine(0.0, 0.02);
  for (int y = 0; y < s; ++y) {
    const double fy = static_cast<double>(y) / (s - 1) * (g - 1);
    const int y0 = std::min(g - 2, static_cast<int>(fy));
    const double ty = fy - y0;
    for (int x = 0; x < s; ++x) {
      const double fx = static_cast<double>(x) / (s - 1) * (g - 1);
      const int x0 = std::min(g - 2, static_cast<int>(fx));
      const double tx = fx - x0;
      const double v = (1 - ty) * ((1 - tx) * lattice[y0][x0] + tx * lattice[y0][x0 + 1]) +
                       ty * ((1 - tx) * lattice[y0 + 1][x0] + tx * lattice[y0 + 1][x0 + 1]);
      img(y, x) = static_cast<float>(0.30 + v + fine(rng));
    }
  }
}

// Bright elliptical annulus with a faintly brighter interior.
void draw_ring(Grid2D<float>& img, const Ring& r, double brightness) {
  const int s = img.rows();
  const int x0 = std::max(0, static_cast<int>(r.cx - r.rx - r.thickness - 2));
  const int x1 = std::min(s - 1, static_cast<int>(r.cx + r.rx + r.thickness + 2));
  const int y0 = std::max(0, static_cast<int>(r.cy - r.ry - r.thickness - 2));
  const int y1 = std::min(s - 1, static_cast<int>(r.cy + r.ry + r.thickness + 2));
  const double mean_r = 0.5 * (r.rx + r.ry);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x - r.cx) / r.rx, dy = (y - r.cy) / r.ry;
      const double rho = std::sqrt(dx * dx + dy * dy);
      const double dist = std::abs(rho - 1.0) * mean_r;  // approx. pixels to the rim
      const double rim = std::clamp(r.thickness / 2 + 0.5 - dist, 0.0, 1.0);
      const double inside = rho < 1.0 ? 0.25 : 0.0;
      img(y, x) += static_cast<float>(brightness * std::max(rim, inside));
    }
  }
}

double point_segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Stroke coverage in [0,1] of every pixel for a polyline of given width.
Grid2D<float> polyline_coverage(int s, const std::vector<Point>& pts, double width) {
  Grid2D<float> cov(s, s, 0.0f);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const Point a = pts[k], b = pts[k + 1];
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - width - 1)));
    const int x1 = std::min(s - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + width + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - width - 1)));
    const int y1 = std::min(s - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + width + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d = point_segment_distance({double(x), double(y)}, a, b);
        const float c = static_cast<float>(std::clamp(width / 2 + 0.5 - d, 0.0, 1.0));
        cov(y, x) = std::max(cov(y, x), c);
      }
    }
  }
  return cov;
}

void darken(Grid2D<float>& img, const Grid2D<float>& cov, double contrast) {
  for (std::size_t k = 0; k < cov.size(); ++k) {
    img.data()[k] -= static_cast<float>(contrast) * cov.data()[k];
  }
}

Point point_on_ring(const Ring& r, Rng& rng) {
  const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return {r.cx + r.rx * std::cos(a), r.cy + r.ry * std::sin(a)};
}

// Straight dark segment through a point: the fracture confuser.
std::vector<Point> straight_line(Point c, double length, double angle) {
  const double ux = std::cos(angle), uy = std::sin(angle);
  return {{c.x - ux * length / 2, c.y - uy * length / 2}, {c.x + ux * length / 2, c.y + uy * length / 2}};
}

// Zig-zag polyline through a point along `angle`.
std::vector<Point> jagged_line(Point c, double length, double angle, Rng& rng) {
  const int segments = 8;
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double px = -uy, py = ux;
  std::vector<Point> pts;
  for (int k = 0; k <= segments; ++k) {
    const double t = (static_cast<double>(k) / segments - 0.5) * length;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    const double off = (k == 0 || k == segments) ? 0.0 : sign * uniform(rng, 5.0, 8.0);
    pts.push_back({c.x + ux * t + px * off, c.y + uy * t + py * off});
  }
  return pts;
}

struct Anatomy {
  Ring left_head, right_head, pelvis;
  std::vector<Ring> all;
};

Anatomy draw_anatomy(Grid2D<float>& img, const GenConfig& cfg, Rng& rng, GenerationTrace& trace) {
  const double s = cfg.image_size;
  Anatomy a;
  const double head_r = s * uniform(rng, 0.10, 0.12);
  const double head_y = s * uniform(rng, 0.55, 0.65);
  a.left_head = {s * uniform(rng, 0.15, 0.18), head_y, head_r, head_r * uniform(rng, 0.95, 1.05),
                 uniform(rng, 4.0, 5.5)};
  a.right_head = {s * uniform(rng, 0.82, 0.85), head_y + uniform(rng, -3, 3), head_r,
                  head_r * uniform(rng, 0.95, 1.05), uniform(rng, 4.0, 5.5)};
  a.pelvis = {s * uniform(rng, 0.48, 0.52), s * uniform(rng, 0.40, 0.48), s * uniform(rng, 0.11, 0.13),
              s * uniform(rng, 0.18, 0.22), uniform(rng, 4.0, 5.5)};
  for (const Ring* r : {&a.left_head, &a.right_head, &a.pelvis}) {
    draw_ring(img, *r, uniform(rng, 0.30, 0.40));
    a.all.push_back(*r);
  }
  trace.distractors = uniform_int(rng, cfg.distractor_count);
  for (int k = 0; k < trace.distractors; ++k) {
    const double rad = uniform(rng, 6.0, 14.0);
    Ring r{uniform(rng, rad, s - rad), uniform(rng, rad, s - rad), rad, rad * uniform(rng, 0.7, 1.3),
           uniform(rng, 3.0, 5.0)};
    draw_ring(img, r, uniform(rng, 0.25, 0.40));
    a.all.push_back(r);
  }
  return a;
}

void draw_confusers(Grid2D<float>& img, const GenConfig& cfg, const Anatomy& a, Rng& rng,
                    GenerationTrace& trace) {
  trace.confusers = uniform_int(rng, cfg.confuser_count);
  for (int k = 0; k < trace.confusers; ++k) {
    const Ring& host = a.all[std::uniform_int_distribution<std::size_t>(0, a.all.size() - 1)(rng)];
    const Point c = point_on_ring(host, rng);
    const auto pts = straight_line(c, uniform(rng, 18.0, 30.0), uniform(rng, 0.0, std::numbers::pi));
    darken(img, polyline_coverage(cfg.image_size, pts, uniform(rng, 1.2, 1.8)),
           uniform(rng, cfg.lesion_contrast.min, cfg.lesion_contrast.max));
  }
}

// Places the crack; returns its gt box. Throws GenerationError when no valid
// placement is found.
PixelRect draw_lesion(Grid2D<float>& img, const GenConfig& cfg, const Anatomy& a, Subtype subtype,
                      Rng& rng, GenerationTrace& trace) {
  const int s = cfg.image_size;
  for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
    const Ring& host = subtype == Subtype::kPelvic
                           ? a.pelvis
                           : ((rng() & 1u) ? a.left_head : a.right_head);
    const Point c = point_on_ring(host, rng);
    const double base = subtype == Subtype::kHip ? 0.0 : std::numbers::pi / 2;
    const double angle = base + uniform(rng, -0.4, 0.4);
    const auto pts = jagged_line(c, uniform(rng, 36.0, 48.0), angle, rng);
    const double width = uniform(rng, 1.2, 1.8);
    const double contrast = uniform(rng, cfg.lesion_contrast.min, cfg.lesion_contrast.max);
    const Grid2D<float> cov = polyline_coverage(s, pts, width);

    int pixels = 0, bx0 = s, by0 = s, bx1 = -1, by1 = -1;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (cov(y, x) <= 0.0f) continue;
        if (cov(y, x) >= 0.5f) ++pixels;
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      }
    }
    if (pixels < 25) continue;
    const PixelRect box{std::max(0, bx0 - kGtPadding), std::max(0, by0 - kGtPadding),
                        std::min(s, bx1 + 1 + kGtPadding), std::min(s, by1 + 1 + kGtPadding)};
    if (zone_of(0.5 * (box.x0 + box.x1), s) != subtype) continue;
    darken(img, cov, contrast);
    trace.lesion_strokes = 1;
    trace.lesion_pixels = pixels;
    return box;
  }
  throw GenerationError("synthetic_pxr: could not place a lesion after bounded retries");
}

}  // namespace

void GenConfig::validate() const {
  if (image_size < 32) throw ConfigError("GenConfig: image_size must be >= 32");
  if (n_images < 1) throw ConfigError("GenConfig: n_images must be >= 1");
  if (positive_fraction < 0 || positive_fraction > 1 || subtype_fraction_hip < 0 ||
      subtype_fraction_hip > 1) {
    throw ConfigError("GenConfig: fractions must lie in [0,1]");
  }
  if (distractor_count.min < 0 || distractor_count.max < distractor_count.min ||
      confuser_count.min < 0 || confuser_count.max < confuser_count.min) {
    throw ConfigError("GenConfig: invalid count range");
  }
  if (!(lesion_contrast.min > 0) || lesion_contrast.max < lesion_contrast.min) {
    throw ConfigError("GenConfig: invalid lesion contrast range");
  }
}

Subtype zone_of(double x, int image_size) {
  const double third = image_size / 3.0;
  return (x < third || x >= 2.0 * third) ? Subtype::kHip : Subtype::kPelvic;
}

std::vector<GeneratedImage> generate_with_trace(const GenConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_images;
  const int n_pos = static_cast<int>(std::lround(n * cfg.positive_fraction));
  const int n_hip = static_cast<int>(std::lround(n_pos * cfg.subtype_fraction_hip));

  // Which indices are fractured, and which fractured ones are hip.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto label_rng = keyed_rng(cfg.seed, "synthetic-labels");
  std::shuffle(order.begin(), order.end(), label_rng);
  std::vector<std::optional<Subtype>> plan(n);
  for (int k = 0; k < n_pos; ++k) plan[order[k]] = k < n_hip ? Subtype::kHip : Subtype::kPelvic;

  std::vector<GeneratedImage> out;
  out.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    auto rng = keyed_rng(cfg.seed, "synthetic-image", static_cast<std::uint64_t>(idx));
    GeneratedImage g;
    Grid2D<float> px(cfg.image_size, cfg.image_size);
    add_background(px, rng);
    const Anatomy anatomy = draw_anatomy(px, cfg, rng, g.trace);
    draw_confusers(px, cfg, anatomy, rng, g.trace);

    ImageLabel label;
    if (plan[idx]) {
      label.fractured = true;
      label.subtype = plan[idx];
      label.gt_boxes = std::vector<PixelRect>{draw_lesion(px, cfg, anatomy, *plan[idx], rng, g.trace)};
    } else {
      label.gt_boxes = std::vector<PixelRect>{};
    }
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05d", cfg.id_prefix.c_str(), idx);
    g.item.image = GrayscaleImage(id, quantize_8bit(px));
    label.validate(cfg.image_size, cfg.image_size);
    g.item.label = std::move(label);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<LabeledImage> generate(const GenConfig& cfg) {
  auto traced = generate_with_trace(cfg);
  std::vector<LabeledImage> out;
  out.reserve(traced.size());
  for (auto& g : traced) out.push_back(std::move(g.item));
  return out;
}

}  // namespace fracmil
