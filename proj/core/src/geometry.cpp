#include "graspdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "graspdet/errors.hpp"

namespace grasp {

namespace {

constexpr double kPi = std::numbers::pi;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double shoelace(const std::vector<Vec2>& p) {
  double s = 0;
  size_t n = p.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % n];
    s += a.x * b.y - a.y * b.x;
  }
  return std::abs(s) * 0.5;
}

// One Sutherland-Hodgman pass: keep the side of (p -> q) that the CCW
// polygon's interior lies on.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& poly, const Vec2& p, const Vec2& q) {
  std::vector<Vec2> out;
  out.reserve(poly.size() + 2);
  size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& s = poly[i];
    const Vec2& e = poly[(i + 1) % n];
    double ds = cross(p, q, s);
    double de = cross(p, q, e);
    if (de >= 0) {
      if (ds < 0) {
        double t = ds / (ds - de);
        out.push_back({s.x + t * (e.x - s.x), s.y + t * (e.y - s.y)});
      }
      out.push_back(e);
    } else if (ds >= 0) {
      double t = ds / (ds - de);
      out.push_back({s.x + t * (e.x - s.x), s.y + t * (e.y - s.y)});
    }
  }
  return out;
}

void check_finite_rect(const GraspRect& g) {
  if (!std::isfinite(g.x) || !std::isfinite(g.y) || !std::isfinite(g.theta) ||
      !std::isfinite(g.w) || !std::isfinite(g.h))
    throw GeometryError("grasp rectangle has non-finite fields");
  if (g.w <= 0 || g.h <= 0)
    throw GeometryError("grasp rectangle sides must be positive, got w=" + std::to_string(g.w) +
                        " h=" + std::to_string(g.h));
}

}  // namespace

double normalize_angle(double theta) {
  double t = std::fmod(theta + kPi / 2, kPi);
  if (t < 0) t += kPi;
  return t - kPi / 2;
}

GraspRect make_rect(double x, double y, double theta, double w, double h) {
  GraspRect g{x, y, theta, w, h};
  check_finite_rect(g);
  g.theta = normalize_angle(theta);
  return g;
}

GraspRect rect_normalize(const GraspRect& g) { return make_rect(g.x, g.y, g.theta, g.w, g.h); }

std::array<Vec2, 4> rect_vertices(const GraspRect& g) {
  check_finite_rect(g);
  double ux = std::cos(g.theta), uy = std::sin(g.theta);   // along w
  double nx = -std::sin(g.theta), ny = std::cos(g.theta);  // along h
  double wx = ux * g.w / 2, wy = uy * g.w / 2;
  double hx = nx * g.h / 2, hy = ny * g.h / 2;
  return {Vec2{g.x - wx - hx, g.y - wy - hy}, Vec2{g.x + wx - hx, g.y + wy - hy},
          Vec2{g.x + wx + hx, g.y + wy + hy}, Vec2{g.x - wx + hx, g.y - wy + hy}};
}

GraspRect rect_from_vertices(const std::array<Vec2, 4>& v) {
  // Closure check: the edge v3 -> v2 must match v0 -> v1.
  double gapx = v[3].x - (v[0].x + v[2].x - v[1].x);
  double gapy = v[3].y - (v[0].y + v[2].y - v[1].y);
  if (std::hypot(gapx, gapy) > 1.5)
    throw GeometryError("vertex set deviates from a parallelogram by more than 1.5 px");
  double cx = (v[0].x + v[1].x + v[2].x + v[3].x) / 4;
  double cy = (v[0].y + v[1].y + v[2].y + v[3].y) / 4;
  double e1x = v[1].x - v[0].x, e1y = v[1].y - v[0].y;
  double e2x = v[2].x - v[1].x, e2y = v[2].y - v[1].y;
  double w = std::hypot(e1x, e1y);
  double h = std::hypot(e2x, e2y);
  constexpr double kDegenerate = 1e-9;
  if (w < kDegenerate || h < kDegenerate ||
      std::abs(e1x * e2y - e1y * e2x) < kDegenerate)
    throw GeometryError("degenerate (zero-area) vertex set");
  return make_rect(cx, cy, std::atan2(e1y, e1x), w, h);
}

double angle_diff(double a, double b) {
  double d = std::fmod(a - b, kPi);
  if (d < 0) d += kPi;
  return std::min(d, kPi - d);
}

double rotated_iou(const GraspRect& a, const GraspRect& b) {
  auto va = rect_vertices(a);
  auto vb = rect_vertices(b);
  std::vector<Vec2> poly(va.begin(), va.end());
  for (int i = 0; i < 4 && poly.size() >= 3; ++i)
    poly = clip_edge(poly, vb[i], vb[(i + 1) % 4]);
  double inter = poly.size() >= 3 ? shoelace(poly) : 0.0;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool is_success(const GraspRect& pred, const std::vector<GraspRect>& truths) {
  if (truths.empty()) throw ArgumentError("is_success requires a non-empty ground-truth list");
  for (const auto& t : truths) {
    if (angle_diff(pred.theta, t.theta) <= kPi / 6 && rotated_iou(pred, t) > 0.25) return true;
  }
  return false;
}

Heatmap heatmap_target(const std::vector<GraspRect>& annotations, int rows, int cols, int stride,
                       double radius) {
  if (rows <= 0 || cols <= 0 || stride < 1)
    throw ArgumentError("heatmap grid must have positive extents and stride >= 1");
  if (radius <= 0) throw ArgumentError("heatmap target radius must be positive");
  Heatmap m;
  m.rows = rows;
  m.cols = cols;
  m.stride = stride;
  m.v.assign(static_cast<size_t>(rows) * cols, 0.0);
  double r2 = radius * radius;
  for (const auto& g : annotations) {
    // Only cells inside the ball's bounding box can light up.
    int r0 = std::max(0, static_cast<int>(std::floor((g.y - radius) / stride - 0.5)));
    int r1 = std::min(rows - 1, static_cast<int>(std::ceil((g.y + radius) / stride - 0.5)) + 1);
    int c0 = std::max(0, static_cast<int>(std::floor((g.x - radius) / stride - 0.5)));
    int c1 = std::min(cols - 1, static_cast<int>(std::ceil((g.x + radius) / stride - 0.5)) + 1);
    for (int r = r0; r <= r1; ++r) {
      double cy = (r + 0.5) * stride;
      for (int c = c0; c <= c1; ++c) {
        double cx = (c + 0.5) * stride;
        double dx = cx - g.x, dy = cy - g.y;
        if (dx * dx + dy * dy <= r2) m.at(r, c) = 1.0;
      }
    }
  }
  return m;
}

std::vector<Peak> nms_peaks(const Heatmap& m, double threshold, int window, int max_peaks) {
  if (!(threshold > 0 && threshold < 1))
    throw ArgumentError("nms threshold must lie strictly inside (0,1)");
  if (window < 1 || window % 2 == 0) throw ArgumentError("nms window must be a positive odd integer");
  if (max_peaks < 0) throw ArgumentError("max_peaks must be nonnegative");
  int half = window / 2;
  std::vector<Peak> peaks;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      double s = m.at(r, c);
      if (s < threshold) continue;
      bool strict_max = true;
      for (int dr = -half; dr <= half && strict_max; ++dr) {
        int rr = r + dr;
        if (rr < 0 || rr >= m.rows) continue;
        for (int dc = -half; dc <= half; ++dc) {
          int cc = c + dc;
          if (cc < 0 || cc >= m.cols || (dr == 0 && dc == 0)) continue;
          if (m.at(rr, cc) >= s) {
            strict_max = false;
            break;
          }
        }
      }
      if (strict_max)
        peaks.push_back({(c + 0.5) * m.stride, (r + 0.5) * m.stride, s, r, c});
    }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  if (static_cast<int>(peaks.size()) > max_peaks) peaks.resize(max_peaks);
  return peaks;
}

}  // namespace grasp
