#pragma once

#include <array>
#include <vector>

namespace grasp {

struct Vec2 {
  double x = 0;
  double y = 0;
};

// Parallel-jaw grasp: center (x, y) in pixels, orientation theta in radians
// canonical in [-pi/2, pi/2) with mod-pi symmetry, plate width w and jaw
// opening h in pixels, both positive.
struct GraspRect {
  double x = 0;
  double y = 0;
  double theta = 0;
  double w = 1;
  double h = 1;
};

// Wraps any angle into [-pi/2, pi/2) modulo pi.
double normalize_angle(double theta);

// Validates w, h > 0 and finiteness, canonicalizes theta.
GraspRect make_rect(double x, double y, double theta, double w, double h);
GraspRect rect_normalize(const GraspRect& g);

// Corners in edge order; the first edge (v0 -> v1) runs along the w side.
std::array<Vec2, 4> rect_vertices(const GraspRect& g);

// Inverse of rect_vertices. Center is the vertex mean, theta comes from the
// first edge, w along the first edge. The vertex set must close to a
// parallelogram within 1.5 px.
GraspRect rect_from_vertices(const std::array<Vec2, 4>& v);

// min over integer k of |a - b + k*pi|, in [0, pi/2].
double angle_diff(double a, double b);

// Exact intersection-over-union of two rotated rectangles (convex polygon
// clipping + shoelace area).
double rotated_iou(const GraspRect& a, const GraspRect& b);

// A prediction succeeds when some ground-truth grasp is within 30 degrees
// (mod pi) and overlaps with IoU strictly greater than 0.25.
bool is_success(const GraspRect& pred, const std::vector<GraspRect>& truths);

// Grasp-location feasibility grid; each cell spans stride x stride input
// pixels, cell (r, c) centered at ((c+0.5)*stride, (r+0.5)*stride).
struct Heatmap {
  int rows = 0;
  int cols = 0;
  int stride = 1;
  std::vector<double> v;  // row-major, values in [0,1]

  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
};

// Binary target: cell = 1 iff its input-space center lies within distance
// radius of any annotation center.
Heatmap heatmap_target(const std::vector<GraspRect>& annotations, int rows, int cols, int stride,
                       double radius);

struct Peak {
  double x = 0;  // input-image coordinates of the cell center
  double y = 0;
  double score = 0;
  int row = 0;
  int col = 0;
};

// Strict local maxima over a window x window neighborhood with score >=
// threshold, sorted by score descending, truncated to max_peaks. Ties in the
// neighborhood suppress both cells.
std::vector<Peak> nms_peaks(const Heatmap& m, double threshold, int window, int max_peaks);

}  // namespace grasp
