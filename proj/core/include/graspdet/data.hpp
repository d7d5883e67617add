#pragma once

#include <string>
#include <utility>
#include <vector>

#include "graspdet/geometry.hpp"
#include "graspdet/rng.hpp"
#include "graspdet/tensor.hpp"

namespace grasp {

struct Sample {
  std::string id;
  ad::Tensor rgb;        // [3,H,W] in [0,1]
  ad::Tensor raw_depth;  // optional [1,H,W], raw units, 0 marks missing
  ad::Tensor depth;      // optional [3,H,W]: normalized depth + x/y gradients
  std::vector<GraspRect> annotations;
  bool labelled = false;  // invariant: labelled == !annotations.empty()
  std::string domain;
};

// Square-frame grid transform, applied as flip, then quarter turns, then
// translation. Exact on the pixel grid, so augmented images need no
// resampling.
struct GeomTransform {
  int size = 0;  // frame extent in pixels
  bool flip = false;
  int rot90 = 0;  // quarter turns, 0..3
  int dx = 0;
  int dy = 0;

  Vec2 apply(Vec2 p) const;
  Vec2 invert(Vec2 p) const;
  GraspRect apply(const GraspRect& r) const;
  GraspRect invert(const GraspRect& r) const;
  // Angle delta the forward transform adds, before normalization; flip
  // negates first.
  double apply_theta(double theta) const;
};

struct AugmentOptions {
  bool allow_flip = true;
  bool allow_rot90 = true;
  int max_translate = 8;
  bool photometric = true;  // RGB only
  double brightness_lo = 0.8;
  double brightness_hi = 1.2;
  double noise_sigma = 0.02;
};

// Draws flip/rotation/translation plus RGB brightness and Gaussian noise.
// Annotations are mapped through the same transform; centers pushed out of
// frame are dropped. Depth channels are recomputed from the transformed raw
// depth map.
std::pair<Sample, GeomTransform> augment(const Sample& s, Rng& rng,
                                         const AugmentOptions& opts = {});

// Inpaints zeros from the nearest valid pixel, then emits
// [(d-mean)/max(std,1e-6), grad-x, grad-y] with 3x3 Sobel stencils on the
// normalized channel (zero padding). All pixels missing is a DataError.
ad::Tensor depth_to_3ch(const ad::Tensor& raw_depth);

// Raw frame pipeline: isotropic resize to 456x342, center crop 288x288,
// annotations mapped by the same scale and offset (out-of-frame centers
// dropped). Requires a 4:3 raw frame.
Sample preprocess(const Sample& raw);

// Directory layout: <id>r.ppm (RGB), <id>d.pgm (16-bit depth, optional),
// <id>cpos.txt (4 "x y" vertex lines per rectangle, optional). Samples come
// back sorted by id; malformed rectangles are skipped with a warning on
// stderr, and a sample without usable rectangles is unlabelled.
std::vector<Sample> load_cornell_dir(const std::string& path);
void save_sample_dir(const std::string& path, const std::vector<Sample>& samples);

// Optional sidecar (manifest.json) carrying the domain tag and named id
// splits.
struct DatasetManifest {
  std::string domain;
  std::vector<std::string> labelled_ids;
  std::vector<std::string> unlabelled_ids;
  std::vector<std::string> eval_ids;
};
void save_dataset_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest load_dataset_manifest(const std::string& dir);
bool has_dataset_manifest(const std::string& dir);

std::vector<Sample> select_by_ids(const std::vector<Sample>& all,
                                  const std::vector<std::string>& ids);

ad::Tensor resize_bilinear(const ad::Tensor& t, int out_h, int out_w);

}  // namespace grasp
