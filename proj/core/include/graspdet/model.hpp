#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graspdet/checkpoint.hpp"
#include "graspdet/data.hpp"
#include "graspdet/geometry.hpp"
#include "graspdet/tensor.hpp"

namespace grasp {

struct BackboneConfig {
  int input_size = 64;  // divisible by 16
  std::array<int, 4> stage_channels = {8, 16, 32, 64};
  int crop_cells = 3;  // odd pose-head window, in feature cells
  bool depth_branch = true;
  double heatmap_radius = 8.0;  // location target ball, input px
  double nms_threshold = 0.5;
  int nms_window = 3;
  int max_peaks = 16;

  void validate() const;  // throws ConfigError
};

// Fused feature pyramid; x[k] has stride 2^(k+1) and stage_channels[k]
// channels.
struct PyramidFeatures {
  std::array<ad::Tensor, 4> x;
  int input_size = 0;
};

struct PoseEstimate {
  std::array<ad::Tensor, 4> stage;  // [3] each: theta-hat, w-hat, h-hat
  ad::Tensor mean;                  // [3], stage average, stays in the graph
  double m_uc = 0;  // component-variance sum across the four stages
};

struct Detection {
  GraspRect rect;
  Vec2 loc;      // input-space peak location
  double score;  // heatmap value at the peak
  double m_uc;
  std::array<std::array<double, 3>, 4> stage_poses;
  std::array<double, 3> mean_pose;  // normalized
};

// theta/(pi/2), w/S, h/S and back. Denormalization floors the side lengths
// at a tiny positive value so a saturated head still yields a valid
// rectangle.
std::array<double, 3> normalize_pose(const GraspRect& r, int input_size);
GraspRect denormalize_pose(const std::array<double, 3>& p, Vec2 loc, int input_size);

// Two-branch pyramid encoder with a location decoder and per-stage pose
// heads. Parameter names are prefixed enc.rgb / enc.d / dec / pose, which is
// the granularity used for freezing and optimizer groups.
class GraspNet {
 public:
  GraspNet(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<ad::Tensor> param_group(const std::string& prefix) const;
  void set_trainable(const std::string& prefix, bool on);

  // depth may be undefined; with a depth branch present the fused pyramid
  // then equals the RGB branch alone.
  PyramidFeatures encode(const ad::Tensor& rgb, const ad::Tensor& depth) const;
  ad::Tensor locnet_forward(const PyramidFeatures& f) const;  // [1, S/2, S/2]
  Heatmap heatmap_from(const ad::Tensor& loc_map) const;
  std::vector<PoseEstimate> posenet_forward(const PyramidFeatures& f,
                                            const std::vector<Vec2>& locs) const;

  // Full pipeline without taping: peaks from the location map, pose and
  // uncertainty per peak, sorted by ascending m_uc (score breaks ties),
  // truncated to top_n.
  std::vector<Detection> detect(const ad::Tensor& rgb, const ad::Tensor& depth,
                                int top_n) const;
  std::vector<Detection> detect(const Sample& s, int top_n) const;

  GraspNet clone() const;
  void copy_params_from(const GraspNet& other);

  // Writes the parameter container plus a <path>.json config sidecar.
  void save(const std::string& path) const;
  static GraspNet load(const std::string& path);

 private:
  GraspNet() = default;
  ad::Tensor p(const std::string& name) const;
  void add_param(const std::string& name, std::vector<int> shape, double stddev, Rng& rng);
  void build(std::uint64_t seed);

  BackboneConfig cfg_;
  std::vector<NamedParam> params_;
  std::map<std::string, int> index_;
};

}  // namespace grasp
