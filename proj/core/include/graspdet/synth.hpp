#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graspdet/data.hpp"

namespace grasp {

// Procedural tabletop scenes with analytically known grasps. Generation is
// keyed by (seed, sample index), so regenerating with equal arguments yields
// byte-identical datasets, and channels are quantized to the on-disk bit
// depth so a save/load round trip is exact.
struct SynthConfig {
  std::uint64_t seed = 0;
  int image_size = 64;
  bool bars = true;
  bool ellipses = true;
  bool lshapes = true;
  int min_objects = 1;
  int max_objects = 1;
  std::string palette = "dark";  // "dark" | "light"
  double brightness_lo = 0.9;
  double brightness_hi = 1.1;
  double noise_sigma = 0.01;
  bool emit_depth = true;
  std::string domain = "source";
  int n_eval = 50;
  // Grasp orientations stay this far from the +-pi/2 wraparound, keeping the
  // regression targets off the discontinuity.
  double angle_margin_deg = 15.0;

  static SynthConfig source_domain(std::uint64_t seed);
  // Shifted appearance: light checkerboard background, different object
  // palette, no depth channel.
  static SynthConfig target_domain(std::uint64_t seed);
};

struct SynthObject {
  enum Kind { kBar, kEllipse, kLShape };
  Kind kind;
  Vec2 center;
  double axis_theta;  // long-axis direction (first arm for L-shapes)
  double half_len;
  double half_wid;
};

struct SynthSample {
  Sample sample;
  std::vector<SynthObject> objects;
};

struct SynthSets {
  std::vector<Sample> labelled;
  std::vector<Sample> unlabelled;
  std::vector<Sample> eval;
};

// Sample `index` is fully determined by (cfg.seed, index) regardless of the
// split it lands in.
SynthSample synth_make_sample(const SynthConfig& cfg, int index);

// Splits by index: [0,n_labelled) labelled, then n_unlabelled with
// annotations stripped, then cfg.n_eval labelled evaluation samples.
SynthSets synth_generate(const SynthConfig& cfg, int n_labelled, int n_unlabelled);

}  // namespace grasp
