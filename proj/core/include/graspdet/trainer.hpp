#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "graspdet/data.hpp"
#include "graspdet/model.hpp"

namespace grasp {

struct TrainConfig {
  int batch_size = 16;
  double lr_pose = 1e-4;
  double lr_loc = 3e-4;
  int lr_halve_every = 20;  // epochs per halving
  int epochs = 20;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;        // epochs, 0 disables
  std::string checkpoint_prefix;   // snapshots land at <prefix>-e<epoch>
  std::string log_path;            // CSV written on completion when set

  void validate() const;  // throws ConfigError
};

double lr_at(double initial, int epoch, int halve_every);

// Independent deterministic RNG stream keyed by purpose and index.
std::uint64_t stream_seed(std::uint64_t seed, const std::string& stream, long long index);

// Deterministic without-replacement visit order for one epoch.
std::vector<int> epoch_order(std::uint64_t seed, const std::string& stream, int epoch, int n);

struct LogRow {
  long long step;
  int epoch;
  std::string split;
  std::string loss_name;
  double value;
};

struct TrainLog {
  std::vector<LogRow> rows;

  void add(long long step, int epoch, const std::string& split, const std::string& loss_name,
           double value);
  void save_csv(const std::string& path) const;
};

// p -= lr * grad on every tensor that received a gradient, then clears the
// gradients so the next backward starts clean.
void sgd_step(const std::vector<ad::Tensor>& params, double lr);

// Joint encoder + pose-head training. Batch loss is the sum over every
// annotation in the batch of the four per-stage Huber losses against the
// normalized target pose at the annotation's own center.
TrainLog train_posenet(GraspNet& net, const std::vector<Sample>& labelled,
                       const TrainConfig& cfg);

// Copies encoder and pose parameters from pose_net, freezes them, and trains
// the decoder head against location target maps. Pyramid features are
// computed once per sample and reused across epochs.
TrainLog train_locnet(GraspNet& net, const GraspNet& pose_net,
                      const std::vector<Sample>& labelled, const TrainConfig& cfg);

struct EvalRecord {
  std::string id;
  int n_detections = 0;
  bool success = false;
  double m_uc = 0;
  double loss_most_certain = 0;  // stage-averaged pose loss of the least-uncertain detection
  double loss_all = 0;           // mean of the same loss over every detection
  GraspRect best{};              // least-uncertain detection, meaningful when n_detections > 0
};

struct EvalReport {
  double success_rate = 0;
  double pose_loss_all = 0;           // mean of loss_all over samples with detections
  double pose_loss_most_certain = 0;  // mean of loss_most_certain over the same samples
  int n_detected = 0;                 // samples with at least one detection
  std::vector<EvalRecord> records;

  void save_json(const std::string& path) const;
  void save_csv(const std::string& path) const;
};

using DetectFn = std::function<std::vector<Detection>(const Sample&)>;

// Success is judged on the least-uncertain detection: it must match some
// annotation within 30 degrees and with rotated IoU above 0.25. A sample
// with no detections counts as a failure and contributes no loss.
EvalReport evaluate(const DetectFn& detect, const std::vector<Sample>& eval_set);
EvalReport evaluate(const GraspNet& net, const std::vector<Sample>& eval_set, int top_n);

// Stage-averaged Huber loss of one detection against the annotation whose
// center is nearest to the detected location, in normalized pose units.
double detection_pose_loss(const Detection& d, const std::vector<GraspRect>& annotations,
                           int input_size);

}  // namespace grasp
