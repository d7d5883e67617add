#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "graspdet/data.hpp"
#include "graspdet/model.hpp"
#include "graspdet/trainer.hpp"

namespace grasp {

// Student trains; teacher shadows it as an exponential moving average and
// supplies consistency targets.
struct TeacherStudent {
  GraspNet student;
  GraspNet teacher;
  long long step = 0;

  explicit TeacherStudent(const GraspNet& source)
      : student(source.clone()), teacher(source.clone()) {}
};

enum class AdaptMethod { kDirect, kMeanTeacher, kConfidenceMt };

AdaptMethod adapt_method_from(const std::string& name);  // "direct" | "mt" | "cmt"
std::string adapt_method_name(AdaptMethod m);

struct AdaptConfig {
  AdaptMethod method = AdaptMethod::kConfidenceMt;
  double alpha_start = 0.5;
  double alpha_end = 0.99;
  int alpha_ramp_steps = 500;
  bool threshold_auto = true;  // median teacher uncertainty on the labelled set
  double threshold = std::numeric_limits<double>::infinity();
  double consistency_weight = 1.0;
  int batch_labelled = 6;
  int batch_pseudo = 2;
  int top_k = 3;  // peaks per image for sample uncertainty
  int epochs = 30;
  double lr = 1e-4;
  int max_translate = 8;  // consistency-view translation bound
  std::uint64_t seed = 0;
  std::string log_path;

  void validate() const;  // throws ConfigError
};

// Linear ramp alpha_start -> alpha_end over alpha_ramp_steps, clamped.
double alpha_at(const AdaptConfig& cfg, long long step);

// teacher := alpha * teacher + (1 - alpha) * student, elementwise. The
// student is never touched.
void ema_update(TeacherStudent& ts, double alpha);

// One unlabelled sample admitted to the consistency pool: its detected peak
// locations and the teacher's mean poses there as pseudo targets.
struct PseudoSample {
  int index = 0;  // position in the unlabelled set
  double uncertainty = 0;
  std::vector<Vec2> locs;
  std::vector<std::array<double, 3>> targets;
};

// Runs the teacher's detector on each unlabelled sample, takes up to top_k
// peaks, and keeps samples whose mean peak uncertainty is strictly below the
// threshold. Peakless samples are always excluded.
std::vector<PseudoSample> confidence_filter(const std::vector<Sample>& unlabelled,
                                            const GraspNet& teacher, double threshold,
                                            int top_k);

// Median teacher sample-uncertainty over the labelled set (mean of the middle
// two for even counts). +infinity with a warning when no sample has peaks.
double auto_threshold(const GraspNet& teacher, const std::vector<Sample>& labelled, int top_k);

// One augmentation draw: the transformed view and its recorded transform.
struct ViewDraw {
  Sample view;
  GeomTransform g;
};

// Flip + translate + photometric perturbation; rotations stay out so poses
// map back linearly.
ViewDraw draw_view(const Sample& s, Rng& rng, int max_translate);

// Student sees mu, teacher sees mu_prime. Each location is mapped into both
// views; mean poses are mapped back to the original frame (a flip negates
// theta, for the student in-graph) and compared by mean squared error over
// the pose components, averaged over surviving locations. Locations falling
// outside either view are skipped; if all are skipped the loss is zero. No
// gradient reaches the teacher.
ad::Tensor consistency_loss(const GraspNet& student, const GraspNet& teacher,
                            const Sample& original, const std::vector<Vec2>& locs,
                            const ViewDraw& mu, const ViewDraw& mu_prime);

struct PseudoPick {
  const Sample* sample = nullptr;
  const std::vector<Vec2>* locs = nullptr;
};

struct AdaptStepStats {
  double supervised = 0;
  double consistency = 0;  // unweighted value of the consistency term
  double alpha = 0;
};

// Supervised stage losses on the labelled batch plus lambda times the
// consistency term on the pseudo batch; gradient step on the student's pose
// heads only, then an EMA teacher update with the ramped alpha. For method
// direct (or lambda = 0, or an empty pseudo batch) the consistency path is
// never executed.
AdaptStepStats adapt_step(TeacherStudent& ts, const std::vector<const Sample*>& labelled,
                          const std::vector<PseudoPick>& pseudo, const AdaptConfig& cfg,
                          Rng& view_rng);

struct AdaptEpochRow {
  int epoch = 0;
  std::string method;
  double eval_loss = 0;  // mean-pose Huber loss at ground-truth centers
  int pool_size = 0;
  double alpha = 0;  // value used by the epoch's last step
  double threshold = 0;
  double eval_loss_stage_avg = 0;
};

void save_adapt_csv(const std::string& path, const std::vector<AdaptEpochRow>& rows);

struct AdaptResult {
  std::vector<AdaptEpochRow> curve;
  GraspNet student;  // final student parameters
  GraspNet best;     // student snapshot from the best eval epoch
  int best_epoch = -1;
  double best_eval = 0;
};

// Mean-pose and stage-averaged pose losses of the network's pose heads
// queried at every annotation center of the eval set.
struct PoseEvalLoss {
  double mean_pose = 0;
  double stage_avg = 0;
};
PoseEvalLoss pose_eval_loss(const GraspNet& net, const std::vector<Sample>& eval_set);

// Full adaptation loop: per epoch the pool is refilled from the current
// teacher, batches of 6 labelled + 2 pseudo run adapt_step, and the student
// is evaluated. All three methods share this code path and bookkeeping; they
// differ only in how the consistency term is handled, so runs with a vacuous
// filter or a zero weight are bit-identical to their reductions.
AdaptResult run_adaptation(const GraspNet& source, const std::vector<Sample>& labelled,
                           const std::vector<Sample>& unlabelled,
                           const std::vector<Sample>& eval_set, const AdaptConfig& cfg);

}  // namespace grasp
