#include "graspdet/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>

#include "graspdet/errors.hpp"
#include "graspdet/textio.hpp"

namespace grasp {

namespace {

double huber(double d) {
  double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double huber3(const double* a, const double* b) {
  return (huber(a[0] - b[0]) + huber(a[1] - b[1]) + huber(a[2] - b[2])) / 3.0;
}

bool inside(Vec2 v, int size) {
  return v.x >= 0 && v.x < size && v.y >= 0 && v.y < size;
}

double sample_uncertainty(const GraspNet& teacher, const Sample& s, int top_k,
                          std::vector<Detection>* dets_out) {
  std::vector<Detection> dets = teacher.detect(s, top_k);
  if (dets.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0;
  for (const Detection& d : dets) sum += d.m_uc;
  double unc = sum / static_cast<double>(dets.size());
  if (dets_out) *dets_out = std::move(dets);
  return unc;
}

void check_annotated(const std::vector<Sample>& samples, const char* what) {
  if (samples.empty()) throw ArgumentError(std::string("run_adaptation: empty ") + what);
  for (const Sample& s : samples)
    if (s.annotations.empty())
      throw ArgumentError(std::string("run_adaptation: ") + what + " sample " + s.id +
                          " has no annotations");
}

}  // namespace

AdaptMethod adapt_method_from(const std::string& name) {
  if (name == "direct") return AdaptMethod::kDirect;
  if (name == "mt") return AdaptMethod::kMeanTeacher;
  if (name == "cmt") return AdaptMethod::kConfidenceMt;
  throw ArgumentError("unknown adaptation method: " + name);
}

std::string adapt_method_name(AdaptMethod m) {
  switch (m) {
    case AdaptMethod::kDirect: return "direct";
    case AdaptMethod::kMeanTeacher: return "mt";
    case AdaptMethod::kConfidenceMt: return "cmt";
  }
  throw ArgumentError("unknown adaptation method");
}

void AdaptConfig::validate() const {
  if (!(alpha_start >= 0) || !(alpha_end < 1) || alpha_start > alpha_end)
    throw ConfigError("alpha ramp must satisfy 0 <= start <= end < 1");
  if (alpha_ramp_steps < 1) throw ConfigError("alpha_ramp_steps must be positive");
  if (!(consistency_weight >= 0)) throw ConfigError("consistency_weight must be non-negative");
  if (batch_labelled < 1 || batch_pseudo < 0) throw ConfigError("bad batch mix");
  if (batch_labelled + batch_pseudo != 8) throw ConfigError("batch mix must total 8");
  if (top_k < 1) throw ConfigError("top_k must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (max_translate < 0) throw ConfigError("max_translate must be non-negative");
  if (!threshold_auto && !(threshold > 0)) throw ConfigError("threshold must be positive");
}

double alpha_at(const AdaptConfig& cfg, long long step) {
  if (step >= cfg.alpha_ramp_steps) return cfg.alpha_end;
  double t = static_cast<double>(step) / static_cast<double>(cfg.alpha_ramp_steps);
  return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * t;
}

void ema_update(TeacherStudent& ts, double alpha) {
  if (!(alpha >= 0) || !(alpha < 1)) throw ArgumentError("ema_update: alpha outside [0, 1)");
  auto& tp = ts.teacher.params();
  const auto& sp = ts.student.params();
  if (tp.size() != sp.size()) throw ConfigError("ema_update: parameter layout mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].name != sp[i].name || tp[i].value.shape() != sp[i].value.shape())
      throw ConfigError("ema_update: parameter layout mismatch at " + tp[i].name);
    ad::real* t = tp[i].value.data();
    const ad::real* s = sp[i].value.data();
    for (int j = 0; j < tp[i].value.size(); ++j) t[j] = alpha * t[j] + (1 - alpha) * s[j];
  }
}

std::vector<PseudoSample> confidence_filter(const std::vector<Sample>& unlabelled,
                                            const GraspNet& teacher, double threshold,
                                            int top_k) {
  std::vector<PseudoSample> pool;
  for (std::size_t i = 0; i < unlabelled.size(); ++i) {
    std::vector<Detection> dets;
    double unc = sample_uncertainty(teacher, unlabelled[i], top_k, &dets);
    if (std::isnan(unc) || !(unc < threshold)) continue;
    PseudoSample p;
    p.index = static_cast<int>(i);
    p.uncertainty = unc;
    for (const Detection& d : dets) {
      p.locs.push_back(d.loc);
      p.targets.push_back(d.mean_pose);
    }
    pool.push_back(std::move(p));
  }
  return pool;
}

double auto_threshold(const GraspNet& teacher, const std::vector<Sample>& labelled, int top_k) {
  std::vector<double> uncs;
  for (const Sample& s : labelled) {
    double u = sample_uncertainty(teacher, s, top_k, nullptr);
    if (!std::isnan(u)) uncs.push_back(u);
  }
  if (uncs.empty()) {
    std::fprintf(stderr,
                 "warning: teacher found no peaks on any labelled sample; "
                 "confidence threshold set to +inf\n");
    return std::numeric_limits<double>::infinity();
  }
  std::sort(uncs.begin(), uncs.end());
  std::size_t n = uncs.size();
  return n % 2 == 1 ? uncs[n / 2] : 0.5 * (uncs[n / 2 - 1] + uncs[n / 2]);
}

ViewDraw draw_view(const Sample& s, Rng& rng, int max_translate) {
  AugmentOptions o;
  o.allow_rot90 = false;
  o.max_translate = max_translate;
  auto [view, g] = augment(s, rng, o);
  return {std::move(view), g};
}

ad::Tensor consistency_loss(const GraspNet& student, const GraspNet& teacher,
                            const Sample& original, const std::vector<Vec2>& locs,
                            const ViewDraw& mu, const ViewDraw& mu_prime) {
  const int size = original.rgb.dim(1);
  if (mu.g.size != size || mu_prime.g.size != size)
    throw ArgumentError("consistency_loss: view transforms do not match the sample frame");

  std::vector<Vec2> student_locs, teacher_locs;
  for (Vec2 loc : locs) {
    Vec2 a = mu.g.apply(loc);
    Vec2 b = mu_prime.g.apply(loc);
    if (!inside(a, size) || !inside(b, size)) continue;
    student_locs.push_back(a);
    teacher_locs.push_back(b);
  }
  if (student_locs.empty()) return ad::Tensor::scalar(0.0);

  std::vector<std::array<double, 3>> targets;
  {
    ad::NoGradGuard ng;
    PyramidFeatures ft = teacher.encode(mu_prime.view.rgb, mu_prime.view.depth);
    std::vector<PoseEstimate> ests = teacher.posenet_forward(ft, teacher_locs);
    for (const PoseEstimate& e : ests) {
      std::array<double, 3> pose = {e.mean.data()[0], e.mean.data()[1], e.mean.data()[2]};
      if (mu_prime.g.flip) pose[0] = -pose[0];
      targets.push_back(pose);
    }
  }

  PyramidFeatures fs;
  {
    ad::NoGradGuard ng;
    fs = student.encode(mu.view.rgb, mu.view.depth);
  }
  std::vector<PoseEstimate> ests = student.posenet_forward(fs, student_locs);

  ad::Tensor flip_theta = ad::Tensor::from({3}, {-1.0, 1.0, 1.0});
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (std::size_t i = 0; i < ests.size(); ++i) {
    ad::Tensor pose = ests[i].mean;
    if (mu.g.flip) pose = ad::mul(pose, flip_theta);
    ad::Tensor t = ad::Tensor::from({3}, {targets[i][0], targets[i][1], targets[i][2]});
    ad::Tensor diff = ad::sub(pose, t);
    total = ad::add(total, ad::mean(ad::mul(diff, diff)));
  }
  return ad::scale(total, 1.0 / static_cast<double>(ests.size()));
}

AdaptStepStats adapt_step(TeacherStudent& ts, const std::vector<const Sample*>& labelled,
                          const std::vector<PseudoPick>& pseudo, const AdaptConfig& cfg,
                          Rng& view_rng) {
  if (labelled.empty()) throw ArgumentError("adapt_step: empty labelled batch");

  AdaptStepStats stats;
  stats.alpha = alpha_at(cfg, ts.step);

  const int size = ts.student.config().input_size;
  std::vector<ad::Tensor> terms;
  for (const Sample* sp : labelled) {
    PyramidFeatures f;
    {
      ad::NoGradGuard ng;
      f = ts.student.encode(sp->rgb, sp->depth);
    }
    std::vector<Vec2> locs;
    for (const GraspRect& ann : sp->annotations) locs.push_back({ann.x, ann.y});
    std::vector<PoseEstimate> ests = ts.student.posenet_forward(f, locs);
    for (std::size_t a = 0; a < ests.size(); ++a) {
      auto t = normalize_pose(sp->annotations[a], size);
      ad::Tensor target = ad::Tensor::from({3}, {t[0], t[1], t[2]});
      for (const ad::Tensor& stage : ests[a].stage)
        terms.push_back(ad::smooth_l1(stage, target));
    }
  }
  ad::Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  stats.supervised = total.item();

  bool use_consistency = cfg.method != AdaptMethod::kDirect && cfg.consistency_weight > 0 &&
                         !pseudo.empty();
  if (use_consistency) {
    ad::Tensor cons = ad::Tensor::scalar(0.0);
    for (const PseudoPick& pick : pseudo) {
      ViewDraw mu = draw_view(*pick.sample, view_rng, cfg.max_translate);
      ViewDraw mu_prime = draw_view(*pick.sample, view_rng, cfg.max_translate);
      cons = ad::add(cons, consistency_loss(ts.student, ts.teacher, *pick.sample, *pick.locs,
                                            mu, mu_prime));
    }
    stats.consistency = cons.item();
    total = ad::add(total, ad::scale(cons, cfg.consistency_weight));
  }

  total.backward();
  sgd_step(ts.student.param_group("pose."), cfg.lr);
  ema_update(ts, stats.alpha);
  ++ts.step;
  return stats;
}

PoseEvalLoss pose_eval_loss(const GraspNet& net, const std::vector<Sample>& eval_set) {
  if (eval_set.empty()) throw ArgumentError("pose_eval_loss: empty eval set");
  ad::NoGradGuard ng;
  const int size = net.config().input_size;
  PoseEvalLoss out;
  long long n = 0;
  for (const Sample& s : eval_set) {
    std::vector<Vec2> locs;
    for (const GraspRect& ann : s.annotations) locs.push_back({ann.x, ann.y});
    if (locs.empty()) continue;
    PyramidFeatures f = net.encode(s.rgb, s.depth);
    std::vector<PoseEstimate> ests = net.posenet_forward(f, locs);
    for (std::size_t a = 0; a < ests.size(); ++a) {
      auto t = normalize_pose(s.annotations[a], size);
      out.mean_pose += huber3(ests[a].mean.data(), t.data());
      double stage = 0;
      for (const ad::Tensor& st : ests[a].stage) stage += huber3(st.data(), t.data());
      out.stage_avg += stage / 4.0;
      ++n;
    }
  }
  if (n == 0) throw ArgumentError("pose_eval_loss: no annotations in eval set");
  out.mean_pose /= static_cast<double>(n);
  out.stage_avg /= static_cast<double>(n);
  return out;
}

void save_adapt_csv(const std::string& path, const std::vector<AdaptEpochRow>& rows) {
  std::string out = "epoch,method,eval_loss,pool_size,alpha,threshold,eval_loss_stage_avg\n";
  for (const AdaptEpochRow& r : rows) {
    out += fmt_int(r.epoch) + ',' + r.method + ',' + fmt_real(r.eval_loss) + ',' +
           fmt_int(r.pool_size) + ',' + fmt_real(r.alpha) + ',' + fmt_real(r.threshold) + ',' +
           fmt_real(r.eval_loss_stage_avg) + '\n';
  }
  write_file_atomic(path, out);
}

AdaptResult run_adaptation(const GraspNet& source, const std::vector<Sample>& labelled,
                           const std::vector<Sample>& unlabelled,
                           const std::vector<Sample>& eval_set, const AdaptConfig& cfg) {
  cfg.validate();
  check_annotated(labelled, "labelled");
  check_annotated(eval_set, "eval");

  TeacherStudent ts(source);
  double threshold = std::numeric_limits<double>::infinity();
  if (cfg.method == AdaptMethod::kConfidenceMt)
    threshold = cfg.threshold_auto ? auto_threshold(ts.teacher, labelled, cfg.top_k)
                                   : cfg.threshold;

  std::vector<AdaptEpochRow> curve;
  std::optional<GraspNet> best;
  int best_epoch = -1;
  double best_eval = std::numeric_limits<double>::infinity();

  const int n_lab = static_cast<int>(labelled.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // The pool is recomputed from the current teacher in every method so the
    // three runs share bookkeeping; direct never reads it.
    std::vector<PseudoSample> pool = confidence_filter(unlabelled, ts.teacher, threshold,
                                                       cfg.top_k);
    double last_alpha = alpha_at(cfg, ts.step);
    std::vector<int> order = epoch_order(cfg.seed, "lab", epoch, n_lab);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_labelled)) {
      std::vector<const Sample*> batch;
      std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_labelled));
      for (std::size_t j = b; j < hi; ++j)
        batch.push_back(&labelled[static_cast<std::size_t>(order[j])]);

      Rng step_rng(stream_seed(cfg.seed, "pse", ts.step));
      std::vector<PseudoPick> picks;
      if (cfg.method != AdaptMethod::kDirect && cfg.consistency_weight > 0 && !pool.empty()) {
        std::vector<int> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
          std::swap(idx[static_cast<std::size_t>(i)],
                    idx[static_cast<std::size_t>(step_rng.uniform_int(0, i))]);
        int take = std::min<int>(cfg.batch_pseudo, static_cast<int>(pool.size()));
        for (int i = 0; i < take; ++i) {
          const PseudoSample& p = pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
          picks.push_back({&unlabelled[static_cast<std::size_t>(p.index)], &p.locs});
        }
      }
      AdaptStepStats stats = adapt_step(ts, batch, picks, cfg, step_rng);
      last_alpha = stats.alpha;
    }

    PoseEvalLoss el = pose_eval_loss(ts.student, eval_set);
    curve.push_back({epoch, adapt_method_name(cfg.method), el.mean_pose,
                     static_cast<int>(pool.size()), last_alpha, threshold, el.stage_avg});
    if (el.mean_pose < best_eval) {
      best_eval = el.mean_pose;
      best_epoch = epoch;
      best = ts.student.clone();
    }
  }

  if (!cfg.log_path.empty()) save_adapt_csv(cfg.log_path, curve);

  if (!best) {
    best = ts.student.clone();
    best_eval = 0;
  }
  return {std::move(curve), std::move(ts.student), std::move(*best), best_epoch, best_eval};
}

}  // namespace grasp
