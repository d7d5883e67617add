#include "graspdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "graspdet/errors.hpp"
#include "graspdet/textio.hpp"

namespace grasp {

namespace {

double huber(double d) {
  double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

void check_labelled(const std::vector<Sample>& samples, const char* op) {
  if (samples.empty()) throw ArgumentError(std::string(op) + ": empty dataset");
  for (const Sample& s : samples)
    if (!s.labelled || s.annotations.empty())
      throw ArgumentError(std::string(op) + ": sample " + s.id + " has no annotations");
}

bool same_config(const BackboneConfig& a, const BackboneConfig& b) {
  return a.input_size == b.input_size && a.stage_channels == b.stage_channels &&
         a.crop_cells == b.crop_cells && a.depth_branch == b.depth_branch &&
         a.heatmap_radius == b.heatmap_radius && a.nms_threshold == b.nms_threshold &&
         a.nms_window == b.nms_window && a.max_peaks == b.max_peaks;
}

void copy_group(GraspNet& dst, const GraspNet& src, const std::string& prefix) {
  const auto& from = src.params();
  auto& to = dst.params();
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (to[i].name.rfind(prefix, 0) != 0) continue;
    std::memcpy(to[i].value.data(), from[i].value.data(),
                sizeof(ad::real) * static_cast<std::size_t>(to[i].value.size()));
  }
}

ad::Tensor sum_terms(std::vector<ad::Tensor>& terms) {
  ad::Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

void maybe_snapshot(const GraspNet& net, const TrainConfig& cfg, int epoch) {
  if (cfg.checkpoint_every <= 0 || cfg.checkpoint_prefix.empty()) return;
  if ((epoch + 1) % cfg.checkpoint_every != 0) return;
  net.save(cfg.checkpoint_prefix + "-e" + std::to_string(epoch + 1));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr_pose > 0) || !(lr_loc > 0)) throw ConfigError("learning rates must be positive");
  if (lr_halve_every < 1) throw ConfigError("lr_halve_every must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

double lr_at(double initial, int epoch, int halve_every) {
  return initial * std::pow(0.5, epoch / halve_every);
}

std::uint64_t stream_seed(std::uint64_t seed, const std::string& stream, long long index) {
  std::uint64_t h = fnv1a64(stream.data(), stream.size());
  return mix64(mix64(seed, h), static_cast<std::uint64_t>(index));
}

std::vector<int> epoch_order(std::uint64_t seed, const std::string& stream, int epoch, int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream_seed(seed, stream, epoch));
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  return order;
}

void TrainLog::add(long long step, int epoch, const std::string& split,
                   const std::string& loss_name, double value) {
  rows.push_back({step, epoch, split, loss_name, value});
}

void TrainLog::save_csv(const std::string& path) const {
  std::string out = "step,epoch,split,loss_name,value\n";
  for (const LogRow& r : rows) {
    out += fmt_int(r.step) + ',' + fmt_int(r.epoch) + ',' + r.split + ',' + r.loss_name + ',' +
           fmt_real(r.value) + '\n';
  }
  write_file_atomic(path, out);
}

void sgd_step(const std::vector<ad::Tensor>& params, double lr) {
  for (const ad::Tensor& p : params) {
    const ad::real* g = p.grad();
    if (!g) continue;
    ad::Tensor t = p;  // handles share storage
    ad::real* v = t.data();
    for (int i = 0; i < p.size(); ++i) v[i] -= lr * g[i];
    t.zero_grad();
  }
}

TrainLog train_posenet(GraspNet& net, const std::vector<Sample>& labelled,
                       const TrainConfig& cfg) {
  cfg.validate();
  check_labelled(labelled, "train_posenet");

  std::vector<ad::Tensor> group = net.param_group("enc.");
  for (ad::Tensor& t : net.param_group("pose.")) group.push_back(t);

  const int s = net.config().input_size;
  TrainLog log;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(cfg.lr_pose, epoch, cfg.lr_halve_every);
    std::vector<int> order = epoch_order(cfg.seed, "pose", epoch, static_cast<int>(labelled.size()));
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<ad::Tensor> terms;
      std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t j = b; j < hi; ++j) {
        const Sample& smp = labelled[static_cast<std::size_t>(order[j])];
        PyramidFeatures f = net.encode(smp.rgb, smp.depth);
        std::vector<Vec2> locs;
        for (const GraspRect& ann : smp.annotations) locs.push_back({ann.x, ann.y});
        std::vector<PoseEstimate> ests = net.posenet_forward(f, locs);
        for (std::size_t a = 0; a < ests.size(); ++a) {
          auto t = normalize_pose(smp.annotations[a], s);
          ad::Tensor target = ad::Tensor::from({3}, {t[0], t[1], t[2]});
          for (int k = 0; k < 4; ++k)
            terms.push_back(ad::smooth_l1(ests[a].stage[static_cast<std::size_t>(k)], target));
        }
      }
      ad::Tensor loss = sum_terms(terms);
      loss.backward();
      sgd_step(group, lr);
      log.add(step, epoch, "train", "pose", loss.item());
      ++step;
    }
    maybe_snapshot(net, cfg, epoch);
  }
  if (!cfg.log_path.empty()) log.save_csv(cfg.log_path);
  return log;
}

TrainLog train_locnet(GraspNet& net, const GraspNet& pose_net,
                      const std::vector<Sample>& labelled, const TrainConfig& cfg) {
  cfg.validate();
  check_labelled(labelled, "train_locnet");
  if (!same_config(net.config(), pose_net.config()))
    throw ConfigError("train_locnet: pose network config does not match");

  copy_group(net, pose_net, "enc.");
  copy_group(net, pose_net, "pose.");

  // Encoder is frozen, so features and targets are constants for the whole run.
  std::vector<PyramidFeatures> feats;
  std::vector<ad::Tensor> targets;
  {
    ad::NoGradGuard ng;
    const BackboneConfig& bc = net.config();
    int half = bc.input_size / 2;
    for (const Sample& smp : labelled) {
      feats.push_back(net.encode(smp.rgb, smp.depth));
      Heatmap hm = heatmap_target(smp.annotations, half, half, 2, bc.heatmap_radius);
      targets.push_back(ad::Tensor::from({1, half, half}, hm.v));
    }
  }

  std::vector<ad::Tensor> group = net.param_group("dec.");
  TrainLog log;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(cfg.lr_loc, epoch, cfg.lr_halve_every);
    std::vector<int> order = epoch_order(cfg.seed, "loc", epoch, static_cast<int>(labelled.size()));
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<ad::Tensor> terms;
      std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t j = b; j < hi; ++j) {
        std::size_t i = static_cast<std::size_t>(order[j]);
        terms.push_back(ad::bce(net.locnet_forward(feats[i]), targets[i]));
      }
      ad::Tensor loss = ad::scale(sum_terms(terms), 1.0 / static_cast<double>(terms.size()));
      loss.backward();
      sgd_step(group, lr);
      log.add(step, epoch, "train", "loc", loss.item());
      ++step;
    }
    maybe_snapshot(net, cfg, epoch);
  }
  if (!cfg.log_path.empty()) log.save_csv(cfg.log_path);
  return log;
}

double detection_pose_loss(const Detection& d, const std::vector<GraspRect>& annotations,
                           int input_size) {
  if (annotations.empty()) throw ArgumentError("detection_pose_loss: no annotations");
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    double dx = annotations[i].x - d.loc.x, dy = annotations[i].y - d.loc.y;
    double dist = dx * dx + dy * dy;
    if (dist < best) {
      best = dist;
      nearest = i;
    }
  }
  auto target = normalize_pose(annotations[nearest], input_size);
  double loss = 0;
  for (const auto& pose : d.stage_poses) {
    double stage = 0;
    for (int j = 0; j < 3; ++j)
      stage += huber(pose[static_cast<std::size_t>(j)] - target[static_cast<std::size_t>(j)]);
    loss += stage / 3.0;
  }
  return loss / 4.0;
}

EvalReport evaluate(const DetectFn& detect, const std::vector<Sample>& eval_set) {
  if (eval_set.empty()) throw ArgumentError("evaluate: empty eval set");
  for (const Sample& smp : eval_set)
    if (smp.annotations.empty())
      throw ArgumentError("evaluate: sample " + smp.id + " has no annotations");

  EvalReport rep;
  int successes = 0;
  double sum_all = 0, sum_mc = 0;
  for (const Sample& smp : eval_set) {
    std::vector<Detection> dets = detect(smp);
    EvalRecord rec;
    rec.id = smp.id;
    rec.n_detections = static_cast<int>(dets.size());
    if (!dets.empty()) {
      std::size_t mc = 0;
      for (std::size_t i = 1; i < dets.size(); ++i)
        if (dets[i].m_uc < dets[mc].m_uc) mc = i;
      const Detection& bd = dets[mc];
      rec.success = is_success(bd.rect, smp.annotations);
      int s = smp.rgb.dim(1);
      rec.m_uc = bd.m_uc;
      rec.best = bd.rect;
      rec.loss_most_certain = detection_pose_loss(bd, smp.annotations, s);
      double all = 0;
      for (const Detection& d : dets) all += detection_pose_loss(d, smp.annotations, s);
      rec.loss_all = all / static_cast<double>(dets.size());
      ++rep.n_detected;
      sum_all += rec.loss_all;
      sum_mc += rec.loss_most_certain;
    }
    if (rec.success) ++successes;
    rep.records.push_back(std::move(rec));
  }
  rep.success_rate = static_cast<double>(successes) / static_cast<double>(rep.records.size());
  if (rep.n_detected > 0) {
    rep.pose_loss_all = sum_all / rep.n_detected;
    rep.pose_loss_most_certain = sum_mc / rep.n_detected;
  }
  return rep;
}

EvalReport evaluate(const GraspNet& net, const std::vector<Sample>& eval_set, int top_n) {
  return evaluate([&](const Sample& smp) { return net.detect(smp, top_n); }, eval_set);
}

void EvalReport::save_json(const std::string& path) const {
  nlohmann::json j;
  j["success_rate"] = success_rate;
  j["pose_loss_all"] = pose_loss_all;
  j["pose_loss_most_certain"] = pose_loss_most_certain;
  j["n_detected"] = n_detected;
  j["n_samples"] = records.size();
  nlohmann::json rows = nlohmann::json::array();
  for (const EvalRecord& r : records) {
    rows.push_back({{"id", r.id},
                    {"n_detections", r.n_detections},
                    {"success", r.success},
                    {"m_uc", r.m_uc},
                    {"loss_most_certain", r.loss_most_certain},
                    {"loss_all", r.loss_all},
                    {"best", {r.best.x, r.best.y, r.best.theta, r.best.w, r.best.h}}});
  }
  j["records"] = std::move(rows);
  write_file_atomic(path, j.dump(2) + "\n");
}

void EvalReport::save_csv(const std::string& path) const {
  std::string out = "id,n_detections,success,m_uc,loss_most_certain,loss_all,x,y,theta,w,h\n";
  for (const EvalRecord& r : records) {
    out += r.id + ',' + fmt_int(r.n_detections) + ',' + fmt_int(r.success ? 1 : 0) + ',' +
           fmt_real(r.m_uc) + ',' + fmt_real(r.loss_most_certain) + ',' + fmt_real(r.loss_all) +
           ',' + fmt_real(r.best.x) + ',' + fmt_real(r.best.y) + ',' + fmt_real(r.best.theta) +
           ',' + fmt_real(r.best.w) + ',' + fmt_real(r.best.h) + '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace grasp
