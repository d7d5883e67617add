#include "graspdet/model.hpp"

#include <algorithm>
#include <cmath>

#include "graspdet/errors.hpp"
#include "graspdet/rng.hpp"
#include "graspdet/textio.hpp"
#include "json.hpp"

namespace grasp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kPoseHidden = 32;
// Background-leaning location-head bias so an untrained map sits well below
// the peak threshold.
constexpr double kHeadBiasInit = -2.0;

std::string stage_name(int k) { return "s" + fmt_int(k + 1); }

}  // namespace

void BackboneConfig::validate() const {
  if (input_size <= 0 || input_size % 16 != 0)
    throw ConfigError("input_size must be a positive multiple of 16");
  for (int c : stage_channels)
    if (c <= 0) throw ConfigError("stage channels must be positive");
  if (crop_cells < 1 || crop_cells % 2 == 0) throw ConfigError("crop_cells must be odd");
  if (crop_cells > input_size / 16)
    throw ConfigError("crop_cells exceeds the coarsest stage size");
  if (heatmap_radius <= 0) throw ConfigError("heatmap_radius must be positive");
  if (!(nms_threshold > 0 && nms_threshold < 1))
    throw ConfigError("nms_threshold must be in (0,1)");
  if (nms_window < 1 || nms_window % 2 == 0) throw ConfigError("nms_window must be odd");
  if (max_peaks < 0) throw ConfigError("max_peaks must be non-negative");
}

std::array<double, 3> normalize_pose(const GraspRect& r, int input_size) {
  return {r.theta / (kPi / 2), r.w / input_size, r.h / input_size};
}

GraspRect denormalize_pose(const std::array<double, 3>& p, Vec2 loc, int input_size) {
  const double w = std::max(p[1] * input_size, 1e-6);
  const double h = std::max(p[2] * input_size, 1e-6);
  return make_rect(loc.x, loc.y, p[0] * (kPi / 2), w, h);
}

GraspNet::GraspNet(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

void GraspNet::add_param(const std::string& name, std::vector<int> shape, double stddev,
                         Rng& rng) {
  ad::Tensor t = stddev > 0 ? ad::Tensor::randn(shape, static_cast<ad::real>(stddev), rng, true)
                            : ad::Tensor::zeros(shape, true);
  index_[name] = static_cast<int>(params_.size());
  params_.push_back({name, std::move(t)});
}

void GraspNet::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto& ch = cfg_.stage_channels;
  auto he_conv = [](int cin, int k) { return std::sqrt(2.0 / (cin * k * k)); };

  std::vector<std::string> branches = {"rgb"};
  if (cfg_.depth_branch) branches.push_back("d");
  for (const auto& b : branches) {
    int cin = 3;
    for (int k = 0; k < 4; ++k) {
      const std::string base = "enc." + b + ".b" + fmt_int(k + 1);
      add_param(base + ".c1.w", {ch[k], cin, 3, 3}, he_conv(cin, 3), rng);
      add_param(base + ".c1.b", {ch[k]}, 0, rng);
      add_param(base + ".c2.w", {ch[k], ch[k], 3, 3}, he_conv(ch[k], 3), rng);
      add_param(base + ".c2.b", {ch[k]}, 0, rng);
      cin = ch[k];
    }
  }
  // Decoder: deepest stage in, one merge per finer stage, channel counts
  // descending along the pyramid.
  for (int k = 3; k >= 1; --k) {
    const std::string lat = "dec.lat" + fmt_int(k);
    const std::string mrg = "dec.m" + fmt_int(k);
    add_param(lat + ".w", {ch[k], ch[k - 1], 1, 1}, he_conv(ch[k - 1], 1), rng);
    add_param(lat + ".b", {ch[k]}, 0, rng);
    add_param(mrg + ".w", {ch[k - 1], ch[k], 3, 3}, he_conv(ch[k], 3), rng);
    add_param(mrg + ".b", {ch[k - 1]}, 0, rng);
  }
  add_param("dec.head.w", {1, ch[0], 1, 1}, he_conv(ch[0], 1), rng);
  add_param("dec.head.b", {1}, 0, rng);
  params_[index_["dec.head.b"]].value.data()[0] = static_cast<ad::real>(kHeadBiasInit);

  const int cc = cfg_.crop_cells;
  for (int k = 0; k < 4; ++k) {
    const std::string base = "pose." + stage_name(k);
    const int fan_in = ch[k] * cc * cc;
    add_param(base + ".fc1.w", {fan_in, kPoseHidden}, std::sqrt(2.0 / fan_in), rng);
    add_param(base + ".fc1.b", {kPoseHidden}, 0, rng);
    // Small output init keeps tanh/sigmoid near their linear range so the
    // heads start unsaturated with live gradients.
    add_param(base + ".fc2.w", {kPoseHidden, 3}, 0.01, rng);
    add_param(base + ".fc2.b", {3}, 0, rng);
  }
}

ad::Tensor GraspNet::p(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return params_[it->second].value;
}

std::vector<ad::Tensor> GraspNet::param_group(const std::string& prefix) const {
  std::vector<ad::Tensor> out;
  for (const auto& np : params_)
    if (np.name.rfind(prefix, 0) == 0) out.push_back(np.value);
  if (out.empty()) throw ArgumentError("empty parameter group: " + prefix);
  return out;
}

void GraspNet::set_trainable(const std::string& prefix, bool on) {
  bool any = false;
  for (auto& np : params_)
    if (np.name.rfind(prefix, 0) == 0) {
      np.value.set_requires_grad(on);
      any = true;
    }
  if (!any) throw ArgumentError("empty parameter group: " + prefix);
}

PyramidFeatures GraspNet::encode(const ad::Tensor& rgb, const ad::Tensor& depth) const {
  const int s = cfg_.input_size;
  if (!rgb.defined() || rgb.shape() != std::vector<int>{3, s, s})
    throw DimensionError("encode expects rgb [3," + fmt_int(s) + "," + fmt_int(s) + "]");
  if (depth.defined()) {
    if (!cfg_.depth_branch) throw ArgumentError("model has no depth branch");
    if (depth.shape() != std::vector<int>{3, s, s})
      throw DimensionError("encode expects depth [3," + fmt_int(s) + "," + fmt_int(s) + "]");
  }
  auto branch = [&](const std::string& b, const ad::Tensor& in) {
    std::array<ad::Tensor, 4> xs;
    ad::Tensor h = in;
    for (int k = 0; k < 4; ++k) {
      const std::string base = "enc." + b + ".b" + fmt_int(k + 1);
      h = ad::relu(ad::conv2d(h, p(base + ".c1.w"), p(base + ".c1.b"), 2));
      h = ad::relu(ad::conv2d(h, p(base + ".c2.w"), p(base + ".c2.b"), 1));
      xs[k] = h;
    }
    return xs;
  };
  PyramidFeatures f;
  f.input_size = s;
  f.x = branch("rgb", rgb);
  if (depth.defined()) {
    const auto xd = branch("d", depth);
    for (int k = 0; k < 4; ++k) f.x[k] = ad::add(f.x[k], xd[k]);
  }
  return f;
}

ad::Tensor GraspNet::locnet_forward(const PyramidFeatures& f) const {
  for (int k = 0; k < 4; ++k)
    if (!f.x[k].defined()) throw ArgumentError("incomplete feature pyramid");
  ad::Tensor d = f.x[3];
  for (int k = 3; k >= 1; --k) {
    const std::string lat = "dec.lat" + fmt_int(k);
    const std::string mrg = "dec.m" + fmt_int(k);
    ad::Tensor up = ad::upsample2x(d);
    ad::Tensor side = ad::conv2d(f.x[k - 1], p(lat + ".w"), p(lat + ".b"), 1);
    d = ad::relu(ad::conv2d(ad::add(up, side), p(mrg + ".w"), p(mrg + ".b"), 1));
  }
  return ad::sigmoid(ad::conv2d(d, p("dec.head.w"), p("dec.head.b"), 1));
}

Heatmap GraspNet::heatmap_from(const ad::Tensor& loc_map) const {
  const int half = cfg_.input_size / 2;
  if (!loc_map.defined() || loc_map.shape() != std::vector<int>{1, half, half})
    throw DimensionError("location map shape mismatch");
  Heatmap hm;
  hm.rows = half;
  hm.cols = half;
  hm.stride = 2;
  hm.v.assign(loc_map.data(), loc_map.data() + loc_map.size());
  return hm;
}

std::vector<PoseEstimate> GraspNet::posenet_forward(const PyramidFeatures& f,
                                                    const std::vector<Vec2>& locs) const {
  const int s = cfg_.input_size;
  if (f.input_size != s) throw ArgumentError("feature pyramid size mismatch");
  const int cc = cfg_.crop_cells;
  std::vector<PoseEstimate> out;
  out.reserve(locs.size());
  for (const Vec2& loc : locs) {
    if (!(loc.x >= 0 && loc.x < s && loc.y >= 0 && loc.y < s))
      throw ArgumentError("pose location outside the image");
    PoseEstimate est;
    for (int k = 0; k < 4; ++k) {
      const int stride = 2 << k;
      const int size_k = s / stride;
      const int cell_c = std::min(static_cast<int>(loc.x / stride), size_k - 1);
      const int cell_r = std::min(static_cast<int>(loc.y / stride), size_k - 1);
      const int c0 = std::clamp(cell_c - cc / 2, 0, size_k - cc);
      const int r0 = std::clamp(cell_r - cc / 2, 0, size_k - cc);
      const std::string base = "pose." + stage_name(k);
      ad::Tensor crop = ad::crop2d(f.x[k], r0, c0, cc, cc);
      ad::Tensor flat = ad::reshape(crop, {1, cfg_.stage_channels[k] * cc * cc});
      ad::Tensor h =
          ad::relu(ad::add_row_bias(ad::matmul(flat, p(base + ".fc1.w")), p(base + ".fc1.b")));
      ad::Tensor z = ad::reshape(
          ad::add_row_bias(ad::matmul(h, p(base + ".fc2.w")), p(base + ".fc2.b")), {3});
      est.stage[k] = ad::concat({ad::tanh(ad::slice(z, 0, 1)), ad::sigmoid(ad::slice(z, 1, 2))});
    }
    est.mean = ad::scale(
        ad::add(ad::add(est.stage[0], est.stage[1]), ad::add(est.stage[2], est.stage[3])), 0.25);
    double var_sum = 0;
    for (int c = 0; c < 3; ++c) {
      double m = 0;
      for (int k = 0; k < 4; ++k) m += est.stage[k].data()[c];
      m /= 4;
      double v = 0;
      for (int k = 0; k < 4; ++k) {
        const double d = est.stage[k].data()[c] - m;
        v += d * d;
      }
      var_sum += v / 4;
    }
    est.m_uc = var_sum;
    out.push_back(std::move(est));
  }
  return out;
}

std::vector<Detection> GraspNet::detect(const ad::Tensor& rgb, const ad::Tensor& depth,
                                        int top_n) const {
  if (top_n <= 0) throw ArgumentError("top_n must be positive");
  ad::NoGradGuard ng;
  const PyramidFeatures f = encode(rgb, depth);
  const Heatmap hm = heatmap_from(locnet_forward(f));
  const auto peaks = nms_peaks(hm, cfg_.nms_threshold, cfg_.nms_window, cfg_.max_peaks);
  if (peaks.empty()) return {};
  std::vector<Vec2> locs;
  locs.reserve(peaks.size());
  for (const auto& pk : peaks) locs.push_back({pk.x, pk.y});
  const auto poses = posenet_forward(f, locs);
  std::vector<Detection> dets;
  dets.reserve(peaks.size());
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    Detection d;
    d.loc = locs[i];
    d.score = peaks[i].score;
    d.m_uc = poses[i].m_uc;
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 3; ++c) d.stage_poses[k][c] = poses[i].stage[k].data()[c];
    for (int c = 0; c < 3; ++c) d.mean_pose[c] = poses[i].mean.data()[c];
    d.rect = denormalize_pose(d.mean_pose, d.loc, cfg_.input_size);
    dets.push_back(d);
  }
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.m_uc != b.m_uc) return a.m_uc < b.m_uc;
    if (a.score != b.score) return a.score > b.score;
    if (a.loc.y != b.loc.y) return a.loc.y < b.loc.y;
    return a.loc.x < b.loc.x;
  });
  if (static_cast<int>(dets.size()) > top_n) dets.resize(top_n);
  return dets;
}

std::vector<Detection> GraspNet::detect(const Sample& s, int top_n) const {
  const ad::Tensor depth =
      cfg_.depth_branch && s.depth.defined() ? s.depth : ad::Tensor();
  return detect(s.rgb, depth, top_n);
}

GraspNet GraspNet::clone() const {
  GraspNet out;
  out.cfg_ = cfg_;
  out.index_ = index_;
  out.params_.reserve(params_.size());
  for (const auto& np : params_) {
    ad::Tensor t = ad::Tensor::zeros(np.value.shape(), np.value.requires_grad());
    std::copy(np.value.data(), np.value.data() + np.value.size(), t.data());
    out.params_.push_back({np.name, std::move(t)});
  }
  return out;
}

void GraspNet::copy_params_from(const GraspNet& other) {
  if (other.params_.size() != params_.size()) throw ArgumentError("parameter set mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        params_[i].value.shape() != other.params_[i].value.shape())
      throw ArgumentError("parameter set mismatch at " + params_[i].name);
    std::copy(other.params_[i].value.data(),
              other.params_[i].value.data() + other.params_[i].value.size(),
              params_[i].value.data());
  }
}

void GraspNet::save(const std::string& path) const {
  save_checkpoint(path, params_);
  nlohmann::json j;
  j["input_size"] = cfg_.input_size;
  j["stage_channels"] = cfg_.stage_channels;
  j["crop_cells"] = cfg_.crop_cells;
  j["depth_branch"] = cfg_.depth_branch;
  j["heatmap_radius"] = cfg_.heatmap_radius;
  j["nms_threshold"] = cfg_.nms_threshold;
  j["nms_window"] = cfg_.nms_window;
  j["max_peaks"] = cfg_.max_peaks;
  write_file_atomic(path + ".json", j.dump(2) + "\n");
}

GraspNet GraspNet::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ".json: " + e.what());
  }
  BackboneConfig cfg;
  cfg.input_size = j.value("input_size", cfg.input_size);
  if (j.contains("stage_channels")) {
    const auto v = j["stage_channels"].get<std::vector<int>>();
    if (v.size() != 4) throw ConfigError("stage_channels must have 4 entries");
    std::copy(v.begin(), v.end(), cfg.stage_channels.begin());
  }
  cfg.crop_cells = j.value("crop_cells", cfg.crop_cells);
  cfg.depth_branch = j.value("depth_branch", cfg.depth_branch);
  cfg.heatmap_radius = j.value("heatmap_radius", cfg.heatmap_radius);
  cfg.nms_threshold = j.value("nms_threshold", cfg.nms_threshold);
  cfg.nms_window = j.value("nms_window", cfg.nms_window);
  cfg.max_peaks = j.value("max_peaks", cfg.max_peaks);

  GraspNet net(cfg, 0);
  const auto loaded = load_checkpoint(path);
  if (loaded.size() != net.params_.size())
    throw ConfigError("checkpoint parameter count mismatch: " + path);
  for (const auto& np : loaded) {
    auto it = net.index_.find(np.name);
    if (it == net.index_.end()) throw ConfigError("unexpected parameter " + np.name);
    ad::Tensor& dst = net.params_[it->second].value;
    if (dst.shape() != np.value.shape())
      throw ConfigError("shape mismatch for parameter " + np.name);
    std::copy(np.value.data(), np.value.data() + np.value.size(), dst.data());
  }
  return net;
}

}  // namespace grasp
