// Command-line front end: synth | train | adapt | eval | detect. Every run
// resolves its configuration, hashes its inputs, and writes a run manifest
// before producing any other artifact, so a run can be replayed bit-exactly
// from the manifest alone.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <graspdet/adapt.hpp>
#include <graspdet/data.hpp>
#include <graspdet/errors.hpp>
#include <graspdet/image_io.hpp>
#include <graspdet/synth.hpp>
#include <graspdet/textio.hpp>
#include <graspdet/trainer.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grasp;

namespace {

// Bad invocations (flags, config files, missing prerequisites) exit 2;
// runtime failures exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string data_rooted(const std::string& path) {
  const char* root = std::getenv("GRASPDET_DATA_ROOT");
  if (root == nullptr || *root == '\0' || path.empty() || fs::path(path).is_absolute())
    return path;
  return (fs::path(root) / path).string();
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Order-independent of traversal: files are folded in sorted relative-path
// order, each as (path, 0, content).
std::uint64_t hash_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const fs::path& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    h = fnv1a64(rel.data(), rel.size(), h);
    const char zero = 0;
    h = fnv1a64(&zero, 1, h);
    const std::string bytes = read_file(f.string());
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

json hash_input(const std::string& path) {
  const std::uint64_t h = fs::is_directory(path) ? hash_dir(path) : hash_file(path);
  return json{{"path", path}, {"fnv1a64", hex64(h)}};
}

// ---- config file -----------------------------------------------------------

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(path + ": config root must be a JSON object");
  static const std::set<std::string> sections = {"model", "train", "adapt", "synth"};
  for (const auto& [key, _] : j.items())
    if (!sections.count(key)) throw UsageError(path + ": unknown config section '" + key + "'");
  return j;
}

template <typename T>
void take(const json& sec, const char* key, T& out) {
  if (sec.contains(key)) sec.at(key).get_to(out);
}

void check_keys(const json& sec, const char* name, const std::set<std::string>& known) {
  for (const auto& [key, _] : sec.items())
    if (!known.count(key))
      throw UsageError(std::string("unknown config key ") + name + "." + key);
}

void apply_model_section(const json& cfg, BackboneConfig& bc) {
  if (!cfg.contains("model")) return;
  const json& m = cfg.at("model");
  check_keys(m, "model",
             {"input_size", "stage_channels", "crop_cells", "depth_branch", "heatmap_radius",
              "nms_threshold", "nms_window", "max_peaks"});
  take(m, "input_size", bc.input_size);
  if (m.contains("stage_channels")) {
    std::vector<int> ch = m.at("stage_channels").get<std::vector<int>>();
    if (ch.size() != 4) throw UsageError("model.stage_channels must list 4 values");
    std::copy(ch.begin(), ch.end(), bc.stage_channels.begin());
  }
  take(m, "crop_cells", bc.crop_cells);
  take(m, "depth_branch", bc.depth_branch);
  take(m, "heatmap_radius", bc.heatmap_radius);
  take(m, "nms_threshold", bc.nms_threshold);
  take(m, "nms_window", bc.nms_window);
  take(m, "max_peaks", bc.max_peaks);
}

void apply_train_section(const json& cfg, TrainConfig& tc) {
  if (!cfg.contains("train")) return;
  const json& t = cfg.at("train");
  check_keys(t, "train",
             {"batch_size", "lr_pose", "lr_loc", "lr_halve_every", "epochs", "checkpoint_every"});
  take(t, "batch_size", tc.batch_size);
  take(t, "lr_pose", tc.lr_pose);
  take(t, "lr_loc", tc.lr_loc);
  take(t, "lr_halve_every", tc.lr_halve_every);
  take(t, "epochs", tc.epochs);
  take(t, "checkpoint_every", tc.checkpoint_every);
}

void apply_adapt_section(const json& cfg, AdaptConfig& ac) {
  if (!cfg.contains("adapt")) return;
  const json& a = cfg.at("adapt");
  check_keys(a, "adapt",
             {"alpha_start", "alpha_end", "alpha_ramp_steps", "consistency_weight",
              "batch_labelled", "batch_pseudo", "top_k", "epochs", "lr", "max_translate"});
  take(a, "alpha_start", ac.alpha_start);
  take(a, "alpha_end", ac.alpha_end);
  take(a, "alpha_ramp_steps", ac.alpha_ramp_steps);
  take(a, "consistency_weight", ac.consistency_weight);
  take(a, "batch_labelled", ac.batch_labelled);
  take(a, "batch_pseudo", ac.batch_pseudo);
  take(a, "top_k", ac.top_k);
  take(a, "epochs", ac.epochs);
  take(a, "lr", ac.lr);
  take(a, "max_translate", ac.max_translate);
}

void apply_synth_section(const json& cfg, SynthConfig& sc) {
  if (!cfg.contains("synth")) return;
  const json& s = cfg.at("synth");
  check_keys(s, "synth",
             {"image_size", "bars", "ellipses", "lshapes", "min_objects", "max_objects",
              "palette", "brightness_lo", "brightness_hi", "noise_sigma", "emit_depth",
              "n_eval", "angle_margin_deg"});
  take(s, "image_size", sc.image_size);
  take(s, "bars", sc.bars);
  take(s, "ellipses", sc.ellipses);
  take(s, "lshapes", sc.lshapes);
  take(s, "min_objects", sc.min_objects);
  take(s, "max_objects", sc.max_objects);
  take(s, "palette", sc.palette);
  take(s, "brightness_lo", sc.brightness_lo);
  take(s, "brightness_hi", sc.brightness_hi);
  take(s, "noise_sigma", sc.noise_sigma);
  take(s, "emit_depth", sc.emit_depth);
  take(s, "n_eval", sc.n_eval);
  take(s, "angle_margin_deg", sc.angle_margin_deg);
}

// ---- resolved-config serialization ----------------------------------------

json to_json(const BackboneConfig& bc) {
  return json{{"input_size", bc.input_size},
              {"stage_channels", bc.stage_channels},
              {"crop_cells", bc.crop_cells},
              {"depth_branch", bc.depth_branch},
              {"heatmap_radius", bc.heatmap_radius},
              {"nms_threshold", bc.nms_threshold},
              {"nms_window", bc.nms_window},
              {"max_peaks", bc.max_peaks}};
}

json to_json(const TrainConfig& tc) {
  return json{{"batch_size", tc.batch_size},
              {"lr_pose", tc.lr_pose},
              {"lr_loc", tc.lr_loc},
              {"lr_halve_every", tc.lr_halve_every},
              {"epochs", tc.epochs},
              {"seed", tc.seed},
              {"checkpoint_every", tc.checkpoint_every}};
}

json to_json(const AdaptConfig& ac) {
  return json{{"method", adapt_method_name(ac.method)},
              {"alpha_start", ac.alpha_start},
              {"alpha_end", ac.alpha_end},
              {"alpha_ramp_steps", ac.alpha_ramp_steps},
              {"threshold_auto", ac.threshold_auto},
              {"threshold", fmt_real(ac.threshold)},
              {"consistency_weight", ac.consistency_weight},
              {"batch_labelled", ac.batch_labelled},
              {"batch_pseudo", ac.batch_pseudo},
              {"top_k", ac.top_k},
              {"epochs", ac.epochs},
              {"lr", ac.lr},
              {"max_translate", ac.max_translate},
              {"seed", ac.seed}};
}

json to_json(const SynthConfig& sc) {
  return json{{"seed", sc.seed},
              {"image_size", sc.image_size},
              {"bars", sc.bars},
              {"ellipses", sc.ellipses},
              {"lshapes", sc.lshapes},
              {"min_objects", sc.min_objects},
              {"max_objects", sc.max_objects},
              {"palette", sc.palette},
              {"brightness_lo", sc.brightness_lo},
              {"brightness_hi", sc.brightness_hi},
              {"noise_sigma", sc.noise_sigma},
              {"emit_depth", sc.emit_depth},
              {"domain", sc.domain},
              {"n_eval", sc.n_eval},
              {"angle_margin_deg", sc.angle_margin_deg}};
}

// Written atomically before any other artifact of the run.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        std::uint64_t seed, json config, json inputs,
                        std::vector<std::string> artifacts) {
  fs::create_directories(out_dir);
  json m{{"command", command},
         {"tool_version", GRASPDET_VERSION},
         {"seed", seed},
         {"config", std::move(config)},
         {"inputs", std::move(inputs)},
         {"artifacts", std::move(artifacts)}};
  write_file_atomic((fs::path(out_dir) / "run.json").string(), m.dump(2) + "\n");
}

// ---- dataset helpers --------------------------------------------------------

std::vector<Sample> load_split(const std::string& dir,
                               std::vector<std::string> DatasetManifest::*split) {
  std::vector<Sample> all = load_cornell_dir(dir);
  if (has_dataset_manifest(dir)) {
    DatasetManifest m = load_dataset_manifest(dir);
    return select_by_ids(all, m.*split);
  }
  if (split == &DatasetManifest::unlabelled_ids) {
    std::erase_if(all, [](const Sample& s) { return s.labelled; });
  } else {
    std::erase_if(all, [](const Sample& s) { return !s.labelled; });
  }
  return all;
}

// The eval split lives in its own subdirectory so the root holds exactly the
// training-time samples.
std::vector<Sample> load_eval_split(const std::string& dir) {
  const fs::path sub = fs::path(dir) / "eval";
  if (fs::exists(sub)) return load_cornell_dir(sub.string());
  return load_split(dir, &DatasetManifest::labelled_ids);
}

// ---- synth -----------------------------------------------------------------

struct SynthFlags {
  std::uint64_t seed = 0;
  int labelled = 18;
  int unlabelled = 90;
  std::optional<int> n_eval;
  std::optional<int> size;
  std::string shift = "source";
  std::string out;
  std::string config_path;
  bool force = false;
};

int cmd_synth(const SynthFlags& f) {
  SynthConfig sc = f.shift == "target" ? SynthConfig::target_domain(f.seed)
                                       : SynthConfig::source_domain(f.seed);
  apply_synth_section(load_config_file(f.config_path), sc);
  if (f.size) sc.image_size = *f.size;
  if (f.n_eval) sc.n_eval = *f.n_eval;

  const std::string out = data_rooted(f.out);
  if (fs::exists(out) && !fs::is_empty(out) && !f.force)
    throw UsageError(out + " is not empty (pass --force to overwrite)");

  const std::string eval_dir = (fs::path(out) / "eval").string();
  write_run_manifest(out, "synth", f.seed, to_json(sc), json::object(),
                     {out, eval_dir, (fs::path(out) / "manifest.json").string()});

  SynthSets sets = synth_generate(sc, f.labelled, f.unlabelled);
  DatasetManifest dm;
  dm.domain = sc.domain;
  for (const Sample& s : sets.labelled) dm.labelled_ids.push_back(s.id);
  for (const Sample& s : sets.unlabelled) dm.unlabelled_ids.push_back(s.id);
  for (const Sample& s : sets.eval) dm.eval_ids.push_back(s.id);

  std::vector<Sample> root = sets.labelled;
  root.insert(root.end(), sets.unlabelled.begin(), sets.unlabelled.end());
  save_sample_dir(out, root);
  fs::create_directories(eval_dir);
  save_sample_dir(eval_dir, sets.eval);
  save_dataset_manifest(out, dm);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string data;
  std::string stage = "pose";
  std::string out;
  std::string config_path;
  std::string init_from;
  std::uint64_t seed = 0;
  std::optional<int> epochs;
};

int cmd_train(const TrainFlags& f) {
  if (f.stage == "loc" && f.init_from.empty())
    throw UsageError("--stage loc requires --init-from <pose checkpoint>");

  const json cfg = load_config_file(f.config_path);
  const std::string data = data_rooted(f.data);
  std::vector<Sample> labelled = load_split(data, &DatasetManifest::labelled_ids);
  if (labelled.empty()) throw DataError(data + ": no labelled samples");

  TrainConfig tc;
  apply_train_section(cfg, tc);
  if (f.epochs) tc.epochs = *f.epochs;
  tc.seed = f.seed;
  tc.log_path = (fs::path(f.out) / ("train_" + f.stage + ".csv")).string();
  tc.checkpoint_prefix = (fs::path(f.out) / f.stage).string();

  const std::string ckpt = (fs::path(f.out) / (f.stage + ".ckpt")).string();
  json inputs{{"data", hash_input(data)}};
  if (!f.init_from.empty()) inputs["init_from"] = hash_input(f.init_from);

  if (f.stage == "pose") {
    BackboneConfig bc;
    apply_model_section(cfg, bc);
    // Unless the config pins a size, follow the data.
    if (!cfg.contains("model") || !cfg.at("model").contains("input_size"))
      bc.input_size = labelled[0].rgb.dim(1);
    write_run_manifest(f.out, "train", f.seed,
                       json{{"model", to_json(bc)}, {"train", to_json(tc)}, {"stage", f.stage}},
                       std::move(inputs), {ckpt, tc.log_path});
    GraspNet net(bc, f.seed);
    train_posenet(net, labelled, tc);
    net.save(ckpt);
  } else {
    GraspNet pose_net = GraspNet::load(f.init_from);
    write_run_manifest(f.out, "train", f.seed,
                       json{{"model", to_json(pose_net.config())},
                            {"train", to_json(tc)},
                            {"stage", f.stage}},
                       std::move(inputs), {ckpt, tc.log_path});
    GraspNet net(pose_net.config(), f.seed);
    train_locnet(net, pose_net, labelled, tc);
    net.save(ckpt);
  }
  return 0;
}

// ---- adapt -----------------------------------------------------------------

struct AdaptFlags {
  std::string method = "cmt";
  std::string data;
  std::string source_ckpt;
  std::string out;
  std::string config_path;
  std::string threshold = "auto";
  int labelled_n = 9;
  std::uint64_t seed = 0;
  std::optional<int> epochs;
};

void apply_threshold_flag(const std::string& t, AdaptConfig& ac) {
  if (t == "auto") {
    ac.threshold_auto = true;
    return;
  }
  ac.threshold_auto = false;
  try {
    ac.threshold = parse_real(t);
  } catch (const ParseError&) {
    throw UsageError("--threshold expects auto, inf, or a number, got '" + t + "'");
  }
}

void save_curve_csv(const std::string& path, const std::vector<AdaptEpochRow>& rows) {
  // No method column: runs that reduce to one another stay byte-identical,
  // and the method lives in the run manifest.
  std::string out = "epoch,eval_loss,pool_size,alpha,threshold,eval_loss_stage_avg\n";
  for (const AdaptEpochRow& r : rows)
    out += fmt_int(r.epoch) + ',' + fmt_real(r.eval_loss) + ',' + fmt_int(r.pool_size) + ',' +
           fmt_real(r.alpha) + ',' + fmt_real(r.threshold) + ',' +
           fmt_real(r.eval_loss_stage_avg) + '\n';
  write_file_atomic(path, out);
}

int cmd_adapt(const AdaptFlags& f) {
  AdaptConfig ac;
  ac.method = adapt_method_from(f.method);
  apply_adapt_section(load_config_file(f.config_path), ac);
  apply_threshold_flag(f.threshold, ac);
  if (f.epochs) ac.epochs = *f.epochs;
  ac.seed = f.seed;

  const std::string data = data_rooted(f.data);
  std::vector<Sample> all_labelled = load_split(data, &DatasetManifest::labelled_ids);
  if (f.labelled_n < 1 || f.labelled_n > static_cast<int>(all_labelled.size()))
    throw DataError(data + ": requested " + fmt_int(f.labelled_n) + " labelled samples, have " +
                    fmt_int(static_cast<long long>(all_labelled.size())));
  std::vector<Sample> labelled;
  for (int i : epoch_order(f.seed, "subsample", 0, static_cast<int>(all_labelled.size()))) {
    labelled.push_back(all_labelled[static_cast<std::size_t>(i)]);
    if (static_cast<int>(labelled.size()) == f.labelled_n) break;
  }
  std::vector<Sample> unlabelled = load_split(data, &DatasetManifest::unlabelled_ids);
  if (!fs::exists(fs::path(data) / "eval"))
    throw DataError(data + ": adaptation needs an eval split at " +
                    (fs::path(data) / "eval").string());
  std::vector<Sample> eval_set = load_cornell_dir((fs::path(data) / "eval").string());

  const std::string curves = (fs::path(f.out) / "curves.csv").string();
  const std::string final_ckpt = (fs::path(f.out) / "adapted.ckpt").string();
  const std::string best_ckpt = (fs::path(f.out) / "best.ckpt").string();
  write_run_manifest(f.out, "adapt", f.seed,
                     json{{"adapt", to_json(ac)}, {"labelled_n", f.labelled_n}},
                     json{{"data", hash_input(data)}, {"source_ckpt", hash_input(f.source_ckpt)}},
                     {curves, final_ckpt, best_ckpt});

  GraspNet source = GraspNet::load(f.source_ckpt);
  AdaptResult res = run_adaptation(source, labelled, unlabelled, eval_set, ac);
  save_curve_csv(curves, res.curve);
  res.student.save(final_ckpt);
  res.best.save(best_ckpt);
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
  std::string ckpt;
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
  int top_n = 3;
};

int cmd_eval(const EvalFlags& f) {
  const std::string data = data_rooted(f.data);
  const std::string report_json = (fs::path(f.out) / "eval.json").string();
  const std::string report_csv = (fs::path(f.out) / "eval.csv").string();
  write_run_manifest(f.out, "eval", f.seed, json{{"top_n", f.top_n}},
                     json{{"data", hash_input(data)}, {"ckpt", hash_input(f.ckpt)}},
                     {report_json, report_csv});

  GraspNet net = GraspNet::load(f.ckpt);
  std::vector<Sample> eval_set = load_eval_split(data);
  if (eval_set.empty()) throw DataError(data + ": no evaluation samples");
  EvalReport report = evaluate(net, eval_set, f.top_n);
  report.save_json(report_json);
  report.save_csv(report_csv);
  std::printf("success_rate %s pose_loss_all %s pose_loss_most_certain %s n_detected %d\n",
              fmt_real(report.success_rate).c_str(), fmt_real(report.pose_loss_all).c_str(),
              fmt_real(report.pose_loss_most_certain).c_str(), report.n_detected);
  return 0;
}

// ---- detect ----------------------------------------------------------------

struct DetectFlags {
  std::string ckpt;
  std::string image;
  std::string depth;
  std::string out = ".";
  std::string heatmap_path;
  std::string rects_path;
  std::uint64_t seed = 0;
  int top_n = 3;
};

int cmd_detect(const DetectFlags& f) {
  json inputs{{"ckpt", hash_input(f.ckpt)}, {"image", hash_input(f.image)}};
  if (!f.depth.empty()) inputs["depth"] = hash_input(f.depth);
  std::vector<std::string> artifacts;
  if (!f.heatmap_path.empty()) artifacts.push_back(f.heatmap_path);
  if (!f.rects_path.empty()) artifacts.push_back(f.rects_path);
  write_run_manifest(f.out, "detect", f.seed, json{{"top_n", f.top_n}}, std::move(inputs),
                     std::move(artifacts));

  GraspNet net = GraspNet::load(f.ckpt);
  const int size = net.config().input_size;
  ad::Tensor rgb = rgb_to_tensor(read_ppm(f.image));
  if (rgb.dim(1) != size || rgb.dim(2) != size)
    throw DataError(f.image + ": expected a " + fmt_int(size) + "x" + fmt_int(size) +
                    " image for this checkpoint, got " + fmt_int(rgb.dim(2)) + "x" +
                    fmt_int(rgb.dim(1)));
  ad::Tensor depth;
  if (!f.depth.empty()) {
    const ImageU16 dimg = read_pgm16(f.depth);
    if (dimg.height != size || dimg.width != size)
      throw DataError(f.depth + ": depth dimensions do not match the image");
    ad::Tensor raw = ad::Tensor::zeros({1, dimg.height, dimg.width});
    for (std::size_t i = 0; i < dimg.v.size(); ++i)
      raw.data()[i] = static_cast<ad::real>(dimg.v[i]);
    depth = depth_to_3ch(raw);
  }

  std::vector<Detection> dets = net.detect(rgb, depth, f.top_n);
  for (const Detection& d : dets)
    std::printf("%s %s %s %s %s %s %s\n", fmt_real(d.rect.x).c_str(), fmt_real(d.rect.y).c_str(),
                fmt_real(d.rect.theta).c_str(), fmt_real(d.rect.w).c_str(),
                fmt_real(d.rect.h).c_str(), fmt_real(d.score).c_str(),
                fmt_real(d.m_uc).c_str());

  if (!f.heatmap_path.empty()) {
    ad::NoGradGuard ng;
    Heatmap hm = net.heatmap_from(net.locnet_forward(net.encode(rgb, depth)));
    ad::Tensor grey = ad::Tensor::from({hm.rows, hm.cols},
                                       std::vector<ad::real>(hm.v.begin(), hm.v.end()));
    write_pgm8(f.heatmap_path, tensor_to_grey(grey));
  }
  if (!f.rects_path.empty()) {
    std::string csv = "detection,x0,y0,x1,y1,x2,y2,x3,y3\n";
    for (std::size_t i = 0; i < dets.size(); ++i) {
      csv += fmt_int(static_cast<long long>(i));
      for (const Vec2& v : rect_vertices(dets[i].rect))
        csv += ',' + fmt_real(v.x) + ',' + fmt_real(v.y);
      csv += '\n';
    }
    write_file_atomic(f.rects_path, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grasp detection pipeline: synthetic data, two-stage training, "
               "confidence-gated mean-teacher adaptation, evaluation"};
  app.set_version_flag("--version", GRASPDET_VERSION);
  app.require_subcommand(1);

  SynthFlags sf;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic Cornell-format dataset");
  synth->add_option("--seed", sf.seed, "Generation seed");
  synth->add_option("--labelled", sf.labelled, "Labelled sample count");
  synth->add_option("--unlabelled", sf.unlabelled, "Unlabelled sample count");
  synth->add_option("--eval", sf.n_eval, "Evaluation sample count (written to <out>/eval)");
  synth->add_option("--size", sf.size, "Square image size in pixels");
  synth->add_option("--shift", sf.shift, "Domain to render")
      ->check(CLI::IsMember({"source", "target"}));
  synth->add_option("--out", sf.out, "Output dataset directory")->required();
  synth->add_option("--config", sf.config_path, "JSON config file");
  synth->add_flag("--force", sf.force, "Write into a non-empty directory");

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "Train one stage of the detector");
  train->add_option("--data", tf.data, "Dataset directory")->required();
  train->add_option("--stage", tf.stage, "Training stage")
      ->check(CLI::IsMember({"pose", "loc"}));
  train->add_option("--init-from", tf.init_from, "Pose checkpoint to freeze (loc stage)");
  train->add_option("--seed", tf.seed, "Training seed");
  train->add_option("--epochs", tf.epochs, "Epoch count override");
  train->add_option("--out", tf.out, "Artifact directory")->required();
  train->add_option("--config", tf.config_path, "JSON config file");

  AdaptFlags af;
  CLI::App* adapt = app.add_subcommand("adapt", "Adapt a source checkpoint to a target dataset");
  adapt->add_option("--method", af.method, "Adaptation method")
      ->check(CLI::IsMember({"direct", "mt", "cmt"}));
  adapt->add_option("--data", af.data, "Target dataset directory")->required();
  adapt->add_option("--source-ckpt", af.source_ckpt, "Source checkpoint")->required();
  adapt->add_option("--labelled-n", af.labelled_n, "Labelled target samples to use");
  adapt->add_option("--threshold", af.threshold, "Confidence gate: auto, inf, or a number");
  adapt->add_option("--seed", af.seed, "Adaptation seed");
  adapt->add_option("--epochs", af.epochs, "Epoch count override");
  adapt->add_option("--out", af.out, "Artifact directory")->required();
  adapt->add_option("--config", af.config_path, "JSON config file");

  EvalFlags ef;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ef.ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--data", ef.data, "Dataset directory (uses <data>/eval when present)")
      ->required();
  eval->add_option("--top-n", ef.top_n, "Detections per image")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ef.seed, "Recorded in the manifest");
  eval->add_option("--out", ef.out, "Artifact directory");

  DetectFlags df;
  CLI::App* detect = app.add_subcommand("detect", "Run detection on one image");
  detect->add_option("--ckpt", df.ckpt, "Checkpoint")->required();
  detect->add_option("--image", df.image, "RGB image (binary PPM)")->required();
  detect->add_option("--depth", df.depth, "Depth image (16-bit binary PGM)");
  detect->add_option("--top-n", df.top_n, "Detections to print")->check(CLI::PositiveNumber);
  detect->add_option("--heatmap", df.heatmap_path, "Write the location heatmap as 8-bit PGM");
  detect->add_option("--rects", df.rects_path, "Write detection rectangle vertices as CSV");
  detect->add_option("--seed", df.seed, "Recorded in the manifest");
  detect->add_option("--out", df.out, "Manifest directory");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(sf);
    if (train->parsed()) return cmd_train(tf);
    if (adapt->parsed()) return cmd_adapt(af);
    if (eval->parsed()) return cmd_eval(ef);
    if (detect->parsed()) return cmd_detect(df);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
