#include "graspdet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "graspdet/errors.hpp"

namespace grasp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBgDepthMm = 1000.0;

struct Palette {
  double bg_a[3];
  double bg_b[3];  // checker partner; equal to bg_a for solid backgrounds
  int checker = 0;  // square size in px, 0 = solid
  double colors[4][3];
};

const Palette kDark = {
    {0.14, 0.15, 0.17},
    {0.14, 0.15, 0.17},
    0,
    {{0.82, 0.25, 0.22}, {0.22, 0.72, 0.28}, {0.25, 0.40, 0.88}, {0.88, 0.78, 0.22}},
};

const Palette kLight = {
    {0.72, 0.72, 0.70},
    {0.83, 0.83, 0.80},
    8,
    {{0.15, 0.60, 0.62}, {0.62, 0.18, 0.60}, {0.75, 0.42, 0.10}, {0.25, 0.25, 0.32}},
};

struct Piece {  // one solid: a rotated box or an ellipse
  bool ellipse;
  Vec2 c;
  double u_theta;  // long-axis direction
  double ha, hb;   // half extents along axis / normal
  bool inside(Vec2 p) const {
    const double cu = std::cos(u_theta), su = std::sin(u_theta);
    const double du = (p.x - c.x) * cu + (p.y - c.y) * su;
    const double dn = -(p.x - c.x) * su + (p.y - c.y) * cu;
    if (ellipse) return (du / ha) * (du / ha) + (dn / hb) * (dn / hb) <= 1.0;
    return std::abs(du) <= ha && std::abs(dn) <= hb;
  }
};

struct SceneObject {
  SynthObject desc;
  std::vector<Piece> pieces;
  double color[3];
  double height_mm;
  double bound_r;
  std::vector<GraspRect> grasps;
};

Vec2 dir(double theta) { return {std::cos(theta), std::sin(theta)}; }

double grasp_reach(double off, double w, double h) {
  return off + 0.5 * std::hypot(w, h);
}

SceneObject make_bar(Rng& rng, double theta_max, bool ellipse) {
  SceneObject o;
  const double theta_g = rng.uniform(-theta_max, theta_max);
  const double a = rng.uniform(8.0, 12.0);
  double b2 = ellipse ? rng.uniform(3.5, 5.0) : rng.uniform(2.5, 4.0);
  if (ellipse) b2 = std::min(b2, a - 3.0);
  const double axis = normalize_angle(theta_g + kPi / 2);
  o.desc = {ellipse ? SynthObject::kEllipse : SynthObject::kBar, {0, 0}, axis, a, b2};
  o.pieces.push_back({ellipse, {0, 0}, axis, a, b2});
  const double wg = 2 * b2 + 6, hg = 2 * b2 + 2;
  const int k = ellipse ? rng.uniform_int(1, 2)
                        : rng.uniform_int(2, 3);
  const double span = ellipse ? 0.2 * a : 0.35 * a;
  const Vec2 u = dir(axis);
  for (int j = 0; j < k; ++j) {
    const double t = k == 1 ? 0.0 : -span + 2 * span * j / (k - 1);
    o.grasps.push_back({t * u.x, t * u.y, theta_g, wg, hg});
  }
  o.bound_r = std::max(std::hypot(a, b2), grasp_reach(span, wg, hg)) + 2;
  return o;
}

SceneObject make_lshape(Rng& rng, double margin) {
  SceneObject o;
  // Both arm normals must stay off the +-pi/2 wraparound, which confines the
  // first-arm axis angle to [margin, pi/2 - margin] up to sign.
  const double sgn = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double phi = sgn * rng.uniform(margin, kPi / 2 - margin);
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double a1 = rng.uniform(5.5, 7.0);
  const double a2 = rng.uniform(5.5, 7.0);
  const double b2 = rng.uniform(2.2, 3.2);
  const Vec2 u = dir(phi);
  const Vec2 n = {-std::sin(phi) * side, std::cos(phi) * side};
  // Corner placed so the centroid of the two arms sits at the local origin.
  const Vec2 corner = {(a1 * u.x - a2 * n.x) / 2, (a1 * u.y - a2 * n.y) / 2};
  const Vec2 m1 = {corner.x - a1 * u.x, corner.y - a1 * u.y};
  const Vec2 m2 = {corner.x + a2 * n.x, corner.y + a2 * n.y};
  o.desc = {SynthObject::kLShape, {0, 0}, normalize_angle(phi), a1, b2};
  o.pieces.push_back({false, m1, phi, a1, b2});
  o.pieces.push_back({false, m2, std::atan2(n.y, n.x), a2, b2});
  const double wg = 2 * b2 + 6, hg = 2 * b2 + 2;
  // One grasp per arm, biased toward the free end, away from the junction.
  const Vec2 g1 = {m1.x - 0.25 * a1 * u.x, m1.y - 0.25 * a1 * u.y};
  const Vec2 g2 = {m2.x + 0.25 * a2 * n.x, m2.y + 0.25 * a2 * n.y};
  o.grasps.push_back({g1.x, g1.y, normalize_angle(phi + kPi / 2), wg, hg});
  o.grasps.push_back({g2.x, g2.y, normalize_angle(phi), wg, hg});
  o.bound_r = 1.5 * std::hypot(a1, a2) + 0.5 * std::hypot(wg, hg) + 2;
  return o;
}

}  // namespace

SynthConfig SynthConfig::source_domain(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.domain = "source";
  c.palette = "dark";
  c.emit_depth = true;
  return c;
}

SynthConfig SynthConfig::target_domain(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.domain = "target";
  c.palette = "light";
  c.emit_depth = false;
  c.noise_sigma = 0.015;
  return c;
}

SynthSample synth_make_sample(const SynthConfig& cfg, int index) {
  if (cfg.image_size < 48) throw ConfigError("synth image_size must be >= 48");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw ConfigError("bad synth object count range");
  if (!cfg.bars && !cfg.ellipses && !cfg.lshapes)
    throw ConfigError("no synth shapes enabled");
  if (cfg.palette != "dark" && cfg.palette != "light")
    throw ConfigError("unknown palette: " + cfg.palette);
  const Palette& pal = cfg.palette == "dark" ? kDark : kLight;
  const double margin = cfg.angle_margin_deg * kPi / 180.0;
  const double theta_max = kPi / 2 - margin;
  const int s = cfg.image_size;

  Rng rng(mix64(cfg.seed, static_cast<std::uint64_t>(index)));
  const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  const int n_obj = rng.uniform_int(cfg.min_objects, cfg.max_objects);

  std::vector<int> kinds;
  if (cfg.bars) kinds.push_back(0);
  if (cfg.ellipses) kinds.push_back(1);
  if (cfg.lshapes) kinds.push_back(2);

  std::vector<SceneObject> objs;
  for (int i = 0; i < n_obj; ++i) {
    const int kind = kinds[rng.uniform_int(0, static_cast<int>(kinds.size()) - 1)];
    SceneObject o = kind == 2 ? make_lshape(rng, margin) : make_bar(rng, theta_max, kind == 1);
    const double lo = o.bound_r + 1, hi = s - o.bound_r - 1;
    if (lo > hi) throw ConfigError("synth objects too large for frame");
    Vec2 c{0, 0};
    for (int attempt = 0; attempt < 200; ++attempt) {
      c = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
      bool ok = true;
      for (const auto& prev : objs)
        if (std::hypot(c.x - prev.desc.center.x, c.y - prev.desc.center.y) <
            o.bound_r + prev.bound_r)
          ok = false;
      if (ok) break;
    }
    o.desc.center = c;
    for (auto& p : o.pieces) {
      p.c.x += c.x;
      p.c.y += c.y;
    }
    for (auto& g : o.grasps) {
      g.x += c.x;
      g.y += c.y;
    }
    const int ci = rng.uniform_int(0, 3);
    for (int ch = 0; ch < 3; ++ch)
      o.color[ch] = std::clamp(pal.colors[ci][ch] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    o.height_mm = rng.uniform(25.0, 40.0);
    objs.push_back(std::move(o));
  }

  Sample sm;
  sm.id = cfg.domain + "-" + [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", index);
    return std::string(buf);
  }();
  sm.domain = cfg.domain;
  sm.rgb = ad::Tensor::zeros({3, s, s});
  ad::real* rgb = sm.rgb.data();
  std::vector<double> depth;
  if (cfg.emit_depth) depth.assign(static_cast<std::size_t>(s) * s, kBgDepthMm);

  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * s + c;
      const bool alt = pal.checker > 0 && ((r / pal.checker) + (c / pal.checker)) % 2 == 1;
      const double* bg = alt ? pal.bg_b : pal.bg_a;
      double px[3] = {bg[0], bg[1], bg[2]};
      for (const auto& o : objs) {
        // 2x2 supersampled coverage
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx)
            if (o.pieces.size() == 2
                    ? (o.pieces[0].inside({c + 0.25 + 0.5 * sx, r + 0.25 + 0.5 * sy}) ||
                       o.pieces[1].inside({c + 0.25 + 0.5 * sx, r + 0.25 + 0.5 * sy}))
                    : o.pieces[0].inside({c + 0.25 + 0.5 * sx, r + 0.25 + 0.5 * sy}))
              ++hits;
        if (hits == 0) continue;
        const double alpha = hits / 4.0;
        for (int ch = 0; ch < 3; ++ch) px[ch] = (1 - alpha) * px[ch] + alpha * o.color[ch];
        if (cfg.emit_depth && alpha >= 0.5) depth[i] = kBgDepthMm - o.height_mm;
      }
      for (int ch = 0; ch < 3; ++ch) rgb[ch * plane + i] = static_cast<ad::real>(px[ch]);
    }

  // Photometrics last, then quantize to the on-disk bit depth.
  for (std::size_t i = 0; i < 3 * plane; ++i) {
    const double v =
        std::clamp(static_cast<double>(rgb[i]) * brightness + cfg.noise_sigma * rng.normal(),
                   0.0, 1.0);
    rgb[i] = static_cast<ad::real>(std::lround(v * 255.0) / 255.0);
  }
  if (cfg.emit_depth) {
    sm.raw_depth = ad::Tensor::zeros({1, s, s});
    ad::real* d = sm.raw_depth.data();
    for (std::size_t i = 0; i < plane; ++i) {
      double v = depth[i] + rng.normal();
      if (rng.bernoulli(0.02)) v = 0;  // dropout holes, exercised by inpainting
      d[i] = static_cast<ad::real>(std::clamp(std::round(v), 0.0, 65535.0));
    }
    sm.depth = depth_to_3ch(sm.raw_depth);
  }

  SynthSample out;
  for (const auto& o : objs) {
    for (const auto& g : o.grasps) {
      if (sm.annotations.size() >= 5) break;
      sm.annotations.push_back(rect_normalize(g));
    }
    out.objects.push_back(o.desc);
  }
  sm.labelled = !sm.annotations.empty();
  out.sample = std::move(sm);
  return out;
}

SynthSets synth_generate(const SynthConfig& cfg, int n_labelled, int n_unlabelled) {
  if (n_labelled < 0 || n_unlabelled < 0 || cfg.n_eval < 0)
    throw ArgumentError("negative synth set size");
  SynthSets sets;
  int index = 0;
  for (int i = 0; i < n_labelled; ++i)
    sets.labelled.push_back(synth_make_sample(cfg, index++).sample);
  for (int i = 0; i < n_unlabelled; ++i) {
    Sample s = synth_make_sample(cfg, index++).sample;
    s.annotations.clear();
    s.labelled = false;
    sets.unlabelled.push_back(std::move(s));
  }
  for (int i = 0; i < cfg.n_eval; ++i)
    sets.eval.push_back(synth_make_sample(cfg, index++).sample);
  return sets;
}

}  // namespace grasp
