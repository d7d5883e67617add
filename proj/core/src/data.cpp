#include "graspdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>

#include "graspdet/errors.hpp"
#include "graspdet/image_io.hpp"
#include "graspdet/textio.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace grasp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kResizeW = 456;
constexpr int kResizeH = 342;
constexpr int kCropSize = 288;

Vec2 rot_once(Vec2 p, double s) { return {p.y, s - p.x}; }

// Exact grid gather; both frames share the square extent g.size.
ad::Tensor transform_image(const ad::Tensor& t, const GeomTransform& g, ad::real fill) {
  const int c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  ad::Tensor out = ad::Tensor::zeros({c, h, w});
  const ad::real* in = t.data();
  ad::real* o = out.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      const Vec2 src = g.invert(Vec2{col + 0.5, r + 0.5});
      const int sc = static_cast<int>(std::floor(src.x));
      const int sr = static_cast<int>(std::floor(src.y));
      const std::size_t di = static_cast<std::size_t>(r) * w + col;
      if (sr >= 0 && sr < h && sc >= 0 && sc < w) {
        const std::size_t si = static_cast<std::size_t>(sr) * w + sc;
        for (int ch = 0; ch < c; ++ch) o[ch * plane + di] = in[ch * plane + si];
      } else {
        for (int ch = 0; ch < c; ++ch) o[ch * plane + di] = fill;
      }
    }
  return out;
}

// Fills zero pixels from the nearest valid pixel (multi-source BFS, so ties
// resolve deterministically by queue order).
std::vector<double> inpaint_nearest(const double* d, int h, int w) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> out(d, d + n);
  std::vector<char> seen(n, 0);
  std::deque<std::size_t> q;
  for (std::size_t i = 0; i < n; ++i)
    if (out[i] != 0.0) {
      seen[i] = 1;
      q.push_back(i);
    }
  if (q.empty()) throw DataError("depth map has no valid pixels");
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop_front();
    const int r = static_cast<int>(i) / w, c = static_cast<int>(i) % w;
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
      const std::size_t j = static_cast<std::size_t>(nr) * w + nc;
      if (!seen[j]) {
        seen[j] = 1;
        out[j] = out[i];
        q.push_back(j);
      }
    }
  }
  return out;
}

ad::Tensor crop_values(const ad::Tensor& t, int y0, int x0, int size) {
  const int c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  if (y0 < 0 || x0 < 0 || y0 + size > h || x0 + size > w)
    throw ArgumentError("crop outside image");
  ad::Tensor out = ad::Tensor::zeros({c, size, size});
  const ad::real* in = t.data();
  ad::real* o = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col)
        o[(static_cast<std::size_t>(ch) * size + r) * size + col] =
            in[(static_cast<std::size_t>(ch) * h + (y0 + r)) * w + (x0 + col)];
  return out;
}

double parse_coord(std::string tok) {
  for (char& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return parse_real(tok);
}

std::vector<GraspRect> parse_rect_file(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<Vec2> pts;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    ++line_no;
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 2)
      throw ParseError(path + ":" + fmt_int(static_cast<long long>(line_no)) +
                       ": expected 'x y'");
    try {
      pts.push_back({parse_coord(toks[0]), parse_coord(toks[1])});
    } catch (const ParseError&) {
      throw ParseError(path + ":" + fmt_int(static_cast<long long>(line_no)) +
                       ": bad coordinate");
    }
  }
  if (pts.size() % 4 != 0)
    throw ParseError(path + ": vertex count " + fmt_int(static_cast<long long>(pts.size())) +
                     " is not a multiple of 4");
  std::vector<GraspRect> rects;
  for (std::size_t g = 0; g < pts.size() / 4; ++g) {
    const Vec2* v = &pts[4 * g];
    bool bad = false;
    for (int i = 0; i < 4; ++i)
      if (!std::isfinite(v[i].x) || !std::isfinite(v[i].y)) bad = true;
    if (bad) {
      std::fprintf(stderr, "warning: %s: rectangle %zu has non-finite vertices, skipped\n",
                   path.c_str(), g + 1);
      continue;
    }
    try {
      rects.push_back(rect_from_vertices({v[0], v[1], v[2], v[3]}));
    } catch (const GeometryError& e) {
      std::fprintf(stderr, "warning: %s: rectangle %zu skipped: %s\n", path.c_str(), g + 1,
                   e.what());
    }
  }
  return rects;
}

}  // namespace

Vec2 GeomTransform::apply(Vec2 p) const {
  const double s = size;
  if (flip) p.x = s - p.x;
  for (int k = 0; k < ((rot90 % 4) + 4) % 4; ++k) p = rot_once(p, s);
  return {p.x + dx, p.y + dy};
}

Vec2 GeomTransform::invert(Vec2 p) const {
  const double s = size;
  p.x -= dx;
  p.y -= dy;
  const int k_inv = (4 - ((rot90 % 4) + 4) % 4) % 4;
  for (int k = 0; k < k_inv; ++k) p = rot_once(p, s);
  if (flip) p.x = s - p.x;
  return p;
}

double GeomTransform::apply_theta(double theta) const {
  double t = flip ? -theta : theta;
  t += (((rot90 % 4) + 4) % 4) * (kPi / 2);
  return normalize_angle(t);
}

GraspRect GeomTransform::apply(const GraspRect& r) const {
  const Vec2 c = apply(Vec2{r.x, r.y});
  return {c.x, c.y, apply_theta(r.theta), r.w, r.h};
}

GraspRect GeomTransform::invert(const GraspRect& r) const {
  const Vec2 c = invert(Vec2{r.x, r.y});
  double t = r.theta - (((rot90 % 4) + 4) % 4) * (kPi / 2);
  if (flip) t = -t;
  return {c.x, c.y, normalize_angle(t), r.w, r.h};
}

std::pair<Sample, GeomTransform> augment(const Sample& s, Rng& rng, const AugmentOptions& opts) {
  if (!s.rgb.defined() || s.rgb.shape().size() != 3 || s.rgb.shape()[0] != 3)
    throw ArgumentError("augment needs an RGB sample [3,H,W]");
  const int h = s.rgb.shape()[1], w = s.rgb.shape()[2];
  if (h != w) throw ArgumentError("augment needs a square frame");
  GeomTransform g;
  g.size = h;
  if (opts.allow_flip) g.flip = rng.bernoulli(0.5);
  if (opts.allow_rot90) g.rot90 = static_cast<int>(rng.uniform_int(0, 3));
  if (opts.max_translate > 0) {
    g.dx = static_cast<int>(rng.uniform_int(-opts.max_translate, opts.max_translate));
    g.dy = static_cast<int>(rng.uniform_int(-opts.max_translate, opts.max_translate));
  }
  Sample out;
  out.id = s.id;
  out.domain = s.domain;
  out.rgb = transform_image(s.rgb, g, 0);
  if (opts.photometric) {
    const double b = rng.uniform(opts.brightness_lo, opts.brightness_hi);
    ad::real* p = out.rgb.data();
    for (std::size_t i = 0; i < static_cast<std::size_t>(out.rgb.size()); ++i) {
      const double v = static_cast<double>(p[i]) * b + opts.noise_sigma * rng.normal();
      p[i] = static_cast<ad::real>(std::clamp(v, 0.0, 1.0));
    }
  }
  if (s.raw_depth.defined()) {
    out.raw_depth = transform_image(s.raw_depth, g, 0);
    out.depth = depth_to_3ch(out.raw_depth);
  }
  for (const auto& r : s.annotations) {
    const GraspRect m = g.apply(r);
    if (m.x >= 0 && m.x < w && m.y >= 0 && m.y < h) out.annotations.push_back(m);
  }
  out.labelled = !out.annotations.empty();
  return {out, g};
}

ad::Tensor depth_to_3ch(const ad::Tensor& raw_depth) {
  if (!raw_depth.defined()) throw ArgumentError("depth_to_3ch: undefined input");
  int h, w;
  if (raw_depth.shape().size() == 3 && raw_depth.shape()[0] == 1) {
    h = raw_depth.shape()[1];
    w = raw_depth.shape()[2];
  } else if (raw_depth.shape().size() == 2) {
    h = raw_depth.shape()[0];
    w = raw_depth.shape()[1];
  } else {
    throw ArgumentError("depth_to_3ch needs [1,H,W] or [H,W]");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> d = inpaint_nearest(raw_depth.data(), h, w);

  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-6);

  ad::Tensor out = ad::Tensor::zeros({3, h, w});
  ad::real* o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = static_cast<ad::real>((d[i] - mean) / sd);

  // Sobel cross-correlation on the normalized channel, zero padding.
  const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double gx = 0, gy = 0;
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) {
          const int rr = r + i, cc = c + j;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const double v = o[static_cast<std::size_t>(rr) * w + cc];
          gx += kx[i + 1][j + 1] * v;
          gy += ky[i + 1][j + 1] * v;
        }
      o[n + static_cast<std::size_t>(r) * w + c] = static_cast<ad::real>(gx);
      o[2 * n + static_cast<std::size_t>(r) * w + c] = static_cast<ad::real>(gy);
    }
  return out;
}

ad::Tensor resize_bilinear(const ad::Tensor& t, int out_h, int out_w) {
  if (t.shape().size() != 3) throw ArgumentError("resize_bilinear needs [C,H,W]");
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("resize_bilinear: bad output size");
  const int c = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
  ad::Tensor out = ad::Tensor::zeros({c, out_h, out_w});
  const ad::real* in = t.data();
  ad::real* o = out.data();
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int col = 0; col < out_w; ++col) {
      const double fx = std::clamp((col + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const ad::real* plane = in + static_cast<std::size_t>(ch) * h * w;
        const double top = (1 - wx) * plane[static_cast<std::size_t>(y0) * w + x0] +
                           wx * plane[static_cast<std::size_t>(y0) * w + x1];
        const double bot = (1 - wx) * plane[static_cast<std::size_t>(y1) * w + x0] +
                           wx * plane[static_cast<std::size_t>(y1) * w + x1];
        o[(static_cast<std::size_t>(ch) * out_h + r) * out_w + col] =
            static_cast<ad::real>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Sample preprocess(const Sample& raw) {
  if (!raw.rgb.defined() || raw.rgb.shape().size() != 3 || raw.rgb.shape()[0] != 3)
    throw ArgumentError("preprocess needs an RGB sample [3,H,W]");
  const int h = raw.rgb.shape()[1], w = raw.rgb.shape()[2];
  const double sw = static_cast<double>(kResizeW) / w;
  const double sh = static_cast<double>(kResizeH) / h;
  if (std::abs(sw - sh) > 1e-9) throw DataError("preprocess expects a 4:3 raw frame");
  if (w < kResizeW || h < kResizeH) throw DataError("raw frame smaller than resize target");
  const double s = sw;
  const int x0 = (kResizeW - kCropSize) / 2;
  const int y0 = (kResizeH - kCropSize) / 2;

  Sample out;
  out.id = raw.id;
  out.domain = raw.domain;
  out.rgb = crop_values(resize_bilinear(raw.rgb, kResizeH, kResizeW), y0, x0, kCropSize);
  if (raw.raw_depth.defined()) {
    const int dh = raw.raw_depth.shape().size() == 3 ? raw.raw_depth.shape()[1] : raw.raw_depth.shape()[0];
    const int dw = raw.raw_depth.shape().size() == 3 ? raw.raw_depth.shape()[2] : raw.raw_depth.shape()[1];
    if (dh != h || dw != w) throw DataError("depth size differs from RGB");
    std::vector<double> filled = inpaint_nearest(raw.raw_depth.data(), h, w);
    ad::Tensor tmp = ad::Tensor::zeros({1, h, w});
    std::copy(filled.begin(), filled.end(), tmp.data());
    out.raw_depth = crop_values(resize_bilinear(tmp, kResizeH, kResizeW), y0, x0, kCropSize);
    out.depth = depth_to_3ch(out.raw_depth);
  }
  for (const auto& r : raw.annotations) {
    GraspRect m{r.x * s - x0, r.y * s - y0, r.theta, r.w * s, r.h * s};
    if (m.x >= 0 && m.x < kCropSize && m.y >= 0 && m.y < kCropSize)
      out.annotations.push_back(m);
  }
  out.labelled = !out.annotations.empty();
  return out;
}

std::vector<Sample> load_cornell_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw IoError("not a directory: " + path);
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 5 && name.ends_with("r.ppm"))
      ids.push_back(name.substr(0, name.size() - 5));
  }
  std::sort(ids.begin(), ids.end());
  std::string domain;
  if (has_dataset_manifest(path)) domain = load_dataset_manifest(path).domain;

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    Sample s;
    s.id = id;
    s.domain = domain;
    s.rgb = rgb_to_tensor(read_ppm((fs::path(path) / (id + "r.ppm")).string()));
    const fs::path dpath = fs::path(path) / (id + "d.pgm");
    if (fs::exists(dpath)) {
      const ImageU16 dimg = read_pgm16(dpath.string());
      ad::Tensor raw = ad::Tensor::zeros({1, dimg.height, dimg.width});
      for (std::size_t i = 0; i < dimg.v.size(); ++i)
        raw.data()[i] = static_cast<ad::real>(dimg.v[i]);
      try {
        s.depth = depth_to_3ch(raw);
        s.raw_depth = std::move(raw);
      } catch (const DataError& e) {
        std::fprintf(stderr, "warning: %s: %s, depth dropped\n", dpath.string().c_str(),
                     e.what());
      }
    }
    const fs::path rpath = fs::path(path) / (id + "cpos.txt");
    if (fs::exists(rpath)) s.annotations = parse_rect_file(rpath.string());
    s.labelled = !s.annotations.empty();
    out.push_back(std::move(s));
  }
  return out;
}

void save_sample_dir(const std::string& path, const std::vector<Sample>& samples) {
  fs::create_directories(path);
  for (const auto& s : samples) {
    write_ppm((fs::path(path) / (s.id + "r.ppm")).string(), tensor_to_rgb(s.rgb));
    if (s.raw_depth.defined()) {
      const int h = s.raw_depth.shape()[s.raw_depth.shape().size() == 3 ? 1 : 0];
      const int w = s.raw_depth.shape()[s.raw_depth.shape().size() == 3 ? 2 : 1];
      ImageU16 img{w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h)};
      const ad::real* d = s.raw_depth.data();
      for (std::size_t i = 0; i < img.v.size(); ++i) {
        const double v = std::clamp(static_cast<double>(d[i]), 0.0, 65535.0);
        img.v[i] = static_cast<std::uint16_t>(std::lround(v));
      }
      write_pgm16((fs::path(path) / (s.id + "d.pgm")).string(), img);
    }
    if (!s.annotations.empty()) {
      std::string text;
      for (const auto& r : s.annotations) {
        const auto v = rect_vertices(r);
        for (int i = 0; i < 4; ++i)
          text += fmt_real(v[i].x) + " " + fmt_real(v[i].y) + "\n";
      }
      write_file_atomic((fs::path(path) / (s.id + "cpos.txt")).string(), text);
    }
  }
}

void save_dataset_manifest(const std::string& dir, const DatasetManifest& m) {
  nlohmann::json j;
  j["domain"] = m.domain;
  j["splits"]["labelled"] = m.labelled_ids;
  j["splits"]["unlabelled"] = m.unlabelled_ids;
  j["splits"]["eval"] = m.eval_ids;
  write_file_atomic((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

bool has_dataset_manifest(const std::string& dir) {
  return fs::exists(fs::path(dir) / "manifest.json");
}

DatasetManifest load_dataset_manifest(const std::string& dir) {
  const std::string text = read_file((fs::path(dir) / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  DatasetManifest m;
  m.domain = j.value("domain", std::string());
  if (j.contains("splits")) {
    const auto& sp = j["splits"];
    auto get_ids = [&](const char* key) {
      std::vector<std::string> v;
      if (sp.contains(key))
        for (const auto& e : sp[key]) v.push_back(e.get<std::string>());
      return v;
    };
    m.labelled_ids = get_ids("labelled");
    m.unlabelled_ids = get_ids("unlabelled");
    m.eval_ids = get_ids("eval");
  }
  return m;
}

std::vector<Sample> select_by_ids(const std::vector<Sample>& all,
                                  const std::vector<std::string>& ids) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : all) by_id[s.id] = &s;
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ArgumentError("unknown sample id: " + id);
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace grasp
