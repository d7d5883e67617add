// Acceptance gate: every release criterion in one binary, one verdict line
// each, nonzero exit when any fails. Criteria can be cherry-picked by number
// on the command line; macro criteria share one supervised training run.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "graspdet/adapt.hpp"
#include "graspdet/errors.hpp"
#include "graspdet/geometry.hpp"
#include "graspdet/model.hpp"
#include "graspdet/synth.hpp"
#include "graspdet/tensor.hpp"
#include "graspdet/textio.hpp"
#include "graspdet/trainer.hpp"
#include "testutil.hpp"

using namespace grasp;
using namespace grasp::ad;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Pinned tolerances and budgets, one block so nothing hides in call sites.
constexpr double kFdEps = 1e-3;          // central-difference step
constexpr double kFdTolPrimitive = 1e-4; // per-op gradcheck bound
constexpr double kFdTolComposed = 1e-3;  // full-network gradcheck bound
constexpr std::uint64_t kComposedSeeds[3] = {5, 6, 7};
// A central difference is only valid where the loss is smooth across the
// whole step interval. Coordinates that feed thousands of relu units (first
// layer biases above all) almost surely straddle some kink at eps 1e-3, so
// when the interval's second difference betrays a kink the coordinate is
// re-verified at a smaller step with the same tolerance. A real gradient bug
// is step-independent and still fails every rung.
constexpr double kFdLadder[3] = {1e-3, 1.25e-4, 1.5625e-5};
constexpr double kGradBudgetSec = 60;
constexpr int kIouPairs = 1000;
constexpr int kIouMcSamples = 1000000;
constexpr double kIouTol = 0.01;         // absolute, MC sigma ~1e-3
constexpr double kIouBudgetSec = 300;
constexpr double kUncTol = 1e-12;        // |m_uc - 0.0125| on the hand case
constexpr double kEmaRelTol = 1e-6;
constexpr int kEmaSteps = 10;
constexpr double kEmaAlpha = 0.9;
constexpr double kSuccessBar = 0.90;
constexpr double kTrainBudgetSec = 1800;
constexpr double kAdaptBudgetSec = 1800;
constexpr double kAdaptMargin = 0.10;    // best-epoch cmt vs direct, relative

// Supervised benchmark: seed-0 source domain, 64x64, 200 labelled samples.
// The paper's learning rates assume a pretrained backbone; training from
// scratch at desk scale needs the hotter, longer schedule pinned here.
constexpr int kSupLabelled = 200;
constexpr int kSupPoseEpochs = 60;
constexpr double kSupPoseLr = 3e-4;
constexpr int kSupPoseHalve = 40;
constexpr int kSupLocEpochs = 160;
constexpr double kSupLocLr = 3e-4;
constexpr int kSupLocHalve = 120;
constexpr double kSupRadius = 3.0;       // location target ball, input px

// Domain-shift benchmark: 9 labelled target samples, fallback median over 5
// adaptation seeds when seed 0 misses the margin.
constexpr int kAdaptTargetSeed = 1000;   // target stream of the seed-0 benchmark
constexpr int kAdaptLabelled = 9;
constexpr int kAdaptUnlabelled = 60;
constexpr int kAdaptEpochs = 60;
constexpr double kAdaptLr = 3e-4;
constexpr int kFallbackSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) { return fmt_real(v); }

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness.

struct WorstErr {
  double err = 0;
  std::string where;

  void feed(const std::string& op, double e) {
    if (e > err) {
      err = e;
      where = op;
    }
  }
};

void primitive_checks(WorstErr& w) {
  using testutil::fd_max_rel_err;
  using testutil::signed_uniform;
  using testutil::uniform_tensor;

  struct MM {
    int m, k, n;
  };
  for (auto [m, k, n] : {MM{4, 5, 3}, MM{1, 7, 2}, MM{6, 2, 6}}) {
    Rng rng(mix64(101, m, k));
    auto a = signed_uniform({m, k}, 0.2, 1.0, rng);
    auto b = signed_uniform({k, n}, 0.2, 1.0, rng);
    auto wt = signed_uniform({m, n}, 0.2, 1.0, rng);
    std::vector<Tensor> in = {a, b};
    w.feed("matmul", fd_max_rel_err(
                         [&](std::vector<Tensor>& t) { return sum(mul(matmul(t[0], t[1]), wt)); },
                         in, kFdEps));
  }

  struct CV {
    int cin, h, wd, cout, k, stride;
  };
  for (auto c : {CV{1, 5, 5, 1, 3, 1}, CV{2, 6, 7, 3, 3, 2}, CV{3, 4, 4, 2, 1, 1}}) {
    Rng rng(mix64(103, c.cin * 100 + c.h, c.stride));
    auto x = signed_uniform({c.cin, c.h, c.wd}, 0.2, 1.0, rng);
    auto k = signed_uniform({c.cout, c.cin, c.k, c.k}, 0.2, 1.0, rng);
    auto b = signed_uniform({c.cout}, 0.2, 1.0, rng);
    int ho = (c.h + c.stride - 1) / c.stride, wo = (c.wd + c.stride - 1) / c.stride;
    auto wt = signed_uniform({c.cout, ho, wo}, 0.2, 1.0, rng);
    std::vector<Tensor> in = {x, k, b};
    w.feed("conv2d",
           fd_max_rel_err(
               [&](std::vector<Tensor>& t) { return sum(mul(conv2d(t[0], t[1], t[2], c.stride), wt)); },
               in, kFdEps));
  }

  for (unsigned long long seed : {1ull, 2ull, 3ull}) {
    Rng rng(mix64(107, seed));
    std::vector<int> shape = {2 + static_cast<int>(seed), 3};
    auto a = signed_uniform(shape, 0.2, 1.0, rng);
    auto b = signed_uniform(shape, 0.2, 1.0, rng);
    auto wt = signed_uniform(shape, 0.2, 1.0, rng);
    std::vector<Tensor> two = {a, b};
    std::vector<Tensor> one = {a};
    auto fd2 = [&](const char* op, auto fn) { w.feed(op, fd_max_rel_err(fn, two, kFdEps)); };
    auto fd1 = [&](const char* op, auto fn) { w.feed(op, fd_max_rel_err(fn, one, kFdEps)); };
    fd2("add", [&](std::vector<Tensor>& t) { return sum(mul(add(t[0], t[1]), wt)); });
    fd2("sub", [&](std::vector<Tensor>& t) { return sum(mul(sub(t[0], t[1]), wt)); });
    fd2("mul", [&](std::vector<Tensor>& t) { return sum(mul(mul(t[0], t[1]), wt)); });
    fd1("scale", [&](std::vector<Tensor>& t) { return sum(mul(scale(t[0], 1.7), wt)); });
    fd1("relu", [&](std::vector<Tensor>& t) { return sum(mul(relu(t[0]), wt)); });
    fd1("sigmoid", [&](std::vector<Tensor>& t) { return sum(mul(sigmoid(t[0]), wt)); });
    fd1("tanh", [&](std::vector<Tensor>& t) { return sum(mul(tanh(t[0]), wt)); });
    fd1("sum", [&](std::vector<Tensor>& t) { return sum(t[0]); });
    fd1("mean", [&](std::vector<Tensor>& t) { return mean(mul(t[0], t[0])); });

    auto x = signed_uniform({2, 5, 6}, 0.2, 1.0, rng);
    auto wc = signed_uniform({2, 3, 3}, 0.2, 1.0, rng);
    std::vector<Tensor> xin = {x};
    int r0 = static_cast<int>(seed) % 3, c0 = static_cast<int>(seed) % 4;
    w.feed("crop2d", fd_max_rel_err(
                         [&](std::vector<Tensor>& t) {
                           return sum(mul(crop2d(t[0], r0, c0, 3, 3), wc));
                         },
                         xin, kFdEps));
    auto wu = signed_uniform({2, 10, 12}, 0.2, 1.0, rng);
    w.feed("upsample2x",
           fd_max_rel_err(
               [&](std::vector<Tensor>& t) { return sum(mul(upsample2x(t[0]), wu)); }, xin,
               kFdEps));
    auto wr = signed_uniform({6, 10}, 0.2, 1.0, rng);
    w.feed("reshape", fd_max_rel_err(
                          [&](std::vector<Tensor>& t) {
                            return sum(mul(reshape(t[0], {6, 10}), wr));
                          },
                          xin, kFdEps));

    auto v = signed_uniform({7}, 0.2, 1.0, rng);
    auto wv = signed_uniform({3}, 0.2, 1.0, rng);
    std::vector<Tensor> vin = {v};
    w.feed("slice", fd_max_rel_err(
                        [&](std::vector<Tensor>& t) { return sum(mul(slice(t[0], 2, 3), wv)); },
                        vin, kFdEps));

    auto ca = signed_uniform({3}, 0.2, 1.0, rng);
    auto cb = signed_uniform({4}, 0.2, 1.0, rng);
    auto wcat = signed_uniform({7}, 0.2, 1.0, rng);
    std::vector<Tensor> cin = {ca, cb};
    w.feed("concat",
           fd_max_rel_err(
               [&](std::vector<Tensor>& t) { return sum(mul(concat({t[0], t[1]}), wcat)); }, cin,
               kFdEps));

    auto m = signed_uniform({4, 6}, 0.2, 1.0, rng);
    auto bias = signed_uniform({6}, 0.2, 1.0, rng);
    auto wb = signed_uniform({4, 6}, 0.2, 1.0, rng);
    std::vector<Tensor> bin = {m, bias};
    w.feed("add_row_bias",
           fd_max_rel_err(
               [&](std::vector<Tensor>& t) { return sum(mul(add_row_bias(t[0], t[1]), wb)); },
               bin, kFdEps));

    // Huber in both regimes, BCE strictly inside (0,1).
    auto p1 = testutil::uniform_tensor({3, 2}, 0.0, 0.4, rng);
    auto t1 = testutil::uniform_tensor({3, 2}, -0.4, 0.0, rng);
    std::vector<Tensor> h1 = {p1, t1};
    w.feed("smooth_l1",
           fd_max_rel_err([&](std::vector<Tensor>& t) { return smooth_l1(t[0], t[1]); }, h1,
                          kFdEps));
    auto p2 = testutil::uniform_tensor({4}, 2.0, 3.0, rng);
    auto t2 = testutil::uniform_tensor({4}, 0.0, 0.5, rng);
    std::vector<Tensor> h2 = {p2, t2};
    w.feed("smooth_l1",
           fd_max_rel_err([&](std::vector<Tensor>& t) { return smooth_l1(t[0], t[1]); }, h2,
                          kFdEps));
    auto bp = uniform_tensor({2, 3}, 0.05, 0.95, rng);
    auto bt = uniform_tensor({2, 3}, 0.0, 1.0, rng);
    std::vector<Tensor> bin2 = {bp, bt};
    w.feed("bce", fd_max_rel_err([&](std::vector<Tensor>& t) { return bce(t[0], t[1]); }, bin2,
                                 kFdEps));
  }
}

// Supervised pose + location loss through the whole network at one sample,
// the loss actually optimized by the two training stages.
Tensor composed_loss(const GraspNet& net, const Tensor& rgb, const Tensor& depth,
                     const std::vector<Vec2>& locs,
                     const std::vector<std::array<double, 3>>& targets, const Tensor& loc_target) {
  PyramidFeatures f = net.encode(rgb, depth);
  std::vector<Tensor> terms;
  std::vector<PoseEstimate> ests = net.posenet_forward(f, locs);
  for (std::size_t i = 0; i < ests.size(); ++i) {
    Tensor tgt = Tensor::from({3}, {targets[i][0], targets[i][1], targets[i][2]});
    for (int k = 0; k < 4; ++k) terms.push_back(smooth_l1(ests[i].stage[k], tgt));
  }
  terms.push_back(bce(net.locnet_forward(f), loc_target));
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

double composed_network_check(std::uint64_t seed, int input_size, std::array<int, 4> channels,
                              bool depth_branch, std::string* worst_at, int* refined) {
  BackboneConfig bc;
  bc.input_size = input_size;
  bc.stage_channels = channels;
  bc.depth_branch = depth_branch;
  GraspNet net(bc, seed);

  Rng rng(mix64(211, seed));
  Tensor rgb = Tensor::randn({3, input_size, input_size}, 0.5, rng);
  Tensor depth = depth_branch ? Tensor::randn({3, input_size, input_size}, 0.5, rng) : Tensor();
  std::vector<Vec2> locs = {{rng.uniform(8, input_size - 8), rng.uniform(8, input_size - 8)},
                            {rng.uniform(8, input_size - 8), rng.uniform(8, input_size - 8)}};
  std::vector<std::array<double, 3>> targets;
  std::vector<GraspRect> anns;
  for (const Vec2& l : locs) {
    GraspRect g = make_rect(l.x, l.y, rng.uniform(-1.2, 1.2), rng.uniform(6, 14),
                            rng.uniform(4, 10));
    anns.push_back(g);
    targets.push_back(normalize_pose(g, input_size));
  }
  int half = input_size / 2;
  Heatmap hm = heatmap_target(anns, half, half, 2, bc.heatmap_radius);
  Tensor loc_target = Tensor::from({1, half, half}, hm.v);

  for (auto& np : net.params()) np.value.zero_grad();
  Tensor loss = composed_loss(net, rgb, depth, locs, targets, loc_target);
  loss.backward();
  const double mid = loss.item();

  double worst = 0;
  for (auto& np : net.params()) {
    Tensor p = np.value;
    Rng pick(mix64(223, seed ^ fnv1a64(np.name.data(), np.name.size())));
    int n_checks = std::min(4, p.size());
    std::set<int> idx;
    while (static_cast<int>(idx.size()) < n_checks) idx.insert(pick.uniform_int(0, p.size() - 1));
    for (int i : idx) {
      double analytic = p.grad() ? p.grad_at(i) : 0.0;
      real keep = p.data()[i];
      NoGradGuard ng;
      auto probe = [&](double eps, double& curv) {
        p.data()[i] = static_cast<real>(keep + eps);
        double up = composed_loss(net, rgb, depth, locs, targets, loc_target).item();
        p.data()[i] = static_cast<real>(keep - eps);
        double dn = composed_loss(net, rgb, depth, locs, targets, loc_target).item();
        p.data()[i] = keep;
        double fd = (up - dn) / (2 * eps);
        curv = std::abs(up - 2 * mid + dn);
        return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
      };
      double curv = 0;
      double err = probe(kFdLadder[0], curv);
      for (int rung = 1; rung < 3 && err >= kFdTolComposed; ++rung) {
        // Refine only on curvature evidence of a kink inside the interval; a
        // flat-interval mismatch is a genuine gradient error and stands.
        if (curv <= 0.5 * kFdTolComposed * kFdLadder[rung - 1]) break;
        err = probe(kFdLadder[rung], curv);
        if (refined) ++*refined;
      }
      if (err > worst) {
        worst = err;
        if (worst_at) *worst_at = np.name + "[" + fmt_int(i) + "]";
      }
    }
  }
  for (auto& np : net.params()) np.value.zero_grad();
  return worst;
}

Outcome criterion1() {
  auto t0 = Clock::now();
  WorstErr prim;
  primitive_checks(prim);

  double composed = 0;
  std::string comp_at, at;
  int refined = 0;
  for (auto [seed, size, ch, depth] :
       {std::tuple{kComposedSeeds[0], 48, std::array<int, 4>{4, 8, 12, 16}, true},
        std::tuple{kComposedSeeds[1], 48, std::array<int, 4>{6, 10, 14, 18}, false},
        std::tuple{kComposedSeeds[2], 64, std::array<int, 4>{4, 8, 12, 16}, true}}) {
    double e = composed_network_check(seed, size, ch, depth, &at, &refined);
    if (e > composed) {
      composed = e;
      comp_at = at;
    }
  }

  double sec = elapsed(t0);
  bool ok = prim.err < kFdTolPrimitive && composed < kFdTolComposed && sec < kGradBudgetSec;
  return {ok, "primitive max err " + num(prim.err) + " (" + prim.where + ", tol " +
                  num(kFdTolPrimitive) + "), composed max err " + num(composed) + " (" + comp_at +
                  ", tol " + num(kFdTolComposed) + ", " + fmt_int(refined) +
                  " kink-straddling steps refined), " + num(sec) + "s"};
}

// ---------------------------------------------------------------------------
// Criterion 2: rotated IoU against a Monte Carlo rasterization oracle.

bool point_in_rect(double px, double py, const GraspRect& g) {
  double dx = px - g.x, dy = py - g.y;
  double c = std::cos(g.theta), s = std::sin(g.theta);
  double u = dx * c + dy * s;
  double v = -dx * s + dy * c;
  return std::abs(u) <= g.w / 2 && std::abs(v) <= g.h / 2;
}

double mc_iou(const GraspRect& a, const GraspRect& b, int samples, Rng& rng) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& g : {a, b})
    for (const auto& v : rect_vertices(g)) {
      lo_x = std::min(lo_x, v.x);
      hi_x = std::max(hi_x, v.x);
      lo_y = std::min(lo_y, v.y);
      hi_y = std::max(hi_y, v.y);
    }
  long long in_union = 0, in_both = 0;
  for (int i = 0; i < samples; ++i) {
    double px = rng.uniform(lo_x, hi_x);
    double py = rng.uniform(lo_y, hi_y);
    bool ia = point_in_rect(px, py, a);
    bool ib = point_in_rect(px, py, b);
    if (ia || ib) ++in_union;
    if (ia && ib) ++in_both;
  }
  return in_union ? static_cast<double>(in_both) / in_union : 0.0;
}

Outcome criterion2() {
  auto t0 = Clock::now();
  Rng rng(4242);
  double worst = 0;
  for (int i = 0; i < kIouPairs; ++i) {
    GraspRect a = make_rect(rng.uniform(0, 50), rng.uniform(0, 50),
                            rng.uniform(-kPi / 2, kPi / 2), rng.uniform(2, 20),
                            rng.uniform(2, 20));
    GraspRect b = a;
    b.x += rng.uniform(-10, 10);
    b.y += rng.uniform(-10, 10);
    b.theta = normalize_angle(b.theta + rng.uniform(-1, 1));
    b.w = rng.uniform(2, 20);
    b.h = rng.uniform(2, 20);
    worst = std::max(worst, std::abs(rotated_iou(a, b) - mc_iou(a, b, kIouMcSamples, rng)));
  }
  double sec = elapsed(t0);
  bool ok = worst < kIouTol && sec < kIouBudgetSec;
  return {ok, "worst |exact - mc| " + num(worst) + " over " + fmt_int(kIouPairs) + " pairs at " +
                  fmt_int(kIouMcSamples) + " samples (tol " + num(kIouTol) + "), " + num(sec) +
                  "s"};
}

// ---------------------------------------------------------------------------
// Criterion 3: hand-derived success verdicts.

Outcome criterion3() {
  GraspRect truth = make_rect(30, 30, 0, 12, 8);
  std::vector<GraspRect> truths = {truth};

  bool exact_ok = is_success(truth, truths);

  GraspRect off35 = truth;
  off35.theta = 35.0 * kPi / 180.0;
  bool angle_rejected = !is_success(off35, truths);

  // Same center, axis aligned, quarter-area inner rectangle: intersection 24,
  // union 96, IoU exactly 0.25, which must fail the strict > 0.25 bound.
  GraspRect quarter = make_rect(30, 30, 0, 6, 4);
  double iou = rotated_iou(quarter, truth);
  bool boundary_rejected = iou == 0.25 && !is_success(quarter, truths);

  bool ok = exact_ok && angle_rejected && boundary_rejected;
  return {ok, std::string("exact=") + (exact_ok ? "true" : "false") + ", 35deg=" +
                  (!angle_rejected ? "true" : "false") + ", iou=" + num(iou) + " at bound=" +
                  (!boundary_rejected ? "true" : "false")};
}

// ---------------------------------------------------------------------------
// Criterion 4: uncertainty identity and hand value.

void zero_pose_heads(GraspNet& net) {
  for (auto& np : net.params())
    if (np.name.rfind("pose.", 0) == 0)
      std::fill(np.value.data(), np.value.data() + np.value.size(), static_cast<real>(0));
}

Outcome criterion4() {
  BackboneConfig bc;
  GraspNet net(bc, 17);
  zero_pose_heads(net);
  Rng rng(314);
  Tensor rgb = Tensor::randn({3, 64, 64}, 0.5, rng);
  auto f = net.encode(rgb, Tensor::randn({3, 64, 64}, 0.5, rng));
  auto est0 = net.posenet_forward(f, {{31.0, 29.0}});
  bool zero_ok = est0.size() == 1 && est0[0].m_uc == 0.0;

  const double vals[4] = {0.1, 0.2, 0.3, 0.4};
  for (int k = 0; k < 4; ++k) {
    const std::string name = "pose.s" + std::to_string(k + 1) + ".fc2.b";
    for (auto& np : net.params())
      if (np.name == name) np.value.data()[0] = static_cast<real>(std::atanh(vals[k]));
  }
  auto est = net.posenet_forward(f, {{20.0, 40.0}});
  double m_uc = est[0].m_uc;

  // Independent population variance over the values the heads actually
  // emitted, accumulated in extended precision.
  long double var = 0;
  for (int c = 0; c < 3; ++c) {
    long double m = 0;
    for (int k = 0; k < 4; ++k) m += est[0].stage[k].data()[c];
    m /= 4;
    long double v = 0;
    for (int k = 0; k < 4; ++k) {
      long double d = est[0].stage[k].data()[c] - m;
      v += d * d;
    }
    var += v / 4;
  }

  bool hand_ok = std::abs(m_uc - 0.0125) <= kUncTol &&
                 std::abs(m_uc - static_cast<double>(var)) <= 1e-15;
  return {zero_ok && hand_ok, "identical heads m_uc " + num(est0[0].m_uc) + ", hand case m_uc " +
                                  num(m_uc) + " vs 0.0125 (tol " + num(kUncTol) +
                                  "), population-variance residual " +
                                  num(std::abs(m_uc - static_cast<double>(var)))};
}

// ---------------------------------------------------------------------------
// Criteria 5 and 6: adaptation reductions and EMA algebra.

BackboneConfig adapt_backbone() {
  BackboneConfig bc;
  bc.input_size = 48;
  bc.stage_channels = {4, 8, 12, 16};
  return bc;
}

GraspNet peaked_net(std::uint64_t seed) {
  GraspNet net(adapt_backbone(), seed);
  for (auto& np : net.params())
    if (np.name == "dec.head.b") np.value.data()[0] = static_cast<real>(2.0);
  return net;
}

std::vector<Sample> adapt_samples(int n, int first, bool strip) {
  SynthConfig sc = SynthConfig::target_domain(12);
  sc.image_size = 48;
  sc.lshapes = false;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s = synth_make_sample(sc, first + i).sample;
    if (strip) s.annotations.clear();
    out.push_back(std::move(s));
  }
  return out;
}

bool nets_equal(const GraspNet& a, const GraspNet& b) {
  const auto& pa = a.params();
  const auto& pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].value.size() != pb[i].value.size()) return false;
    if (std::memcmp(pa[i].value.data(), pb[i].value.data(),
                    sizeof(real) * static_cast<std::size_t>(pa[i].value.size())) != 0)
      return false;
  }
  return true;
}

bool curves_equal_except_method(const std::vector<AdaptEpochRow>& a,
                                const std::vector<AdaptEpochRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].epoch != b[i].epoch || a[i].eval_loss != b[i].eval_loss ||
        a[i].pool_size != b[i].pool_size || a[i].alpha != b[i].alpha ||
        a[i].threshold != b[i].threshold ||
        a[i].eval_loss_stage_avg != b[i].eval_loss_stage_avg)
      return false;
  return true;
}

Outcome criterion5() {
  GraspNet source = peaked_net(31);
  std::vector<Sample> labelled = adapt_samples(9, 0, false);
  std::vector<Sample> unlabelled = adapt_samples(12, 9, true);
  std::vector<Sample> eval_set = adapt_samples(6, 21, false);

  AdaptConfig base;
  base.epochs = 4;
  base.seed = 7;
  base.batch_labelled = 6;
  base.batch_pseudo = 2;

  auto run = [&](AdaptMethod m, auto tweak, const std::vector<Sample>& unl) {
    AdaptConfig c = base;
    c.method = m;
    tweak(c);
    return run_adaptation(source, labelled, unl, eval_set, c);
  };
  auto id = [](AdaptConfig&) {};

  AdaptResult direct = run(AdaptMethod::kDirect, id, unlabelled);
  AdaptResult mt = run(AdaptMethod::kMeanTeacher, id, unlabelled);
  AdaptResult mt_zero =
      run(AdaptMethod::kMeanTeacher, [](AdaptConfig& c) { c.consistency_weight = 0.0; },
          unlabelled);
  AdaptResult direct_empty = run(AdaptMethod::kDirect, id, {});
  AdaptResult mt_empty = run(AdaptMethod::kMeanTeacher, id, {});
  AdaptResult cmt_inf = run(AdaptMethod::kConfidenceMt,
                            [](AdaptConfig& c) {
                              c.threshold_auto = false;
                              c.threshold = std::numeric_limits<double>::infinity();
                            },
                            unlabelled);

  bool zero_ok = nets_equal(mt_zero.student, direct.student) &&
                 nets_equal(mt_zero.best, direct.best) &&
                 curves_equal_except_method(mt_zero.curve, direct.curve);
  // An empty unlabelled set must reduce to direct on the same data; the
  // student updates also match a direct run that still carried unlabelled
  // bookkeeping, since direct never reads the pool.
  bool empty_ok = nets_equal(mt_empty.student, direct_empty.student) &&
                  nets_equal(mt_empty.student, direct.student) &&
                  curves_equal_except_method(mt_empty.curve, direct_empty.curve);
  bool inf_ok = nets_equal(cmt_inf.student, mt.student) && nets_equal(cmt_inf.best, mt.best) &&
                curves_equal_except_method(cmt_inf.curve, mt.curve);
  bool live = !nets_equal(mt.student, direct.student);  // the comparison is not vacuous

  bool ok = zero_ok && empty_ok && inf_ok && live;
  return {ok, std::string("lambda0==direct ") + (zero_ok ? "bitwise" : "DIFFER") +
                  ", emptyDu==direct " + (empty_ok ? "bitwise" : "DIFFER") + ", cmt(inf)==mt " +
                  (inf_ok ? "bitwise" : "DIFFER") + ", mt!=direct " + (live ? "yes" : "NO")};
}

Outcome criterion6() {
  GraspNet a(adapt_backbone(), 1);
  GraspNet b(adapt_backbone(), 2);
  TeacherStudent ts(a);
  ts.student.copy_params_from(b);

  std::vector<std::vector<real>> t0;
  for (const auto& np : ts.teacher.params())
    t0.emplace_back(np.value.data(), np.value.data() + np.value.size());

  for (int i = 0; i < kEmaSteps; ++i) ema_update(ts, kEmaAlpha);

  double decay = std::pow(kEmaAlpha, kEmaSteps);
  double worst = 0;
  const auto& tp = ts.teacher.params();
  const auto& sp = ts.student.params();
  for (std::size_t i = 0; i < tp.size(); ++i)
    for (int j = 0; j < tp[i].value.size(); ++j) {
      double expect = decay * t0[i][j] + (1.0 - decay) * sp[i].value.data()[j];
      double got = tp[i].value.data()[j];
      double rel = std::abs(got - expect) / std::max(std::abs(expect), 1e-12);
      worst = std::max(worst, rel);
    }
  bool ok = worst < kEmaRelTol;
  return {ok, "worst relative deviation from closed form " + num(worst) + " over " +
                  fmt_int(kEmaSteps) + " steps at alpha " + num(kEmaAlpha) + " (tol " +
                  num(kEmaRelTol) + ")"};
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8: the shared supervised benchmark.

struct SupervisedBench {
  SynthSets sets;
  std::optional<GraspNet> net;
  EvalReport report;
  double seconds = 0;
};

const SupervisedBench& supervised_bench() {
  static SupervisedBench bench = [] {
    SupervisedBench b;
    auto t0 = Clock::now();
    b.sets = synth_generate(SynthConfig::source_domain(0), kSupLabelled, 0);

    BackboneConfig bc;
    bc.heatmap_radius = kSupRadius;
    GraspNet pose_net(bc, 0);
    TrainConfig tp;
    tp.seed = 0;
    tp.epochs = kSupPoseEpochs;
    tp.lr_pose = kSupPoseLr;
    tp.lr_halve_every = kSupPoseHalve;
    train_posenet(pose_net, b.sets.labelled, tp);

    GraspNet net(bc, 0);
    TrainConfig tl;
    tl.seed = 0;
    tl.epochs = kSupLocEpochs;
    tl.lr_loc = kSupLocLr;
    tl.lr_halve_every = kSupLocHalve;
    train_locnet(net, pose_net, b.sets.labelled, tl);

    b.seconds = elapsed(t0);
    b.report = evaluate(net, b.sets.eval, 1);
    b.net.emplace(std::move(net));
    return b;
  }();
  return bench;
}

Outcome criterion7() {
  const SupervisedBench& b = supervised_bench();
  bool ok = b.report.success_rate >= kSuccessBar && b.seconds < kTrainBudgetSec;
  return {ok, "success_rate " + num(b.report.success_rate) + " (bar " + num(kSuccessBar) +
                  ") on " + fmt_int(static_cast<int>(b.sets.eval.size())) +
                  " eval samples, n_detected " + fmt_int(b.report.n_detected) + ", trained in " +
                  num(b.seconds) + "s"};
}

Outcome criterion8() {
  const SupervisedBench& b = supervised_bench();
  bool ok = b.report.n_detected > 0 &&
            b.report.pose_loss_most_certain <= b.report.pose_loss_all;
  return {ok, "pose_loss_most_certain " + num(b.report.pose_loss_most_certain) +
                  " vs pose_loss_all " + num(b.report.pose_loss_all) + " over " +
                  fmt_int(b.report.n_detected) + " detected samples"};
}

// ---------------------------------------------------------------------------
// Criterion 9: the domain-shift trend, plus the growing-pool property.

struct AdaptTriple {
  std::vector<AdaptEpochRow> direct, mt, cmt;
};

AdaptTriple run_adapt_triple(const GraspNet& source, const std::vector<Sample>& labelled,
                             const std::vector<Sample>& unlabelled,
                             const std::vector<Sample>& eval_set, std::uint64_t seed) {
  AdaptConfig cfg;
  cfg.epochs = kAdaptEpochs;
  cfg.lr = kAdaptLr;
  cfg.seed = seed;
  AdaptTriple out;
  cfg.method = AdaptMethod::kDirect;
  out.direct = run_adaptation(source, labelled, unlabelled, eval_set, cfg).curve;
  cfg.method = AdaptMethod::kMeanTeacher;
  out.mt = run_adaptation(source, labelled, unlabelled, eval_set, cfg).curve;
  cfg.method = AdaptMethod::kConfidenceMt;
  out.cmt = run_adaptation(source, labelled, unlabelled, eval_set, cfg).curve;
  return out;
}

double best_loss(const std::vector<AdaptEpochRow>& curve) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : curve) best = std::min(best, r.eval_loss);
  return best;
}

int best_epoch_of(const std::vector<AdaptEpochRow>& curve) {
  int at = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].eval_loss < curve[at].eval_loss) at = static_cast<int>(i);
  return at;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Nondecreasing medians over three consecutive epoch windows.
bool pool_trend_ok(const std::vector<AdaptEpochRow>& curve) {
  std::vector<double> sizes;
  for (const auto& r : curve) sizes.push_back(static_cast<double>(r.pool_size));
  std::size_t third = sizes.size() / 3;
  if (third == 0) return false;
  double m1 = median(std::vector<double>(sizes.begin(), sizes.begin() + third));
  double m2 = median(std::vector<double>(sizes.begin() + third, sizes.begin() + 2 * third));
  double m3 = median(std::vector<double>(sizes.begin() + 2 * third, sizes.end()));
  return m1 <= m2 && m2 <= m3;
}

struct AdaptBench {
  bool final_beats_direct = false;
  bool final_beats_mt = false;
  bool rise_after_min = false;
  bool pool_grew = false;
  double margin_seed0 = 0;       // relative best-epoch gain of cmt over direct
  double margin_judged = 0;      // seed-0 or the 5-seed median
  bool used_fallback = false;
  double seconds = 0;
};

const AdaptBench& adapt_bench() {
  static AdaptBench bench = [] {
    AdaptBench b;
    auto t0 = Clock::now();
    const SupervisedBench& sup = supervised_bench();

    SynthConfig tc = SynthConfig::target_domain(kAdaptTargetSeed);
    SynthSets target = synth_generate(tc, kAdaptLabelled, kAdaptUnlabelled);

    AdaptTriple t = run_adapt_triple(*sup.net, target.labelled, target.unlabelled, target.eval, 0);
    const AdaptEpochRow& df = t.direct.back();
    const AdaptEpochRow& mf = t.mt.back();
    const AdaptEpochRow& cf = t.cmt.back();
    b.final_beats_direct = cf.eval_loss < df.eval_loss;
    b.final_beats_mt = cf.eval_loss < mf.eval_loss;

    int dbest = best_epoch_of(t.direct);
    double dmin = t.direct[static_cast<std::size_t>(dbest)].eval_loss;
    double rise = 0;
    for (std::size_t i = static_cast<std::size_t>(dbest) + 1; i < t.direct.size(); ++i)
      rise = std::max(rise, t.direct[i].eval_loss - dmin);
    b.rise_after_min = dbest + 1 < static_cast<int>(t.direct.size()) && rise > 0;

    b.pool_grew = pool_trend_ok(t.cmt);

    auto margin = [](const AdaptTriple& tr) {
      double d = best_loss(tr.direct);
      return (d - best_loss(tr.cmt)) / d;
    };
    b.margin_seed0 = margin(t);
    b.margin_judged = b.margin_seed0;
    if (b.margin_seed0 < kAdaptMargin) {
      b.used_fallback = true;
      std::vector<double> margins = {b.margin_seed0};
      for (std::uint64_t s = 1; s < kFallbackSeeds; ++s)
        margins.push_back(
            margin(run_adapt_triple(*sup.net, target.labelled, target.unlabelled, target.eval, s)));
      b.margin_judged = median(margins);
    }
    b.seconds = elapsed(t0);
    return b;
  }();
  return bench;
}

Outcome criterion9() {
  const AdaptBench& b = adapt_bench();
  bool ok = b.final_beats_direct && b.final_beats_mt && b.rise_after_min &&
            b.margin_judged >= kAdaptMargin && b.seconds < kAdaptBudgetSec;
  return {ok, std::string("final cmt<direct ") + (b.final_beats_direct ? "yes" : "NO") +
                  ", cmt<mt " + (b.final_beats_mt ? "yes" : "NO") + ", direct rises after min " +
                  (b.rise_after_min ? "yes" : "NO") + ", best-epoch margin " +
                  num(b.margin_judged) + (b.used_fallback ? " (median of 5 seeds)" : " (seed 0)") +
                  " vs bar " + num(kAdaptMargin) + ", " + num(b.seconds) + "s"};
}

Outcome pool_trend() {
  const AdaptBench& b = adapt_bench();
  return {b.pool_grew, std::string("confidence pool epoch-window medians nondecreasing: ") +
                           (b.pool_grew ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// Criterion 10: command reruns produce byte-identical CSV logs.

int run_cli(const std::string& bin, const std::string& args) {
  std::string cmd = bin + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return rc < 0 ? -1 : WEXITSTATUS(rc);
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  if (!fs::exists(a) || !fs::exists(b)) return false;
  return read_file(a.string()) == read_file(b.string());
}

Outcome criterion10() {
  const char* bin = std::getenv("GRASPDET_BIN");
  if (!bin) return {false, "GRASPDET_BIN not set; cannot exercise the command line"};

  fs::path ws = fs::temp_directory_path() / "graspdet_acceptance_ws";
  fs::remove_all(ws);
  fs::create_directories(ws);
  std::string cfg = (ws / "cfg.json").string();
  write_file_atomic(cfg,
                    "{\"train\": {\"epochs\": 2, \"batch_size\": 8},\n"
                    " \"adapt\": {\"epochs\": 2},\n"
                    " \"synth\": {\"n_eval\": 4}}\n");

  std::vector<std::string> mismatches;
  auto expect_same = [&](const fs::path& a, const fs::path& b) {
    if (!same_bytes(a, b)) mismatches.push_back(a.filename().string());
  };

  for (int r = 1; r <= 2; ++r) {
    std::string t = (ws / ("run" + std::to_string(r))).string();
    if (run_cli(bin, "synth --seed 3 --labelled 6 --unlabelled 4 --config " + cfg + " --out " +
                         t + "/src") != 0)
      return {false, "synth rerun " + std::to_string(r) + " failed"};
    if (run_cli(bin, "synth --seed 4 --shift target --labelled 6 --unlabelled 4 --config " + cfg +
                         " --out " + t + "/tgt") != 0)
      return {false, "target synth rerun " + std::to_string(r) + " failed"};
    if (run_cli(bin, "train --stage pose --data " + t + "/src --config " + cfg +
                         " --seed 5 --out " + t + "/pose") != 0)
      return {false, "train rerun " + std::to_string(r) + " failed"};
    if (run_cli(bin, "adapt --method cmt --labelled-n 6 --source-ckpt " + t +
                         "/pose/pose.ckpt --data " + t + "/tgt --config " + cfg +
                         " --seed 6 --out " + t + "/adapt") != 0)
      return {false, "adapt rerun " + std::to_string(r) + " failed"};
  }

  fs::path r1 = ws / "run1", r2 = ws / "run2";
  for (const auto& entry : fs::recursive_directory_iterator(r1 / "src"))
    if (entry.is_regular_file() && entry.path().filename() != "run.json")
      expect_same(entry.path(), r2 / "src" / fs::relative(entry.path(), r1 / "src"));
  expect_same(r1 / "pose" / "train_pose.csv", r2 / "pose" / "train_pose.csv");
  expect_same(r1 / "pose" / "pose.ckpt", r2 / "pose" / "pose.ckpt");
  expect_same(r1 / "adapt" / "curves.csv", r2 / "adapt" / "curves.csv");
  expect_same(r1 / "adapt" / "adapted.ckpt", r2 / "adapt" / "adapted.ckpt");
  expect_same(r1 / "adapt" / "best.ckpt", r2 / "adapt" / "best.ckpt");

  fs::remove_all(ws);
  bool ok = mismatches.empty();
  std::string detail = "synth + train + adapt rerun byte-compare";
  if (!ok) {
    detail += ": mismatched";
    for (const auto& m : mismatches) detail += " " + m;
  } else {
    detail += ": identical";
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Row {
    std::string label;
    Outcome (*fn)();
  };
  const std::vector<Row> rows = {
      {"1 gradient correctness", criterion1},
      {"2 rotated IoU vs Monte Carlo oracle", criterion2},
      {"3 success-criterion fixtures", criterion3},
      {"4 uncertainty identity", criterion4},
      {"5 reduction equivalences", criterion5},
      {"6 EMA closed form", criterion6},
      {"7 supervised success rate", criterion7},
      {"8 certainty ordering", criterion8},
      {"9 adaptation trend", criterion9},
      {"9b growing confidence pool", pool_trend},
      {"10 rerun determinism", criterion10},
  };

  std::set<std::string> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);

  int failures = 0;
  for (const auto& row : rows) {
    std::string id = row.label.substr(0, row.label.find(' '));
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o = row.fn();
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", row.label.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
