// Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//   acceptance [--only N] [--drive manifest.txt]
// Exit status is non-zero when any selected criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "../fixtures.hpp"
#include "hacseg/augment.hpp"
#include "hacseg/hacnet.hpp"
#include "hacseg/losses.hpp"
#include "hacseg/manifest.hpp"
#include "hacseg/metrics.hpp"
#include "hacseg/profiler.hpp"
#include "hacseg/topology.hpp"
#include "hacseg/trainer.hpp"

using namespace hacseg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  enum { Pass, Fail, Skip } state = Fail;
  std::string detail;
};

Verdict verdict(bool ok, const std::string& detail) { return {ok ? Verdict::Pass : Verdict::Fail, detail}; }

struct Criterion {
  int id;
  std::string title;
  double limit_s;
  std::function<Verdict()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

ProbMap random_probs(int w, int h, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  ProbMap p(w, h);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = u(rng);
  return p;
}

BinaryMask random_target(int w, int h, std::mt19937_64& rng) {
  BinaryMask y = fixtures::random_mask(w, h, 0.35, rng);
  if (y.count() == 0) y.set(0, true);
  return y;
}

// Norm-wise relative error of the analytic gradient against central differences.
double gradient_error(const ProbMap& p0, const std::function<LossValue(const ProbMap&)>& f, double h) {
  ProbMap p = p0;
  const std::vector<double> analytic = f(p).grad;
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = p[i];
    p[i] = v + h;
    const double up = f(p).value;
    p[i] = v - h;
    const double down = f(p).value;
    p[i] = v;
    const double numeric = (up - down) / (2.0 * h);
    diff += (analytic[i] - numeric) * (analytic[i] - numeric);
    norm += numeric * numeric;
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

TrainPlan toy_plan(int stage, int epochs) {
  TrainPlan p = TrainPlan::defaults(stage);
  p.epochs = epochs;
  p.warmup_epochs = 1.0;
  p.base_lr = 2e-3;
  p.min_path = 12.5;  // 100 px at 512 px, scaled to 64 px frames
  p.validation_frames = 2;
  return p;
}

std::vector<RasterImage> images_of(const std::vector<LabeledFrame>& fs) {
  std::vector<RasterImage> out;
  for (const auto& f : fs) out.push_back(f.image);
  return out;
}

// ---- criteria ----

Verdict metric_identities() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::uint64_t> count(0, 1'000'000);
  double worst_iou = 0.0, worst_hm = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ConfusionCounts c{count(rng) + 1, count(rng), count(rng), count(rng)};
    const double d = *dice(c), j = *iou(c), pr = *precision(c), se = *sensitivity(c);
    worst_iou = std::max(worst_iou, std::abs(d - 2.0 * j / (1.0 + j)));
    worst_hm = std::max(worst_hm, std::abs(d - 2.0 * pr * se / (pr + se)));
  }
  return verdict(worst_iou <= 1e-12 && worst_hm <= 1e-12,
                 "max |Dice - 2IoU/(1+IoU)| = " + fmt(worst_iou) + ", max |Dice - HM(P,S)| = " + fmt(worst_hm));
}

Verdict tversky_dice() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ProbMap p = random_probs(16, 16, rng, 0.0, 1.0);
    const BinaryMask y = random_target(16, 16, rng);
    worst = std::max(worst, std::abs(tversky_loss(p, y, 0.5, 0.5).value - dice_loss(p, y).value));
  }
  return verdict(worst <= 1e-9, "max |Tversky(0.5,0.5) - Dice| = " + fmt(worst));
}

Verdict gradient_oracle() {
  std::mt19937_64 rng(31);
  double bce = 0, dc = 0, tv = 0, cl = 0;
  for (int i = 0; i < 10; ++i) {
    const ProbMap p = random_probs(8, 8, rng, 0.02, 0.98);
    const BinaryMask y = random_target(8, 8, rng);
    bce = std::max(bce, gradient_error(p, [&](const ProbMap& q) { return bce_loss(q, y); }, 1e-4));
    dc = std::max(dc, gradient_error(p, [&](const ProbMap& q) { return dice_loss(q, y); }, 1e-4));
    tv = std::max(tv, gradient_error(p, [&](const ProbMap& q) { return tversky_loss(q, y, 0.1, 0.9); }, 1e-4));
    cl = std::max(cl, gradient_error(p, [&](const ProbMap& q) { return soft_cldice_loss(q, y); }, 1e-4));
  }
  return verdict(bce < 1e-3 && dc < 1e-3 && tv < 1e-3 && cl < 1e-2,
                 "max rel err BCE " + fmt(bce) + ", Dice " + fmt(dc) + ", Tversky " + fmt(tv) + ", clDice " + fmt(cl));
}

Verdict cldice_sensitivity() {
  BinaryMask line(120, 9);
  fixtures::hline(line, 10, 109, 4);
  BinaryMask gapped = line;
  for (int x = 57; x < 62; ++x) gapped.set(x, 4, false);
  const double d_intact = *dice(confusion(line, line)), d_gap = *dice(confusion(gapped, line));
  const double cl_intact = *cl_dice(line, line), cl_gap = *cl_dice(gapped, line);
  const double dd = d_intact - d_gap, dcl = cl_intact - cl_gap;
  // Both drops are 5/195 in exact arithmetic; demand a margin above rounding.
  return verdict(dcl > dd + 1e-12, "dDice = " + fmt(dd, 10) + ", dclDice = " + fmt(dcl, 10) + " (5/195 = " +
                                       fmt(5.0 / 195.0, 10) + ")");
}

Verdict shape_attention() {
  const HacConfig full = HacConfig::full_size();
  HacNet big(full, 1);
  const nn::Mat tokens = big.patch_embed(to_tensor(RasterImage(512, 512, 0.5)));
  const bool n_ok = tokens.rows() == 4096 && full.tokens() == 4096;

  HacNet toy(HacConfig::toy(), 3);
  const auto frame = make_synthetic_dataset(1, 64, 5)[0];
  nn::Rng rng(4);
  toy.attention_forward(to_tensor(frame.image), false, rng);
  double worst_row = 0.0;
  for (int b = 0; b < HacConfig::toy().depth; ++b)
    for (const nn::Mat& a : toy.block(b).attention().attention())
      worst_row = std::max(worst_row, (a.cast<double>().rowwise().sum().array() - 1.0).abs().maxCoeff());
  const bool rows_ok = worst_row <= 1e-6 && !toy.block(0).attention().attention().empty();

  const std::vector<double> sched = droppath_schedule(full);
  const bool sched_ok = !sched.empty() && sched.back() == 0.1;

  nn::Rng dp(11);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += nn::drop_path_scale(0.1, true, dp);
  const double expectation = sum / n;
  const bool dp_ok = std::abs(expectation - 1.0) <= 0.02;

  return verdict(n_ok && rows_ok && sched_ok && dp_ok,
                 "tokens " + std::to_string(tokens.rows()) + ", max |row sum - 1| " + fmt(worst_row) +
                     ", rho_L " + fmt(sched.empty() ? -1.0 : sched.back()) + ", E[DropPath scale] " + fmt(expectation));
}

Verdict fusion_neutrality() {
  std::mt19937_64 rng(6);
  bool exact = true;
  for (int t = 0; t < 50; ++t) {
    const ProbMap pa = random_probs(32, 32, rng, 0.0, 1.0);
    const ProbMap pu(32, 32, 0.5);
    const ProbMap h = fuse(pa, pu);
    for (std::size_t i = 0; i < pa.size(); ++i) exact = exact && h[i] == pa[i];
  }
  // Same through the network: a zero segmentation head emits exactly 0.5.
  HacNet net(HacConfig::toy(), 8);
  for (nn::Param& p : net.params().all())
    if (p.name.rfind("unet.head.", 0) == 0) p.value.setZero();
  const auto maps = net.forward(make_synthetic_dataset(1, 64, 2)[0].image);
  bool net_exact = true;
  for (std::size_t i = 0; i < maps.pa.size(); ++i) net_exact = net_exact && maps.pu[i] == 0.5 && maps.phac[i] == maps.pa[i];
  return verdict(exact && net_exact, std::string("random P_A: ") + (exact ? "bit-exact" : "differs") +
                                         ", network with P_U = 0.5: " + (net_exact ? "bit-exact" : "differs"));
}

Verdict stage_isolation() {
  const auto frames = make_synthetic_dataset(8, 64, 13);
  HacNet net(HacConfig::toy(), 21);
  const auto unet_before = net.params().checksum(nn::Group::UNet);
  const auto attn_before = net.params().checksum(nn::Group::Attention);
  run_stage2(net, toy_plan(2, 1), frames);
  const bool unet_same = net.params().checksum(nn::Group::UNet) == unet_before;
  const bool attn_moved = net.params().checksum(nn::Group::Attention) != attn_before;

  const auto attn_mid = net.params().checksum(nn::Group::Attention);
  const auto unet_mid = net.params().checksum(nn::Group::UNet);
  run_stage3(net, toy_plan(3, 1), frames);
  const bool attn_same = net.params().checksum(nn::Group::Attention) == attn_mid;
  const bool unet_moved = net.params().checksum(nn::Group::UNet) != unet_mid;
  return verdict(unet_same && attn_same && attn_moved && unet_moved,
                 std::string("stage 2: U-Net ") + (unet_same ? "unchanged" : "CHANGED") + ", attention " +
                     (attn_moved ? "updated" : "static") + "; stage 3: attention " +
                     (attn_same ? "unchanged" : "CHANGED") + ", U-Net " + (unet_moved ? "updated" : "static"));
}

double recon_mse(HacNet& net, const std::vector<RasterImage>& frames, const CorruptionSpec& spec) {
  double total = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Corruption c = corrupt(frames[i], spec, derive_seed(999, i));
    total += stage1_loss(net.forward_recon(c.image), frames[i]).value;
  }
  return total / static_cast<double>(frames.size());
}

Verdict stage1_learning() {
  const auto frames = images_of(make_synthetic_dataset(16, 64, 17));
  const CorruptionSpec spec;
  HacNet net(HacConfig::toy(), 5);
  const double before = recon_mse(net, frames, spec);
  TrainPlan plan = toy_plan(1, 13);
  plan.max_iterations = 200;
  const TrainResult r = run_stage1(net, plan, frames, spec);
  const double after = recon_mse(net, frames, spec);
  const double ratio = after / before;
  return verdict(r.iterations == 200 && !r.diverged && ratio < 0.25,
                 std::to_string(r.iterations) + " iterations, held-fixed corruption MSE " + fmt(before) + " -> " +
                     fmt(after) + " (" + fmt(100.0 * ratio, 3) + "% of iteration 0)");
}

Verdict toy_pipeline() {
  const auto data = make_synthetic_dataset(200, 64, 7);
  const std::vector<LabeledFrame> train(data.begin(), data.begin() + 180), test(data.begin() + 180, data.end());
  HacNet net(HacConfig::toy(), 42);

  TrainPlan p1 = toy_plan(1, 5);
  p1.warmup_epochs = 0.5;
  const TrainResult r1 = run_stage1(net, p1, images_of(train), CorruptionSpec{});
  TrainPlan p2 = toy_plan(2, 40);
  p2.patience = 10;
  const TrainResult r2 = run_stage2(net, p2, train);
  TrainPlan p3 = toy_plan(3, 30);
  p3.patience = 10;
  const TrainResult r3 = run_stage3(net, p3, train);

  const Evaluation ev = evaluate(net, test);
  const auto hac = summarize(ev.hac), att = summarize(ev.attention);
  const double d_hac = hac.mean.at("dice"), cl_hac = hac.mean.count("cldice") ? hac.mean.at("cldice") : 0.0;
  const double d_att = att.mean.at("dice");
  const bool ok = !r1.diverged && !r2.diverged && !r3.diverged && d_hac >= 0.80 && cl_hac >= 0.80 && d_hac > d_att;
  return verdict(ok, "held-out (20 frames) Dice(P_HAC) " + fmt(d_hac) + ", clDice(P_HAC) " + fmt(cl_hac) +
                         ", Dice(P_A) " + fmt(d_att) + "; iterations " + std::to_string(r1.iterations) + "/" +
                         std::to_string(r2.iterations) + "/" + std::to_string(r3.iterations));
}

Verdict pruning_properties() {
  const auto trees = make_synthetic_dataset(100, 256, 101);
  int short_components = 0, bad_endpoints = 0, outside = 0, nonempty = 0, pruned_any = 0;
  for (const LabeledFrame& f : trees) {
    const PruneResult r = prune_targets_detailed(f.mask, 100.0);
    if (r.target.count() > 0) ++nonempty;
    const SkeletonGraph after = build_skeleton_graph(r.pruned_skeleton);
    for (const double len : after.component_lengths()) short_components += len < 100.0;

    const SkeletonGraph& before = r.original;
    BinaryMask was_endpoint(f.mask.width(), f.mask.height()), was_junction = was_endpoint;
    for (const Point p : before.endpoints) was_endpoint.set(p.x, p.y, true);
    for (const Point p : before.junctions) was_junction.set(p.x, p.y, true);
    for (const Point p : after.endpoints) {
      if (!was_endpoint(p.x, p.y) && !was_junction(p.x, p.y)) ++bad_endpoints;
    }
    if (after.endpoints.size() < before.endpoints.size()) ++pruned_any;

    const BinaryMask grown = dilate(f.mask, 1);
    for (std::size_t i = 0; i < r.target.size(); ++i) outside += r.target.at(i) && !grown.at(i);
  }
  return verdict(short_components == 0 && bad_endpoints == 0 && outside == 0 && nonempty > 0,
                 "components < 100 px: " + std::to_string(short_components) +
                     ", new endpoints off original junctions: " + std::to_string(bad_endpoints) +
                     ", M* pixels outside dilate(G,1): " + std::to_string(outside) + " (" + std::to_string(nonempty) +
                     "/100 non-empty, " + std::to_string(pruned_any) + " with twigs removed)");
}

Verdict profiler_fixtures() {
  const RasterImage flat = fixtures::uniform_image(64, 64, 0.42, 0.3, 0.25);
  const double cv = coefficient_of_variation(flat), vi0 = vignetting_index(flat);

  BinaryMask fov(81, 81);
  fixtures::fill_disk(fov, 40, 40, 38);
  RasterImage vig(81, 81);
  for (int y = 0; y < 81; ++y)
    for (int x = 0; x < 81; ++x) {
      const double v = std::hypot(x - 40, y - 40) <= 20 ? 0.8 : 0.4;
      for (int c = 0; c < 3; ++c) vig(x, y, c) = v;
    }
  vig.set_fov(fov);
  const double vi = vignetting_index(vig);

  // Flat vessel / background tones with the tabulated red means.
  BinaryMask vessels(40, 40);
  fixtures::fill_rect(vessels, 10, 0, 4, 40);
  RasterImage tones(40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      tones(x, y, 0) = (vessels(x, y) ? 138.79 : 136.06) / 255.0;
      tones(x, y, 1) = 0.3;
      tones(x, y, 2) = 0.3;
    }
  const double rcc = red_channel_contrast(tones, vessels);
  return verdict(cv == 0.0 && vi0 == 0.0 && std::abs(vi - 0.5) <= 1e-6 && std::abs(rcc - 0.0201) <= 1e-4,
                 "uniform CV " + fmt(cv) + ", VI " + fmt(vi0) + "; vignette VI " + fmt(vi, 10) + "; RCC " + fmt(rcc, 6));
}

std::optional<fs::path> drive_manifest(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* m = std::getenv("DRIVE_MANIFEST"); m && *m) return fs::path(m);
  if (const char* root = std::getenv("BLAVESS_DATA_DIR"); root && *root) {
    const fs::path p = fs::path(root) / "DRIVE" / "training.txt";
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

Verdict drive_profile(const std::optional<fs::path>& manifest) {
  if (!manifest || !fs::exists(*manifest)) {
    return {Verdict::Skip, "DRIVE training manifest not found (set DRIVE_MANIFEST or BLAVESS_DATA_DIR)"};
  }
  const DatasetReport report = profile_dataset(read_manifest(*manifest));
  auto mean = [&](const std::string& k) {
    const auto it = report.aggregate.find(k);
    return it == report.aggregate.end() || it->second.count == 0 ? std::nan("") : it->second.mean;
  };
  const double ratio = mean("vessel_ratio"), ti = mean("ti_frame_mean"), bd = mean("bd");
  return verdict(std::abs(ratio - 8.69) <= 1.0 && std::abs(ti - 1.10) <= 0.05 && std::abs(bd - 7.53) <= 1.5,
                 std::to_string(report.frames.size()) + " frames: vessel ratio " + fmt(ratio) + "%, TI " + fmt(ti) +
                     ", BD " + fmt(bd));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  int only = 0;
  std::string drive;
  app.add_option("--only", only, "run a single criterion (1-12)");
  app.add_option("--drive", drive, "manifest of the DRIVE training set (PNG image,mask lines)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "metric identities", 1.0, metric_identities},
      {2, "Tversky(0.5,0.5) equals Dice", 1.0, tversky_dice},
      {3, "loss gradients vs central differences", 30.0, gradient_oracle},
      {4, "clDice more sensitive to a gap than Dice", 1.0, cldice_sensitivity},
      {5, "shape and attention invariants", 60.0, shape_attention},
      {6, "fusion neutrality", 1.0, fusion_neutrality},
      {7, "stage isolation", 120.0, stage_isolation},
      {8, "stage-1 reconstruction learning", 300.0, stage1_learning},
      {9, "end-to-end toy pipeline", 1800.0, toy_pipeline},
      {10, "target pruning properties", 60.0, pruning_properties},
      {11, "profiler fixtures", 1.0, profiler_fixtures},
      {12, "DRIVE profile statistics", 120.0, [&] { return drive_profile(drive_manifest(drive)); }},
  };

  int failed = 0, ran = 0;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (v.state == Verdict::Pass && secs > c.limit_s) {
      v.state = Verdict::Fail;
      v.detail += "; over the " + fmt(c.limit_s) + " s budget";
    }
    const char* tag = v.state == Verdict::Pass ? "PASS" : v.state == Verdict::Skip ? "SKIP" : "FAIL";
    std::cout << "[" << tag << "] " << std::setw(2) << c.id << " " << c.title << " (" << std::fixed
              << std::setprecision(2) << secs << " s, limit " << std::setprecision(0) << c.limit_s
              << " s): " << std::defaultfloat << v.detail << std::endl;
    failed += v.state == Verdict::Fail;
  }
  if (ran == 0) {
    std::cerr << "no criterion " << only << "\n";
    return 2;
  }
  return failed == 0 ? 0 : 1;
}
