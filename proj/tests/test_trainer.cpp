#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "hacseg/error.hpp"
#include "hacseg/topology.hpp"
#include "hacseg/trainer.hpp"

using namespace hacseg;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median of the last 10% of iterations below that of the first 10%.
bool loss_decreased(const std::vector<double>& losses) {
  const std::size_t k = std::max<std::size_t>(1, losses.size() / 10);
  const std::vector<double> head(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(k));
  const std::vector<double> tail(losses.end() - static_cast<std::ptrdiff_t>(k), losses.end());
  MESSAGE("median loss first 10% " << median(head) << ", last 10% " << median(tail));
  return median(tail) < median(head);
}

TrainPlan toy_plan(int stage, int epochs) {
  TrainPlan p = TrainPlan::defaults(stage);
  p.epochs = epochs;
  p.warmup_epochs = 1.0;
  p.base_lr = 2e-3;
  p.min_path = 12.5;
  p.validation_frames = 2;
  return p;
}

std::vector<RasterImage> images_of(const std::vector<LabeledFrame>& fs) {
  std::vector<RasterImage> out;
  for (const auto& f : fs) out.push_back(f.image);
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainPlan p = TrainPlan::defaults(1);
  CHECK(learning_rate(p, 0.0) == 0.0);
  CHECK(learning_rate(p, 5.0) == doctest::Approx(0.5e-4));
  CHECK(std::abs(learning_rate(p, 10.0) - p.base_lr) <= 1e-12);
  double prev = learning_rate(p, 10.0);
  for (double e = 10.0; e <= 100.0; e += 0.25) {
    const double lr = learning_rate(p, e);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(learning_rate(p, 100.0) < 1e-12);
  for (double e = 0.0; e < 10.0; e += 0.5) CHECK(learning_rate(p, e + 0.5) > learning_rate(p, e));
}

TEST_CASE("AdamW: decoupled decay, bias-corrected first step, frozen parameters") {
  nn::Rng rng(1);
  nn::ParamStore ps;
  nn::Param& w = ps.add("w", 1, 2, nn::Group::UNet, true, nn::Init::Ones, rng);
  nn::Param& b = ps.add("b", 1, 1, nn::Group::UNet, false, nn::Init::Ones, rng);
  nn::Param& frozen = ps.add("f", 1, 1, nn::Group::Attention, true, nn::Init::Ones, rng);
  TrainPlan plan = TrainPlan::defaults(3);
  AdamW opt(plan);
  const auto trainable = [&](const nn::Param& p) { return plan.is_trainable(p); };

  // Zero gradient: only decay parameters shrink, by exactly (1 - lr * wd).
  opt.step(ps, trainable, 0.1);
  CHECK(w.value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.01).epsilon(1e-7));
  CHECK(b.value(0, 0) == 1.0f);
  CHECK(frozen.value(0, 0) == 1.0f);

  // First moment step of a fresh optimiser is lr * sign(g).
  AdamW fresh(plan);
  for (auto& p : ps.all()) p.m.resize(0, 0);
  b.value(0, 0) = 0.0f;
  b.grad(0, 0) = 3.0f;
  frozen.grad(0, 0) = 5.0f;
  fresh.step(ps, trainable, 0.01);
  CHECK(b.value(0, 0) == doctest::Approx(-0.01).epsilon(1e-5));
  CHECK(frozen.value(0, 0) == 1.0f);
  CHECK(frozen.grad(0, 0) == 0.0f);

  // Minimises a quadratic.
  AdamW quad(plan);
  b.value(0, 0) = 3.0f;
  for (int i = 0; i < 2000; ++i) {
    b.grad(0, 0) = 2.0f * (b.value(0, 0) - 1.0f);
    quad.step(ps, trainable, 0.01);
  }
  CHECK(b.value(0, 0) == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("plan validation and stage trainable sets") {
  CHECK_NOTHROW(TrainPlan::defaults(1).validate());
  CHECK_NOTHROW(TrainPlan::defaults(2).validate());
  CHECK_NOTHROW(TrainPlan::defaults(3).validate());
  TrainPlan p = TrainPlan::defaults(3);
  p.weights = LossWeights::stage2();
  CHECK_THROWS_AS(p.validate(), Error);
  p = TrainPlan::defaults(2);
  p.base_lr = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
  CHECK(TrainPlan::defaults(2).epochs == 200);
  CHECK(TrainPlan::defaults(1).warmup_epochs == 10.0);
  CHECK(TrainPlan::defaults(1).base_lr == 1e-4);

  HacNet net(HacConfig::toy(), 1);
  const TrainPlan s1 = TrainPlan::defaults(1), s2 = TrainPlan::defaults(2), s3 = TrainPlan::defaults(3);
  for (const nn::Param& prm : net.params().all()) {
    CHECK(s2.is_trainable(prm) == (prm.group == nn::Group::Attention));
    CHECK(s3.is_trainable(prm) == (prm.group == nn::Group::UNet));
    if (prm.group == nn::Group::Recon) CHECK(s1.is_trainable(prm));
  }
}

TEST_CASE("synthetic vessel trees") {
  CHECK(make_synthetic_dataset(0, 64, 1).empty());
  const auto a = make_synthetic_dataset(12, 64, 5);
  const auto b = make_synthetic_dataset(12, 64, 5);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].mask.count() > 0);
    for (double v : a[i].image.data()) CHECK((v >= 0.0 && v <= 1.0));
    // Vessel pixels are darker than the tissue around them.
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        (a[i].mask(x, y) ? in : out) += a[i].image(x, y, 1);
        ++(a[i].mask(x, y) ? nin : nout);
      }
    CHECK(in / nin < 0.7 * out / nout);
  }
  CHECK(!(make_synthetic_dataset(1, 64, 6)[0].mask == a[0].mask));

  // Two or more bifurcation levels always leave a junction on the skeleton.
  for (const auto& f : make_synthetic_dataset(50, 64, 9)) CHECK(!skeletonize(f.mask).junctions.empty());
  CHECK_THROWS_AS(make_synthetic_dataset(-1, 64, 1), Error);
}

TEST_CASE("splits are disjoint and hashes order independent") {
  std::vector<ManifestEntry> labeled;
  for (int i = 0; i < 50; ++i) labeled.push_back({"f" + std::to_string(i) + ".png", "m" + std::to_string(i) + ".png"});
  std::vector<std::filesystem::path> unlabeled;
  for (int i = 0; i < 81; ++i) unlabeled.push_back("u" + std::to_string(i) + ".png");
  const SplitManifest s = make_split(labeled, unlabeled, 5, 42);
  CHECK_NOTHROW(s.validate(81, 45, 5));
  CHECK_THROWS_AS(s.validate(81, 44, 5), Error);
  SplitManifest bad = s;
  bad.test.push_back(bad.train.front());
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(split_hash({"a", "b", "c"}) == split_hash({"c", "a", "b"}));
  CHECK(split_hash({"a", "b"}) != split_hash({"a", "c"}));
  CHECK(s.to_json()["train"]["count"] == 45);
}

TEST_CASE("stage 1 reduces reconstruction error and is deterministic") {
  const auto data = make_synthetic_dataset(8, 64, 3);
  const auto frames = images_of(data);
  TrainPlan plan = toy_plan(1, 8);
  HacNet a(HacConfig::toy(), 42), b(HacConfig::toy(), 42);
  const auto ra = run_stage1(a, plan, frames, CorruptionSpec{});
  const auto rb = run_stage1(b, plan, frames, CorruptionSpec{});
  CHECK(ra.iterations == 64);
  CHECK(ra.losses == rb.losses);
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(loss_decreased(ra.losses));
  CHECK(ra.manifest["plan"]["optimizer"]["weight_decay"] == 0.01);
  CHECK(ra.manifest.contains("corruption"));
  CHECK_THROWS_AS(run_stage1(a, plan, {}, CorruptionSpec{}), Error);
}

TEST_CASE("stage 1 with zero-strength corruption descends during warmup") {
  const auto frames = images_of(make_synthetic_dataset(8, 64, 4));
  TrainPlan plan = toy_plan(1, 6);
  plan.warmup_epochs = 3.0;
  HacNet net(HacConfig::toy(), 42);
  const auto r = run_stage1(net, plan, frames, CorruptionSpec::identity());
  const std::vector<double> warm(r.losses.begin(), r.losses.begin() + 24);
  double first = 0, last = 0;
  for (int i = 0; i < 8; ++i) {
    first += warm[static_cast<std::size_t>(i)];
    last += warm[warm.size() - 8 + static_cast<std::size_t>(i)];
  }
  CHECK(last < first);
}

TEST_CASE("stage 2 leaves the U-Net untouched and echoes its weights") {
  const auto data = make_synthetic_dataset(10, 64, 11);
  HacNet net(HacConfig::toy(), 42);
  const auto unet = net.params().checksum(nn::Group::UNet);
  const auto recon = net.params().checksum(nn::Group::Recon);
  const auto attention = net.params().checksum(nn::Group::Attention);
  const auto r = run_stage2(net, toy_plan(2, 6), data);
  CHECK(net.params().checksum(nn::Group::UNet) == unet);
  CHECK(net.params().checksum(nn::Group::Recon) == recon);
  CHECK(net.params().checksum(nn::Group::Attention) != attention);
  CHECK(r.manifest["plan"]["loss_weights"]["summary"] == "T:1.5, cl:0.4, D:0.2, BCE:1.0");
  CHECK(r.manifest["splits"]["validation"]["count"] == 2);
  CHECK(r.epochs.size() == 6);
  CHECK(r.epochs.front().validation.has_value());
  CHECK(loss_decreased(r.losses));

  HacNet again(HacConfig::toy(), 42);
  CHECK(run_stage2(again, toy_plan(2, 6), data).losses == r.losses);
}

TEST_CASE("stage 3 freezes the attention side and echoes its weights") {
  const auto data = make_synthetic_dataset(10, 64, 12);
  HacNet net(HacConfig::toy(), 42);
  const auto attention = net.params().checksum(nn::Group::Attention);
  const auto unet = net.params().checksum(nn::Group::UNet);
  TrainPlan plan = toy_plan(3, 6);
  const auto r = run_stage3(net, plan, data);
  CHECK(net.params().checksum(nn::Group::Attention) == attention);
  CHECK(net.params().checksum(nn::Group::UNet) != unet);
  CHECK(r.manifest["plan"]["loss_weights"]["summary"] == "T:2.0, cl:1.5");
  CHECK(r.manifest["plan"]["loss_weights"]["alpha"] == 0.1);
  CHECK(loss_decreased(r.losses));
}

TEST_CASE("divergence restores the last finite weights") {
  const auto data = make_synthetic_dataset(4, 64, 13);
  HacNet net(HacConfig::toy(), 42);
  const auto before = net.params().checksum();
  TrainPlan plan = toy_plan(2, 3);
  plan.base_lr = 1e30;
  plan.warmup_epochs = 0.0;
  plan.validation_frames = 0;
  const auto r = run_stage2(net, plan, data);
  CHECK(r.diverged);
  CHECK(r.manifest["diverged"] == true);
  for (const nn::Param& p : net.params().all()) CHECK(p.value.allFinite());
  // Divergence hit inside the first epoch, so the last finite state is the start.
  if (r.epochs.empty()) CHECK(net.params().checksum() == before);
}

TEST_CASE("evaluation reports all three maps") {
  const auto data = make_synthetic_dataset(3, 64, 14);
  HacNet net(HacConfig::toy(), 42);
  const Evaluation ev = evaluate(net, data);
  CHECK(ev.hac.size() == 3);
  CHECK(ev.attention.size() == 3);
  CHECK(ev.unet.size() == 3);
  CHECK(ev.hac[0].name == "synth_0");
}
