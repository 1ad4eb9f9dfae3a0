#include "hacseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>

#include "hacseg/error.hpp"
#include "hacseg/topology.hpp"

namespace hacseg {

using nn::Mat;
using nn::Real;
using nn::Tensor;

// ---- data ----

void SplitManifest::validate(std::optional<std::size_t> n_unlabeled, std::optional<std::size_t> n_train,
                             std::optional<std::size_t> n_test) const {
  auto check_count = [](const char* what, std::size_t got, std::optional<std::size_t> want) {
    if (want && got != *want) {
      fail(ErrorKind::Config, std::string("split ") + what + " has " + std::to_string(got) + " frames, expected " +
                                  std::to_string(*want));
    }
  };
  check_count("unlabeled", unlabeled.size(), n_unlabeled);
  check_count("train", train.size(), n_train);
  check_count("test", test.size(), n_test);
  std::set<std::filesystem::path> seen;
  auto claim = [&](const std::filesystem::path& p) {
    if (!seen.insert(p.lexically_normal()).second) fail(ErrorKind::Config, "split sets overlap at " + p.string());
  };
  for (const auto& p : unlabeled) claim(p);
  for (const auto& e : train) claim(e.image);
  for (const auto& e : test) claim(e.image);
}

namespace {

std::vector<std::string> entry_names(const std::vector<ManifestEntry>& es) {
  std::vector<std::string> out;
  for (const auto& e : es) out.push_back(e.image.string());
  return out;
}

}  // namespace

nlohmann::json SplitManifest::to_json() const {
  std::vector<std::string> u;
  for (const auto& p : unlabeled) u.push_back(p.string());
  return {{"unlabeled", {{"count", u.size()}, {"hash", split_hash(u)}}},
          {"train", {{"count", train.size()}, {"hash", split_hash(entry_names(train))}}},
          {"test", {{"count", test.size()}, {"hash", split_hash(entry_names(test))}}}};
}

SplitManifest make_split(std::vector<ManifestEntry> labeled, std::vector<std::filesystem::path> unlabeled,
                         std::size_t n_test, std::uint64_t seed) {
  if (n_test > labeled.size()) fail(ErrorKind::Config, "test split larger than the labeled set");
  Rng rng(seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  SplitManifest s;
  s.unlabeled = std::move(unlabeled);
  s.test.assign(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(labeled.begin() + static_cast<std::ptrdiff_t>(n_test), labeled.end());
  s.validate();
  return s;
}

std::string split_hash(const std::vector<std::string>& names) {
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& s : sorted) {
    for (char c : s + '\n') {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<LabeledFrame> load_labeled(const std::vector<ManifestEntry>& entries) {
  std::vector<LabeledFrame> out;
  for (const auto& e : entries) {
    if (!e.mask) fail(ErrorKind::Data, "manifest entry without mask: " + e.image.string());
    LabeledFrame f;
    f.name = frame_stem(e.image);
    f.image = load_image(e.image);
    f.image.set_fov(extract_fov(f.image).mask);
    f.mask = load_mask(*e.mask);
    if (!f.mask.same_shape(f.image.fov())) fail(ErrorKind::Data, "mask and image sizes differ for " + f.name);
    out.push_back(std::move(f));
  }
  return out;
}

// ---- plan and optimiser ----

TrainPlan TrainPlan::defaults(int stage) {
  TrainPlan p;
  p.stage = stage;
  p.epochs = stage == 2 ? 200 : 100;
  p.weights = stage == 3 ? LossWeights::stage3() : LossWeights::stage2();
  return p;
}

bool TrainPlan::is_trainable(const nn::Param& p) const {
  if (trainable) return trainable(p);
  switch (stage) {
    case 1: return p.name.rfind("unet.head.", 0) != 0;  // the segmentation head is idle in stage 1
    case 2: return p.group == nn::Group::Attention;
    default: return p.group == nn::Group::UNet;
  }
}

void TrainPlan::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "train plan: " + what); };
  if (stage < 1 || stage > 3) bad("stage must be 1, 2 or 3");
  if (epochs < 1) bad("epochs must be >= 1");
  if (!(warmup_epochs >= 0.0)) bad("warmup_epochs must be >= 0");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) bad("base_lr must be positive");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0,1)");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (!(eps > 0.0)) bad("eps must be positive");
  if (patience < 1) bad("patience must be >= 1");
  if (validation_frames < 0) bad("validation_frames must be >= 0");
  if (!(min_path >= 0.0)) bad("min_path must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) bad("threshold must lie in (0,1)");
  if (max_iterations && *max_iterations < 1) bad("max_iterations must be >= 1");
  if (stage >= 2) {
    if (weights.stage != stage) bad("loss weights are for stage " + std::to_string(weights.stage));
    weights.validate();
  }
}

namespace {

std::string short_number(double v) {
  char buf[32];
  if (std::abs(v * 10.0 - std::round(v * 10.0)) < 1e-9) {
    std::snprintf(buf, sizeof buf, "%.1f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%g", v);
  }
  return buf;
}

nlohmann::json weights_json(const LossWeights& w) {
  std::string summary;
  auto add = [&](const char* tag, double v) {
    if (v == 0.0) return;
    if (!summary.empty()) summary += ", ";
    summary += std::string(tag) + ":" + short_number(v);
  };
  add("T", w.tversky);
  add("cl", w.cldice);
  add("D", w.dice);
  add("BCE", w.bce);
  return {{"stage", w.stage},   {"tversky", w.tversky}, {"cldice", w.cldice},
          {"dice", w.dice},     {"bce", w.bce},         {"alpha", w.alpha},
          {"beta", w.beta},     {"skeleton_iters", w.skeleton_iters}, {"summary", summary}};
}

}  // namespace

nlohmann::json TrainPlan::to_json() const {
  nlohmann::json j = {{"stage", stage},
                      {"epochs", epochs},
                      {"warmup_epochs", warmup_epochs},
                      {"base_lr", base_lr},
                      {"batch_size", batch_size},
                      {"optimizer", {{"name", "adamw"}, {"beta1", beta1}, {"beta2", beta2},
                                     {"weight_decay", weight_decay}, {"eps", eps}}},
                      {"schedule", "linear warmup + cosine"},
                      {"patience", patience},
                      {"validation_frames", validation_frames},
                      {"threshold", threshold},
                      {"seed", seed},
                      {"custom_trainable_set", static_cast<bool>(trainable)}};
  if (stage >= 2) j["loss_weights"] = weights_json(weights);
  if (stage == 2) j["min_path"] = min_path;
  if (max_iterations) j["max_iterations"] = *max_iterations;
  return j;
}

double learning_rate(const TrainPlan& plan, double epoch) {
  const double warm = plan.warmup_epochs;
  if (epoch < warm) return plan.base_lr * std::max(0.0, epoch) / warm;
  const double span = plan.epochs - warm;
  if (span <= 0.0) return plan.base_lr;
  const double progress = std::min(1.0, (epoch - warm) / span);
  return plan.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(nn::ParamStore& ps, const std::function<bool(const nn::Param&)>& trainable, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(plan_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(plan_.beta2, static_cast<double>(t_));
  const Real b1 = static_cast<Real>(plan_.beta1), b2 = static_cast<Real>(plan_.beta2);
  const Real step = static_cast<Real>(lr / c1);
  const Real inv_c2 = static_cast<Real>(1.0 / c2);
  const Real eps = static_cast<Real>(plan_.eps);
  const Real shrink = static_cast<Real>(1.0 - lr * plan_.weight_decay);
  for (nn::Param& p : ps.all()) {
    if (trainable(p)) {
      if (p.m.size() == 0) {
        p.m = Mat::Zero(p.value.rows(), p.value.cols());
        p.v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      p.m.array() = b1 * p.m.array() + (1.0f - b1) * p.grad.array();
      p.v.array() = b2 * p.v.array() + (1.0f - b2) * p.grad.array().square();
      if (p.decay) p.value *= shrink;
      p.value.array() -= step * p.m.array() / ((p.v.array() * inv_c2).sqrt() + eps);
    }
    p.grad.setZero();
  }
}

// ---- training loop ----

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

nlohmann::json checksums(const HacNet& net) {
  const auto& ps = net.params();
  return {{"attention", hex(ps.checksum(nn::Group::Attention))},
          {"unet", hex(ps.checksum(nn::Group::UNet))},
          {"recon", hex(ps.checksum(nn::Group::Recon))}};
}

std::vector<Mat> snapshot(const HacNet& net) {
  std::vector<Mat> s;
  for (const nn::Param& p : net.params().all()) s.push_back(p.value);
  return s;
}

void restore(HacNet& net, const std::vector<Mat>& s) {
  std::size_t i = 0;
  for (nn::Param& p : net.params().all()) p.value = s[i++];
}

Tensor grad_tensor(const std::vector<double>& g, int w, int h, double scale) {
  Tensor t(1, h, w);
  for (int i = 0; i < w * h; ++i) t.data(0, i) = static_cast<Real>(g[static_cast<std::size_t>(i)] * scale);
  return t;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Forward + backward for one sample: accumulates gradients scaled by
/// `scale` and returns the loss.
using StepFn = std::function<double(std::size_t index, std::uint64_t sample_seed, double scale)>;
using ValidateFn = std::function<std::optional<double>()>;

struct LoopSpec {
  std::size_t n_train = 0;
  StepFn step;
  ValidateFn validate;         // may be empty
  bool higher_is_better = true;
};

TrainResult train_loop(HacNet& net, const TrainPlan& plan, const LoopSpec& spec) {
  TrainResult res;
  const auto trainable = [&plan](const nn::Param& p) { return plan.is_trainable(p); };
  const std::size_t bs = static_cast<std::size_t>(plan.batch_size);
  const long per_epoch = static_cast<long>((spec.n_train + bs - 1) / bs);
  AdamW opt(plan);
  std::vector<Mat> last_good = snapshot(net);
  std::vector<Mat> best;
  std::optional<double> best_value;
  net.params().zero_grad();

  for (int epoch = 0; epoch < plan.epochs && !res.diverged; ++epoch) {
    if (plan.max_iterations && res.iterations >= *plan.max_iterations) break;
    std::vector<std::size_t> order(spec.n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(plan.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<double> epoch_losses;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      if (plan.max_iterations && res.iterations >= *plan.max_iterations) break;
      const std::size_t end = std::min(order.size(), start + bs);
      const double scale = 1.0 / static_cast<double>(end - start);
      double loss = 0.0;
      try {
        for (std::size_t k = start; k < end; ++k) {
          const std::uint64_t sample_seed =
              derive_seed(plan.seed, static_cast<std::uint64_t>(epoch) * spec.n_train + k);
          loss += scale * spec.step(order[k], sample_seed, scale);
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss)) {
        res.diverged = true;
        break;
      }
      lr = learning_rate(plan, static_cast<double>(res.iterations + 1) / static_cast<double>(per_epoch));
      opt.step(net.params(), trainable, lr);
      res.losses.push_back(loss);
      epoch_losses.push_back(loss);
      ++res.iterations;
    }
    if (res.diverged) break;

    bool finite = true;
    for (const nn::Param& p : net.params().all()) finite = finite && p.value.allFinite();
    if (!finite) {
      res.diverged = true;
      break;
    }
    last_good = snapshot(net);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = mean_of(epoch_losses).value_or(0.0);
    rec.lr = lr;
    if (spec.validate) rec.validation = spec.validate();
    res.epochs.push_back(rec);
    if (rec.validation) {
      const bool better = !best_value || (spec.higher_is_better ? *rec.validation > *best_value
                                                                : *rec.validation < *best_value);
      if (better) {
        best_value = rec.validation;
        res.best_epoch = epoch;
        best = last_good;
      } else if (epoch - res.best_epoch >= plan.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  if (res.diverged) {
    restore(net, last_good);
  } else if (!best.empty()) {
    restore(net, best);
  }
  net.params().zero_grad();
  return res;
}

nlohmann::json manifest_base(const HacNet& net, const TrainPlan& plan, const TrainResult& r,
                             const nlohmann::json& before) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : r.epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"lr", e.lr}};
    j["validation"] = e.validation ? nlohmann::json(*e.validation) : nlohmann::json();
    epochs.push_back(j);
  }
  std::size_t trainable = 0;
  for (const nn::Param& p : net.params().all())
    if (plan.is_trainable(p)) trainable += static_cast<std::size_t>(p.value.size());
  return {{"stage", plan.stage},
          {"seed", plan.seed},
          {"plan", plan.to_json()},
          {"config", net.config().to_json()},
          {"trainable_values", trainable},
          {"iterations", r.iterations},
          {"diverged", r.diverged},
          {"early_stopped", r.early_stopped},
          {"best_epoch", r.best_epoch},
          {"epochs", epochs},
          {"loss_trace", r.losses},
          {"checksums_before", before},
          {"checksums_after", checksums(net)}};
}

struct Split {
  std::vector<std::size_t> train, validation;
};

Split hold_out(std::size_t n, const TrainPlan& plan) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Split s;
  const std::size_t nv = static_cast<std::size_t>(plan.validation_frames);
  if (nv == 0 || nv >= n) {
    s.train = idx;
    return s;
  }
  Rng rng(derive_seed(plan.seed, 0x7a11da7eULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::vector<std::string> names_of(const std::vector<LabeledFrame>& pairs, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(pairs[i].name);
  return out;
}

std::optional<double> region_dice(const ProbMap& p, const BinaryMask& gt, const BinaryMask& roi, double thr) {
  return dice(confusion(p.threshold(thr), gt, roi));
}

}  // namespace

TrainResult run_stage1(HacNet& net, const TrainPlan& plan, const std::vector<RasterImage>& frames,
                       const CorruptionSpec& spec) {
  plan.validate();
  spec.validate();
  if (plan.stage != 1) fail(ErrorKind::Config, "run_stage1 needs a stage-1 plan");
  if (frames.empty()) fail(ErrorKind::Data, "stage 1 needs at least one frame");
  const nlohmann::json before = checksums(net);

  LoopSpec loop;
  loop.n_train = frames.size();
  loop.step = [&](std::size_t index, std::uint64_t seed, double scale) {
    const RasterImage& clean = frames[index];
    const Corruption c = corrupt(clean, spec, derive_seed(seed, 1));
    nn::Rng rng(derive_seed(seed, 2));
    const Tensor x = to_tensor(c.image);
    const Tensor pa = net.attention_forward(x, true, rng);
    const Tensor recon = net.recon_head_forward(net.unet_forward(x, pa));
    const LossValue l = stage1_loss(to_image(recon), clean);
    Tensor g(3, recon.h, recon.w);
    for (int i = 0; i < recon.h * recon.w; ++i)
      for (int ch = 0; ch < 3; ++ch) {
        g.data(ch, i) = static_cast<Real>(l.grad[static_cast<std::size_t>(i) * 3 + ch] * scale);
      }
    const Tensor gin = net.unet_backward(net.recon_head_backward(g), true);
    Tensor gpa(1, gin.h, gin.w);
    gpa.data = gin.data.row(3);
    net.attention_backward(gpa);
    return l.value;
  };
  TrainResult r = train_loop(net, plan, loop);
  r.manifest = manifest_base(net, plan, r, before);
  r.manifest["corruption"] = to_json(spec);
  r.manifest["splits"] = {{"unlabeled", {{"count", frames.size()}}}};
  return r;
}

TrainResult run_stage2(HacNet& net, const TrainPlan& plan, const std::vector<LabeledFrame>& pairs) {
  plan.validate();
  if (plan.stage != 2) fail(ErrorKind::Config, "run_stage2 needs a stage-2 plan");
  if (pairs.empty()) fail(ErrorKind::Data, "stage 2 needs at least one labeled frame");
  const nlohmann::json before = checksums(net);
  const Split split = hold_out(pairs.size(), plan);

  std::vector<BinaryMask> targets;
  targets.reserve(pairs.size());
  for (const LabeledFrame& f : pairs) targets.push_back(prune_targets(f.mask, plan.min_path));

  LoopSpec loop;
  loop.n_train = split.train.size();
  loop.step = [&](std::size_t k, std::uint64_t seed, double scale) {
    const std::size_t index = split.train[k];
    nn::Rng rng(derive_seed(seed, 2));
    const Tensor pa = net.attention_forward(to_tensor(pairs[index].image), true, rng);
    const StageLoss l = stage2_loss(to_probmap(pa), targets[index], plan.weights);
    net.attention_backward(grad_tensor(l.grad, pa.w, pa.h, scale));
    return l.total;
  };
  if (!split.validation.empty()) {
    loop.validate = [&]() -> std::optional<double> {
      std::vector<double> d;
      for (std::size_t i : split.validation) {
        nn::Rng rng(0);
        const ProbMap pa = to_probmap(net.attention_forward(to_tensor(pairs[i].image), false, rng));
        if (auto v = region_dice(pa, targets[i], pairs[i].image.fov(), plan.threshold)) d.push_back(*v);
      }
      return mean_of(d);
    };
  }
  TrainResult r = train_loop(net, plan, loop);
  r.manifest = manifest_base(net, plan, r, before);
  r.manifest["splits"] = {
      {"train", {{"count", split.train.size()}, {"hash", split_hash(names_of(pairs, split.train))}}},
      {"validation",
       {{"count", split.validation.size()},
        {"hash", split_hash(names_of(pairs, split.validation))},
        {"note", "held out from the training pairs (seeded) for early stopping"}}}};
  r.manifest["validation_metric"] = "dice(P_A, pruned target)";
  return r;
}

namespace {

// d fuse / d P_U = 2 inside (0,1). At a clamped pixel the gradient only
// passes when a descent step would move the sum back inside the interval.
double fuse_grad(double raw, double g) {
  if (raw >= 1.0) return g > 0.0 ? 2.0 * g : 0.0;
  if (raw <= 0.0) return g < 0.0 ? 2.0 * g : 0.0;
  return 2.0 * g;
}

}  // namespace

TrainResult run_stage3(HacNet& net, const TrainPlan& plan, const std::vector<LabeledFrame>& pairs) {
  plan.validate();
  if (plan.stage != 3) fail(ErrorKind::Config, "run_stage3 needs a stage-3 plan");
  if (pairs.empty()) fail(ErrorKind::Data, "stage 3 needs at least one labeled frame");
  const nlohmann::json before = checksums(net);
  const Split split = hold_out(pairs.size(), plan);

  // The attention side is frozen and runs in evaluation mode, so P_A is a
  // fixed function of each frame.
  std::vector<Tensor> inputs, priors;
  for (const LabeledFrame& f : pairs) {
    nn::Rng rng(0);
    inputs.push_back(to_tensor(f.image));
    priors.push_back(net.attention_forward(inputs.back(), false, rng));
  }

  LoopSpec loop;
  loop.n_train = split.train.size();
  loop.step = [&](std::size_t k, std::uint64_t, double scale) {
    const std::size_t index = split.train[k];
    const Tensor& pa = priors[index];
    const Tensor pu = net.seg_head_forward(net.unet_forward(inputs[index], pa));
    const ProbMap pa_map = to_probmap(pa), pu_map = to_probmap(pu);
    const StageLoss l = stage3_loss(fuse(pa_map, pu_map), pairs[index].mask, plan.weights);
    Tensor g(1, pu.h, pu.w);
    for (int i = 0; i < pu.h * pu.w; ++i) {
      const std::size_t s = static_cast<std::size_t>(i);
      const double raw = pa_map[s] + 2.0 * pu_map[s] - 1.0;
      g.data(0, i) = static_cast<Real>(fuse_grad(raw, l.grad[s]) * scale);
    }
    net.unet_backward(net.seg_head_backward(g), false);
    return l.total;
  };
  if (!split.validation.empty()) {
    loop.validate = [&]() -> std::optional<double> {
      std::vector<double> d;
      for (std::size_t i : split.validation) {
        const ProbMap pu = to_probmap(net.seg_head_forward(net.unet_forward(inputs[i], priors[i])));
        const ProbMap phac = fuse(to_probmap(priors[i]), pu);
        if (auto v = region_dice(phac, pairs[i].mask, pairs[i].image.fov(), plan.threshold)) d.push_back(*v);
      }
      return mean_of(d);
    };
  }
  TrainResult r = train_loop(net, plan, loop);
  r.manifest = manifest_base(net, plan, r, before);
  r.manifest["splits"] = {
      {"train", {{"count", split.train.size()}, {"hash", split_hash(names_of(pairs, split.train))}}},
      {"validation",
       {{"count", split.validation.size()},
        {"hash", split_hash(names_of(pairs, split.validation))},
        {"note", "held out from the training pairs (seeded) for early stopping"}}}};
  r.manifest["validation_metric"] = "dice(P_HAC, ground truth)";
  r.manifest["fusion_gradient"] = "2 inside (0,1); at a clamp only when the step points back inside";
  return r;
}

Evaluation evaluate(HacNet& net, const std::vector<LabeledFrame>& frames, double threshold) {
  Evaluation ev;
  for (const LabeledFrame& f : frames) {
    const auto m = net.forward(f.image);
    const BinaryMask& roi = f.image.fov();
    FrameMetrics hac = evaluate_frame(m.phac.threshold(threshold), f.mask, roi);
    FrameMetrics att = evaluate_frame(m.pa.threshold(threshold), f.mask, roi);
    FrameMetrics un = evaluate_frame(m.pu.threshold(threshold), f.mask, roi);
    hac.name = att.name = un.name = f.name;
    ev.hac.push_back(hac);
    ev.attention.push_back(att);
    ev.unet.push_back(un);
  }
  return ev;
}

}  // namespace hacseg
