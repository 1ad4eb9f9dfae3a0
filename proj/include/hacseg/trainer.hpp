#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hacseg/augment.hpp"
#include "hacseg/hacnet.hpp"
#include "hacseg/losses.hpp"
#include "hacseg/manifest.hpp"
#include "hacseg/metrics.hpp"
#include "hacseg/raster.hpp"

namespace hacseg {

struct LabeledFrame {
  std::string name;
  RasterImage image;
  BinaryMask mask;
};

// ---- data ----

struct SyntheticOptions {
  int min_levels = 2;  // bifurcation levels per tree
  int max_levels = 3;
  double root_width_min = 3.0;
  double root_width_max = 4.0;
  double min_width = 1.5;
};

/// Procedural vessel trees (cubic Bezier branches) over textured, vignetted
/// tissue. Masks are exact by construction; frame i depends only on
/// derive_seed(seed, i).
std::vector<LabeledFrame> make_synthetic_dataset(int n, int size, std::uint64_t seed,
                                                 const SyntheticOptions& opt = {});

struct SplitManifest {
  std::vector<std::filesystem::path> unlabeled;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> test;

  /// Disjointness by path; counts checked when given.
  void validate(std::optional<std::size_t> n_unlabeled = {}, std::optional<std::size_t> n_train = {},
                std::optional<std::size_t> n_test = {}) const;
  nlohmann::json to_json() const;
};

/// Seeded shuffle of labeled entries into train/test.
SplitManifest make_split(std::vector<ManifestEntry> labeled, std::vector<std::filesystem::path> unlabeled,
                         std::size_t n_test, std::uint64_t seed);

/// Order-independent FNV-1a digest of the entry paths (run-manifest echo).
std::string split_hash(const std::vector<std::string>& names);

std::vector<LabeledFrame> load_labeled(const std::vector<ManifestEntry>& entries);

// ---- optimisation ----

struct TrainPlan {
  int stage = 1;
  int epochs = 100;
  double warmup_epochs = 10.0;
  double base_lr = 1e-4;
  int batch_size = 1;  // >1 accumulates gradients
  LossWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  int patience = 50;
  int validation_frames = 5;
  double min_path = 100.0;  // stage-2 target pruning
  double threshold = 0.5;
  std::optional<long> max_iterations;
  std::uint64_t seed = 42;
  /// Overrides the stage's trainable set when set (frozen params never move).
  std::function<bool(const nn::Param&)> trainable;

  static TrainPlan defaults(int stage);
  bool is_trainable(const nn::Param& p) const;
  void validate() const;
  nlohmann::json to_json() const;
};

/// Linear warmup 0 -> base over [0, warmup), cosine base -> 0 afterwards.
double learning_rate(const TrainPlan& plan, double epoch);

class AdamW {
 public:
  explicit AdamW(const TrainPlan& plan) : plan_(plan) {}
  /// Decoupled weight decay on `decay` parameters; gradients are consumed.
  void step(nn::ParamStore& ps, const std::function<bool(const nn::Param&)>& trainable, double lr);
  long steps() const { return t_; }

 private:
  const TrainPlan& plan_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> validation;  // Dice (stages 2-3) or MSE (stage 1)
  double lr = 0.0;
};

struct TrainResult {
  std::vector<double> losses;  // per iteration
  std::vector<EpochRecord> epochs;
  long iterations = 0;
  bool diverged = false;
  bool early_stopped = false;
  int best_epoch = -1;
  nlohmann::json manifest;
};

/// Stage 1: reconstruct clean frames from corrupted ones through the whole
/// network and the temporary reconstruction head.
TrainResult run_stage1(HacNet& net, const TrainPlan& plan, const std::vector<RasterImage>& frames,
                       const CorruptionSpec& spec);

/// Stage 2: attention backbone + prior decoder on pruned targets; the U-Net
/// never runs.
TrainResult run_stage2(HacNet& net, const TrainPlan& plan, const std::vector<LabeledFrame>& pairs);

/// Stage 3: U-Net on the fused map with the attention side frozen.
TrainResult run_stage3(HacNet& net, const TrainPlan& plan, const std::vector<LabeledFrame>& pairs);

struct Evaluation {
  std::vector<FrameMetrics> hac, attention, unet;
};

/// Thresholded metrics of P_HAC, P_A and P_U against the ground truth over
/// each frame's FOV.
Evaluation evaluate(HacNet& net, const std::vector<LabeledFrame>& frames, double threshold = 0.5);

}  // namespace hacseg
