#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "hacseg/raster.hpp"

namespace hacseg {

inline constexpr double kProbEpsilon = 1e-6;

/// Loss value and its gradient with respect to every input value.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

// All soft losses take probabilities p and a binary target y of equal shape
// (Error{Data} otherwise). When y has no foreground, Dice, Tversky and
// clDice use the limit: loss 1 if any p >= 0.5, else 0, with zero gradient.

/// Mean binary cross-entropy, p clamped to [eps, 1-eps].
LossValue bce_loss(const ProbMap& p, const BinaryMask& y);
/// 1 - 2 sum(py) / (sum p + sum y).
LossValue dice_loss(const ProbMap& p, const BinaryMask& y);
/// 1 - TP / (TP + alpha FP + beta FN) with soft counts.
LossValue tversky_loss(const ProbMap& p, const BinaryMask& y, double alpha, double beta);

/// Iterative min/max-pooling soft skeleton (cross min-pool erosion, 3x3
/// max-pool dilation).
std::vector<double> soft_skeleton(std::span<const double> img, int width, int height, int iters);

/// 1 - soft clDice with smoothing 1 on both topology ratios.
LossValue soft_cldice_loss(const ProbMap& p, const BinaryMask& y, int iters = 10);

struct LossWeights {
  int stage = 2;
  double tversky = 1.5;
  double cldice = 0.4;
  double dice = 0.2;
  double bce = 1.0;
  double alpha = 0.2;
  double beta = 0.8;
  int skeleton_iters = 10;

  static LossWeights stage2();
  static LossWeights stage3();

  /// Throws Error{Config} for negative/non-finite weights, alpha/beta outside
  /// [0,1] or not summing to 1, and terms outside the stage's schema.
  void validate() const;
};

struct StageLoss {
  double total = 0.0;
  std::map<std::string, double> terms;  // unweighted component values
  std::vector<double> grad;
};

/// BCE + w_D Dice + w_cl clDice + w_T Tversky.
StageLoss stage2_loss(const ProbMap& p_attention, const BinaryMask& target, const LossWeights& w);
/// w_cl clDice + w_T Tversky.
StageLoss stage3_loss(const ProbMap& p_hac, const BinaryMask& gt, const LossWeights& w);
/// Mean squared error over FOV pixels of `clean` (all three channels);
/// gradient is with respect to the reconstruction's interleaved RGB values.
LossValue stage1_loss(const RasterImage& recon, const RasterImage& clean);

}  // namespace hacseg
