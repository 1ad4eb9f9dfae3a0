#include "hacseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "hacseg/error.hpp"

namespace hacseg {

namespace {

void require_shape(const ProbMap& p, const BinaryMask& y) {
  if (!p.same_shape(y)) fail(ErrorKind::Data, "loss: probability map and target differ in shape");
}

// Limit used by overlap losses when the target has no foreground.
std::optional<LossValue> empty_target_limit(const ProbMap& p, const BinaryMask& y) {
  if (y.count() > 0) return std::nullopt;
  LossValue out;
  out.grad.assign(p.size(), 0.0);
  const auto v = p.values();
  out.value = std::any_of(v.begin(), v.end(), [](double x) { return x >= 0.5; }) ? 1.0 : 0.0;
  return out;
}

// Pooling that records, per output pixel, the input pixel it copied.
struct Pooled {
  std::vector<double> value;
  std::vector<std::uint32_t> source;
};

// Min over the vertical and horizontal 3-neighbourhoods (window clipped).
Pooled soft_erode(std::span<const double> x, int w, int h) {
  Pooled out{std::vector<double>(x.size()), std::vector<std::uint32_t>(x.size())};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint32_t best = static_cast<std::uint32_t>(r * w + c);
      auto consider = [&](int rr, int cc) {
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) return;
        const auto i = static_cast<std::uint32_t>(rr * w + cc);
        if (x[i] < x[best]) best = i;
      };
      consider(r - 1, c);
      consider(r + 1, c);
      consider(r, c - 1);
      consider(r, c + 1);
      out.value[r * w + c] = x[best];
      out.source[r * w + c] = best;
    }
  }
  return out;
}

// 3x3 max (window clipped).
Pooled soft_dilate(std::span<const double> x, int w, int h) {
  Pooled out{std::vector<double>(x.size()), std::vector<std::uint32_t>(x.size())};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint32_t best = static_cast<std::uint32_t>(r * w + c);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const auto i = static_cast<std::uint32_t>(rr * w + cc);
          if (x[i] > x[best]) best = i;
        }
      out.value[r * w + c] = x[best];
      out.source[r * w + c] = best;
    }
  }
  return out;
}

void scatter(const Pooled& pool, std::span<const double> grad_out, std::vector<double>& grad_in) {
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[pool.source[i]] += grad_out[i];
}

// Forward record of soft_skeleton for the reverse pass.
struct SkelTape {
  int w = 0, h = 0;
  struct Level {
    std::vector<double> x;        // x_j
    Pooled erode_in;              // x_j = erode(x_{j-1}), unused for j = 0
    Pooled open_erode, open_dilate;
    std::vector<double> delta;    // relu(x_j - open(x_j))
    std::vector<double> skel_prev;
  };
  std::vector<Level> levels;
  std::vector<double> skel;
};

SkelTape soft_skeleton_tape(std::span<const double> img, int w, int h, int iters) {
  SkelTape t;
  t.w = w;
  t.h = h;
  const std::size_t n = img.size();
  std::vector<double> x(img.begin(), img.end());
  t.skel.assign(n, 0.0);
  for (int j = 0; j <= iters; ++j) {
    SkelTape::Level lv;
    if (j > 0) {
      lv.erode_in = soft_erode(x, w, h);
      x = lv.erode_in.value;
    }
    lv.open_erode = soft_erode(x, w, h);
    lv.open_dilate = soft_dilate(lv.open_erode.value, w, h);
    lv.delta.resize(n);
    for (std::size_t i = 0; i < n; ++i) lv.delta[i] = std::max(0.0, x[i] - lv.open_dilate.value[i]);
    lv.skel_prev = t.skel;
    if (j == 0) {
      t.skel = lv.delta;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        t.skel[i] += std::max(0.0, lv.delta[i] - t.skel[i] * lv.delta[i]);
      }
    }
    lv.x = x;
    t.levels.push_back(std::move(lv));
  }
  return t;
}

// d(sum grad_skel * skel) / d img.
std::vector<double> soft_skeleton_backward(const SkelTape& t, std::span<const double> grad_skel) {
  const std::size_t n = grad_skel.size();
  std::vector<double> g_skel(grad_skel.begin(), grad_skel.end());
  std::vector<double> g_x(n, 0.0);  // gradient w.r.t. x_j flowing from level j+1
  for (int j = static_cast<int>(t.levels.size()) - 1; j >= 0; --j) {
    const auto& lv = t.levels[j];
    std::vector<double> g_delta(n, 0.0);
    if (j == 0) {
      g_delta = g_skel;
    } else {
      std::vector<double> g_prev(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double sp = lv.skel_prev[i];
        const double d = lv.delta[i];
        const bool active = d - sp * d > 0.0;
        g_delta[i] = active ? g_skel[i] * (1.0 - sp) : 0.0;
        g_prev[i] = g_skel[i] * (active ? 1.0 - d : 1.0);
      }
      g_skel = std::move(g_prev);
    }
    // delta = relu(x - dilate(erode(x)))
    std::vector<double> g_open(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (lv.x[i] - lv.open_dilate.value[i] > 0.0) {
        g_x[i] += g_delta[i];
        g_open[i] = -g_delta[i];
      }
    }
    std::vector<double> g_eroded(n, 0.0);
    scatter(lv.open_dilate, g_open, g_eroded);
    scatter(lv.open_erode, g_eroded, g_x);
    if (j > 0) {
      std::vector<double> g_in(n, 0.0);
      scatter(lv.erode_in, g_x, g_in);
      g_x = std::move(g_in);
    }
  }
  return g_x;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string("non-finite loss: ") + what);
}

}  // namespace

LossValue bce_loss(const ProbMap& p, const BinaryMask& y) {
  require_shape(p, y);
  const std::size_t n = p.size();
  LossValue out;
  out.grad.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], kProbEpsilon, 1.0 - kProbEpsilon);
    if (y.at(i)) {
      sum -= std::log(q);
      out.grad[i] = -1.0 / (q * static_cast<double>(n));
    } else {
      sum -= std::log(1.0 - q);
      out.grad[i] = 1.0 / ((1.0 - q) * static_cast<double>(n));
    }
  }
  out.value = sum / static_cast<double>(n);
  check_finite(out.value, "bce");
  return out;
}

LossValue dice_loss(const ProbMap& p, const BinaryMask& y) {
  require_shape(p, y);
  if (auto lim = empty_target_limit(p, y)) return *lim;
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    if (y.at(i)) {
      inter += p[i];
      sy += 1.0;
    }
  }
  const double den = sp + sy;
  LossValue out;
  out.value = 1.0 - 2.0 * inter / den;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double yi = y.at(i) ? 1.0 : 0.0;
    out.grad[i] = -2.0 * (yi * den - inter) / (den * den);
  }
  check_finite(out.value, "dice");
  return out;
}

LossValue tversky_loss(const ProbMap& p, const BinaryMask& y, double alpha, double beta) {
  require_shape(p, y);
  if (auto lim = empty_target_limit(p, y)) return *lim;
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y.at(i)) {
      tp += p[i];
      fn += 1.0 - p[i];
    } else {
      fp += p[i];
    }
  }
  const double den = tp + alpha * fp + beta * fn;
  LossValue out;
  out.value = 1.0 - tp / den;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool yi = y.at(i);
    const double d_tp = yi ? 1.0 : 0.0;
    const double d_den = yi ? 1.0 - beta : alpha;
    out.grad[i] = -(d_tp * den - tp * d_den) / (den * den);
  }
  check_finite(out.value, "tversky");
  return out;
}

std::vector<double> soft_skeleton(std::span<const double> img, int width, int height, int iters) {
  return soft_skeleton_tape(img, width, height, iters).skel;
}

LossValue soft_cldice_loss(const ProbMap& p, const BinaryMask& y, int iters) {
  require_shape(p, y);
  if (iters < 0) fail(ErrorKind::Config, "soft skeleton iterations must be >= 0");
  if (auto lim = empty_target_limit(p, y)) return *lim;
  const std::size_t n = p.size();
  const int w = p.width(), h = p.height();
  std::vector<double> yv(n);
  for (std::size_t i = 0; i < n; ++i) yv[i] = y.at(i) ? 1.0 : 0.0;

  const SkelTape tape = soft_skeleton_tape(p.values(), w, h, iters);
  const std::vector<double> skel_y = soft_skeleton(yv, w, h, iters);
  const auto& skel_p = tape.skel;

  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a += skel_p[i] * yv[i];
    b += skel_p[i];
    c += skel_y[i] * p[i];
    d += skel_y[i];
  }
  constexpr double smooth = 1.0;
  const double tprec = (a + smooth) / (b + smooth);
  const double tsens = (c + smooth) / (d + smooth);
  const double s = tprec + tsens;
  LossValue out;
  out.value = 1.0 - 2.0 * tprec * tsens / s;

  const double dl_dprec = -2.0 * tsens * tsens / (s * s);
  const double dl_dsens = -2.0 * tprec * tprec / (s * s);
  std::vector<double> g_skel(n);
  for (std::size_t i = 0; i < n; ++i) {
    g_skel[i] = dl_dprec * (yv[i] * (b + smooth) - (a + smooth)) / ((b + smooth) * (b + smooth));
  }
  out.grad = soft_skeleton_backward(tape, g_skel);
  for (std::size_t i = 0; i < n; ++i) out.grad[i] += dl_dsens * skel_y[i] / (d + smooth);
  check_finite(out.value, "cldice");
  return out;
}

LossWeights LossWeights::stage2() { return {}; }

LossWeights LossWeights::stage3() {
  LossWeights w;
  w.stage = 3;
  w.tversky = 2.0;
  w.cldice = 1.5;
  w.dice = 0.0;
  w.bce = 0.0;
  w.alpha = 0.1;
  w.beta = 0.9;
  return w;
}

void LossWeights::validate() const {
  for (const double v : {tversky, cldice, dice, bce, alpha, beta}) {
    if (!std::isfinite(v) || v < 0.0) fail(ErrorKind::Config, "loss weights must be finite and non-negative");
  }
  if (alpha > 1.0 || beta > 1.0) fail(ErrorKind::Config, "tversky alpha/beta must lie in [0,1]");
  if (std::abs(alpha + beta - 1.0) > 1e-9) fail(ErrorKind::Config, "tversky alpha + beta must equal 1");
  if (skeleton_iters < 0) fail(ErrorKind::Config, "skeleton iterations must be >= 0");
  if (stage == 3 && (dice != 0.0 || bce != 0.0)) {
    fail(ErrorKind::Config, "stage 3 loss has only tversky and cldice terms");
  }
  if (stage != 2 && stage != 3) fail(ErrorKind::Config, "loss weights must target stage 2 or 3");
}

StageLoss stage2_loss(const ProbMap& p, const BinaryMask& target, const LossWeights& w) {
  w.validate();
  if (w.stage != 2) fail(ErrorKind::Config, "stage2_loss given stage " + std::to_string(w.stage) + " weights");
  const LossValue bce = bce_loss(p, target);
  const LossValue dl = dice_loss(p, target);
  const LossValue cl = soft_cldice_loss(p, target, w.skeleton_iters);
  const LossValue tv = tversky_loss(p, target, w.alpha, w.beta);
  StageLoss out;
  out.terms = {{"bce", bce.value}, {"dice", dl.value}, {"cldice", cl.value}, {"tversky", tv.value}};
  out.total = w.bce * bce.value + w.dice * dl.value + w.cldice * cl.value + w.tversky * tv.value;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.grad[i] = w.bce * bce.grad[i] + w.dice * dl.grad[i] + w.cldice * cl.grad[i] + w.tversky * tv.grad[i];
  }
  return out;
}

StageLoss stage3_loss(const ProbMap& p, const BinaryMask& gt, const LossWeights& w) {
  w.validate();
  if (w.stage != 3) fail(ErrorKind::Config, "stage3_loss given stage " + std::to_string(w.stage) + " weights");
  const LossValue cl = soft_cldice_loss(p, gt, w.skeleton_iters);
  const LossValue tv = tversky_loss(p, gt, w.alpha, w.beta);
  StageLoss out;
  out.terms = {{"cldice", cl.value}, {"tversky", tv.value}};
  out.total = w.cldice * cl.value + w.tversky * tv.value;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out.grad[i] = w.cldice * cl.grad[i] + w.tversky * tv.grad[i];
  return out;
}

LossValue stage1_loss(const RasterImage& recon, const RasterImage& clean) {
  if (recon.width() != clean.width() || recon.height() != clean.height()) {
    fail(ErrorKind::Data, "stage 1: reconstruction and image differ in shape");
  }
  const BinaryMask& fov = clean.fov();
  const std::size_t count = fov.count() * 3;
  if (count == 0) fail(ErrorKind::Data, "stage 1: empty FOV");
  LossValue out;
  out.grad.assign(recon.data().size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < fov.size(); ++i) {
    if (!fov.at(i)) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = recon.data()[i * 3 + c] - clean.data()[i * 3 + c];
      sum += d * d;
      out.grad[i * 3 + c] = 2.0 * d / static_cast<double>(count);
    }
  }
  out.value = sum / static_cast<double>(count);
  check_finite(out.value, "stage1");
  return out;
}

}  // namespace hacseg
