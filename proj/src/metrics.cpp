#include "hacseg/metrics.hpp"

#include "hacseg/error.hpp"
#include "hacseg/topology.hpp"

namespace hacseg {

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

void require_same(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::Data, std::string("dimension mismatch: ") + what);
}

using MetricField = std::optional<double> FrameMetrics::*;

const std::vector<std::pair<const char*, MetricField>>& metric_fields() {
  static const std::vector<std::pair<const char*, MetricField>> f = {
      {"accuracy", &FrameMetrics::accuracy}, {"dice", &FrameMetrics::dice},
      {"iou", &FrameMetrics::iou},           {"precision", &FrameMetrics::precision},
      {"recall", &FrameMetrics::recall},     {"cldice", &FrameMetrics::cl_dice},
  };
  return f;
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& roi) {
  require_same(pred, gt, "prediction vs ground truth");
  require_same(pred, roi, "prediction vs roi");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!roi.at(i)) continue;
    const bool p = pred.at(i);
    const bool g = gt.at(i);
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  return confusion(pred, gt, BinaryMask(pred.width(), pred.height(), true));
}

std::optional<double> accuracy(const ConfusionCounts& c) {
  return ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
}
std::optional<double> precision(const ConfusionCounts& c) {
  return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
}
std::optional<double> sensitivity(const ConfusionCounts& c) {
  return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
}
std::optional<double> iou(const ConfusionCounts& c) {
  return ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp + c.fn));
}
std::optional<double> dice(const ConfusionCounts& c) {
  return ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
}

std::optional<double> cl_dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same(pred, gt, "prediction vs ground truth");
  const BinaryMask sp = thin(pred);
  const BinaryMask sg = thin(gt);
  const std::size_t np = sp.count();
  const std::size_t ng = sg.count();
  if (np == 0 || ng == 0) return std::nullopt;
  std::size_t sp_in_gt = 0, sg_in_pred = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp.at(i) && gt.at(i)) ++sp_in_gt;
    if (sg.at(i) && pred.at(i)) ++sg_in_pred;
  }
  const double tprec = static_cast<double>(sp_in_gt) / static_cast<double>(np);
  const double tsens = static_cast<double>(sg_in_pred) / static_cast<double>(ng);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

FrameMetrics evaluate_frame(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& roi) {
  const ConfusionCounts c = confusion(pred, gt, roi);
  FrameMetrics m;
  m.accuracy = accuracy(c);
  m.dice = dice(c);
  m.iou = iou(c);
  m.precision = precision(c);
  m.recall = sensitivity(c);
  // Skeletons are taken of the ROI-restricted masks.
  BinaryMask p(pred.width(), pred.height()), g(gt.width(), gt.height());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p.set(i, pred.at(i) && roi.at(i));
    g.set(i, gt.at(i) && roi.at(i));
  }
  m.cl_dice = cl_dice(p, g);
  return m;
}

MetricsSummary summarize(const std::vector<FrameMetrics>& frames) {
  MetricsSummary s;
  for (const auto& [name, field] : metric_fields()) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : frames) {
      if (f.*field) {
        sum += *(f.*field);
        ++n;
      }
    }
    s.count[name] = n;
    if (n > 0) s.mean[name] = sum / static_cast<double>(n);
  }
  return s;
}

nlohmann::json to_json(const FrameMetrics& m) {
  nlohmann::json j;
  j["name"] = m.name;
  for (const auto& [name, field] : metric_fields()) {
    j[name] = (m.*field) ? nlohmann::json(*(m.*field)) : nlohmann::json(nullptr);
  }
  return j;
}

nlohmann::json to_json(const std::vector<FrameMetrics>& frames, double threshold) {
  const MetricsSummary s = summarize(frames);
  nlohmann::json j;
  j["threshold"] = threshold;
  j["per_frame"] = nlohmann::json::array();
  for (const auto& f : frames) j["per_frame"].push_back(to_json(f));
  nlohmann::json mean = nlohmann::json::object();
  for (const auto& [name, field] : metric_fields()) {
    const auto it = s.mean.find(name);
    mean[name] = it == s.mean.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
  }
  j["mean"] = mean;
  j["count"] = s.count;
  return j;
}

}  // namespace hacseg
