#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hacseg/raster.hpp"

namespace hacseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; tn += o.tn; fp += o.fp; fn += o.fn;
    return *this;
  }
};

/// Pixel counts restricted to `roi`. Throws Error{Data} on shape mismatch.
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& roi);
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Empty when the denominator is zero.
std::optional<double> accuracy(const ConfusionCounts& c);
std::optional<double> precision(const ConfusionCounts& c);
std::optional<double> sensitivity(const ConfusionCounts& c);
std::optional<double> iou(const ConfusionCounts& c);
std::optional<double> dice(const ConfusionCounts& c);

/// Skeleton-based overlap; empty when either skeleton is empty.
std::optional<double> cl_dice(const BinaryMask& pred, const BinaryMask& gt);

struct FrameMetrics {
  std::string name;
  std::optional<double> accuracy, dice, iou, precision, recall, cl_dice;
};

FrameMetrics evaluate_frame(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& roi);

struct MetricsSummary {
  std::map<std::string, double> mean;
  std::map<std::string, std::size_t> count;  // frames where the metric is defined
};

/// Means over the frames where each metric is defined.
MetricsSummary summarize(const std::vector<FrameMetrics>& frames);

nlohmann::json to_json(const FrameMetrics& m);
nlohmann::json to_json(const std::vector<FrameMetrics>& frames, double threshold);

}  // namespace hacseg
