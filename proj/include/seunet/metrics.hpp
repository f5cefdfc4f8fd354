#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seunet/tensor.hpp"

namespace seunet {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const noexcept { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Per-image scores. A ratio whose numerator and denominator are both zero is 1.
struct ImageMetrics {
  double dice = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Both masks must hold only 0 and 1 and have equal shapes.
template <typename T>
ConfusionCounts confusion_counts(const Tensor<T>& pred, const Tensor<T>& truth);

ImageMetrics image_metrics(const ConfusionCounts& c);

/// 1 where p >= threshold, else 0.
template <typename T>
Tensor<T> binarize(const Tensor<T>& probabilities, double threshold = 0.5);

struct MetricReport {
  std::vector<std::string> ids;
  std::vector<ConfusionCounts> counts;
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;  // arithmetic means over images
  double threshold = 0.5;

  std::size_t image_count() const noexcept { return per_image.size(); }
};

/// Binarises each probability map, scores it against its mask and averages over images.
/// `ids` may be empty; otherwise it must have one entry per image.
template <typename T>
MetricReport dataset_metrics(const std::vector<Tensor<T>>& probabilities, const std::vector<Tensor<T>>& truths,
                             double threshold = 0.5, std::vector<std::string> ids = {});

/// Aligned table with one row per image and a final mean row.
std::string format_metric_table(const MetricReport& report);
/// "key=value" lines: images, threshold, mDC, mIoU, mPre, mRec.
std::string format_metric_keyvalues(const MetricReport& report);
/// Writes <stem>.txt (table) and <stem>.kv (key-value) into `dir`.
void write_metric_report(const MetricReport& report, const std::filesystem::path& dir, const std::string& stem);

}  // namespace seunet
