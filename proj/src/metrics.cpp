#include "seunet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seunet {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

template <typename T>
ConfusionCounts confusion_counts(const Tensor<T>& pred, const Tensor<T>& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("confusion_counts: prediction " + shape_to_string(pred.shape()) + " vs truth " +
                     shape_to_string(truth.shape()));
  }
  ConfusionCounts c;
  for (Index i = 0; i < pred.numel(); ++i) {
    const T p = pred[i];
    const T t = truth[i];
    if ((p != T(0) && p != T(1)) || (t != T(0) && t != T(1))) {
      throw std::invalid_argument("confusion_counts: masks must be binary (offset " + std::to_string(i) + ")");
    }
    if (p == T(1)) {
      (t == T(1) ? c.tp : c.fp) += 1;
    } else {
      (t == T(1) ? c.fn : c.tn) += 1;
    }
  }
  return c;
}

ImageMetrics image_metrics(const ConfusionCounts& c) {
  ImageMetrics m;
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  return m;
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& probabilities, double threshold) {
  Tensor<T> out(probabilities.shape());
  for (Index i = 0; i < out.numel(); ++i) out[i] = static_cast<double>(probabilities[i]) >= threshold ? T(1) : T(0);
  return out;
}

template <typename T>
MetricReport dataset_metrics(const std::vector<Tensor<T>>& probabilities, const std::vector<Tensor<T>>& truths,
                             double threshold, std::vector<std::string> ids) {
  if (probabilities.empty()) throw std::invalid_argument("dataset_metrics: no images");
  if (probabilities.size() != truths.size()) {
    throw std::invalid_argument("dataset_metrics: " + std::to_string(probabilities.size()) + " predictions but " +
                                std::to_string(truths.size()) + " masks");
  }
  if (!ids.empty() && ids.size() != probabilities.size()) {
    throw std::invalid_argument("dataset_metrics: id count does not match image count");
  }
  MetricReport report;
  report.threshold = threshold;
  double sums[4] = {0, 0, 0, 0};
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    const Tensor<T>& p = probabilities[t];
    for (Index i = 0; i < p.numel(); ++i) {
      if (!(p[i] >= T(0) && p[i] <= T(1))) {
        throw std::invalid_argument("dataset_metrics: prediction " + std::to_string(t) + " has a value outside [0, 1]");
      }
    }
    const ConfusionCounts c = confusion_counts(binarize(p, threshold), truths[t]);
    const ImageMetrics m = image_metrics(c);
    report.counts.push_back(c);
    report.per_image.push_back(m);
    report.ids.push_back(ids.empty() ? std::to_string(t) : ids[t]);
    sums[0] += m.dice;
    sums[1] += m.iou;
    sums[2] += m.precision;
    sums[3] += m.recall;
  }
  const double n = static_cast<double>(probabilities.size());
  report.mean = ImageMetrics{sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n};
  return report;
}

std::string format_metric_table(const MetricReport& report) {
  std::size_t width = 5;
  for (const auto& id : report.ids) width = std::max(width, id.size());
  std::ostringstream os;
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
  os << pad("image") << "  DC        IoU       Pre       Rec       TP  FP  FN  TN\n";
  for (std::size_t i = 0; i < report.per_image.size(); ++i) {
    const ImageMetrics& m = report.per_image[i];
    const ConfusionCounts& c = report.counts[i];
    os << pad(report.ids[i]) << "  " << fixed(m.dice) << "  " << fixed(m.iou) << "  " << fixed(m.precision) << "  "
       << fixed(m.recall) << "  " << c.tp << ' ' << c.fp << ' ' << c.fn << ' ' << c.tn << '\n';
  }
  os << pad("mean") << "  " << fixed(report.mean.dice) << "  " << fixed(report.mean.iou) << "  "
     << fixed(report.mean.precision) << "  " << fixed(report.mean.recall) << '\n';
  return os.str();
}

std::string format_metric_keyvalues(const MetricReport& report) {
  std::ostringstream os;
  os << "images=" << report.image_count() << '\n'
     << "threshold=" << fixed(report.threshold) << '\n'
     << "mDC=" << fixed(report.mean.dice) << '\n'
     << "mIoU=" << fixed(report.mean.iou) << '\n'
     << "mPre=" << fixed(report.mean.precision) << '\n'
     << "mRec=" << fixed(report.mean.recall) << '\n';
  return os.str();
}

void write_metric_report(const MetricReport& report, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const std::pair<std::string, std::string> files[] = {{".txt", format_metric_table(report)},
                                                       {".kv", format_metric_keyvalues(report)}};
  for (const auto& [ext, text] : files) {
    const auto path = dir / (stem + ext);
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write metric report '" + path.string() + "'");
  }
}

template ConfusionCounts confusion_counts(const Tensor<float>&, const Tensor<float>&);
template ConfusionCounts confusion_counts(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> binarize(const Tensor<float>&, double);
template Tensor<double> binarize(const Tensor<double>&, double);
template MetricReport dataset_metrics(const std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&, double,
                                      std::vector<std::string>);
template MetricReport dataset_metrics(const std::vector<Tensor<double>>&, const std::vector<Tensor<double>>&, double,
                                      std::vector<std::string>);

}  // namespace seunet
