#include "evreg/analysis/metrics.hpp"

#include <cmath>

namespace evreg {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), m_(num_classes * num_classes, 0) {
  if (num_classes < 1) throw Error("confusion matrix: need at least one class");
}

void ConfusionMatrix::add(const NdArray& pred, const NdArray& gt) {
  if (pred.shape() != gt.shape()) {
    throw Error("miou_accuracy: prediction " + shape_str(pred.shape()) + " and ground truth " +
                shape_str(gt.shape()) + " differ");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i], p = pred[i];
    if (!(g >= 0.0) || g >= static_cast<double>(k_) || g != std::floor(g)) continue;
    if (!(p >= 0.0) || p >= static_cast<double>(k_) || p != std::floor(p)) {
      throw Error("miou_accuracy: predicted label " + std::to_string(p) + " out of range");
    }
    ++m_[static_cast<std::size_t>(g) * k_ + static_cast<std::size_t>(p)];
    ++total_;
  }
}

double ConfusionMatrix::miou() const {
  if (total_ == 0) throw Error("miou_accuracy: empty input");
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    if (row == 0) continue;
    const std::size_t tp = at(c, c);
    sum += static_cast<double>(tp) / static_cast<double>(row + col - tp);
    ++present;
  }
  return sum / static_cast<double>(present);
}

double ConfusionMatrix::accuracy() const {
  if (total_ == 0) throw Error("miou_accuracy: empty input");
  std::size_t tp = 0;
  for (std::size_t c = 0; c < k_; ++c) tp += at(c, c);
  return static_cast<double>(tp) / static_cast<double>(total_);
}

SegmentationScore miou_accuracy(const std::vector<NdArray>& pred, const std::vector<NdArray>& gt,
                                std::size_t num_classes) {
  if (pred.size() != gt.size()) throw Error("miou_accuracy: different numbers of masks");
  if (pred.empty()) throw Error("miou_accuracy: empty input");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) cm.add(pred[i], gt[i]);
  return {cm.miou(), cm.accuracy()};
}

SegmentationScore miou_accuracy(const NdArray& pred, const NdArray& gt, std::size_t num_classes) {
  return miou_accuracy(std::vector<NdArray>{pred}, std::vector<NdArray>{gt}, num_classes);
}

}  // namespace evreg
