#pragma once

#include <vector>

#include "evreg/tensor/ndarray.hpp"

namespace evreg {

/// Aggregate confusion matrix; rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  /// Labels outside [0, num_classes) in gt are ignored; out-of-range
  /// predictions throw.
  void add(const NdArray& pred, const NdArray& gt);

  std::size_t num_classes() const { return k_; }
  std::size_t total() const { return total_; }
  std::size_t at(std::size_t gt, std::size_t pred) const { return m_[gt * k_ + pred]; }

  /// Mean IoU over the classes present in gt, and pixel accuracy.
  /// Throws when nothing was counted.
  double miou() const;
  double accuracy() const;

 private:
  std::size_t k_;
  std::size_t total_ = 0;
  std::vector<std::size_t> m_;
};

struct SegmentationScore {
  double miou = 0.0;
  double accuracy = 0.0;
};

/// Scores paired masks through one aggregate confusion matrix.
SegmentationScore miou_accuracy(const std::vector<NdArray>& pred, const std::vector<NdArray>& gt,
                                std::size_t num_classes);
SegmentationScore miou_accuracy(const NdArray& pred, const NdArray& gt, std::size_t num_classes);

}  // namespace evreg
