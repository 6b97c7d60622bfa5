#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvss/tensor.hpp"

namespace mvss::metrics {

struct MetricReport {
  // micro pixel metrics at the binarization threshold, over manipulated
  // images only (authentic images have no positive pixels to score)
  double pixel_f1 = 0.0;
  double pixel_precision = 0.0;
  double pixel_recall = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;

  // image-level metrics over all samples
  double image_auc = 0.0;
  double image_accuracy = 0.0;
  double specificity = 0.0;  // authentic correctly passed at the threshold
  int n_manipulated = 0;
  int n_authentic = 0;

  std::string to_text() const;
};

// Mann-Whitney AUC with midrank tie handling. UsageError when the lists are
// empty, mismatched, or single-class (the statistic is undefined then).
double auc_midrank(const std::vector<double>& scores,
                   const std::vector<int>& labels);

// seg_preds/masks are (1,1,H,W) per sample and aligned with scores/labels.
MetricReport compute_metrics(const std::vector<Tensor>& seg_preds,
                             const std::vector<Tensor>& masks,
                             const std::vector<double>& scores,
                             const std::vector<int>& labels,
                             double threshold = 0.5);

}  // namespace mvss::metrics
