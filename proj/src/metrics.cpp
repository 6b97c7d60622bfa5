#include "mvss/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mvss/error.hpp"

namespace mvss::metrics {

double auc_midrank(const std::vector<double>& scores,
                   const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw UsageError("auc needs matching, nonempty score/label lists");
  }
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw UsageError("auc labels must be 0/1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UsageError("auc undefined for a single-class label list");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // midranks: tied scores share the average of the ranks they occupy
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]]) {
      ++j;
    }
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += midrank;
    }
    i = j + 1;
  }

  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricReport compute_metrics(const std::vector<Tensor>& seg_preds,
                             const std::vector<Tensor>& masks,
                             const std::vector<double>& scores,
                             const std::vector<int>& labels,
                             double threshold) {
  if (seg_preds.empty() || seg_preds.size() != masks.size() ||
      seg_preds.size() != scores.size() || seg_preds.size() != labels.size()) {
    throw UsageError("compute_metrics needs aligned, nonempty inputs");
  }

  MetricReport r;
  int correct = 0, true_neg = 0;
  for (std::size_t s = 0; s < seg_preds.size(); ++s) {
    const bool manipulated = labels[s] == 1;
    if (manipulated) {
      ++r.n_manipulated;
    } else {
      ++r.n_authentic;
    }

    const bool predicted_pos = scores[s] >= threshold;
    if (predicted_pos == manipulated) ++correct;
    if (!manipulated && !predicted_pos) ++true_neg;

    if (manipulated) {
      const Tensor& pred = seg_preds[s];
      const Tensor& mask = masks[s];
      if (!(pred.shape() == mask.shape())) {
        throw DimensionError("compute_metrics: prediction " +
                             pred.shape().str() + " vs mask " +
                             mask.shape().str());
      }
      const auto& pv = pred.data();
      const auto& mv = mask.data();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const bool p = pv[i] >= threshold;
        const bool t = mv[i] > 0.5;
        if (p && t) ++r.tp;
        else if (p && !t) ++r.fp;
        else if (!p && t) ++r.fn;
      }
    }
  }

  const double precision =
      r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  const double recall =
      r.tp + r.fn > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.pixel_precision = precision;
  r.pixel_recall = recall;
  r.pixel_f1 = precision + recall > 0.0
                   ? 2.0 * precision * recall / (precision + recall)
                   : 0.0;

  r.image_accuracy = static_cast<double>(correct) / seg_preds.size();
  r.specificity =
      r.n_authentic > 0 ? static_cast<double>(true_neg) / r.n_authentic : 0.0;
  r.image_auc =
      (r.n_manipulated > 0 && r.n_authentic > 0) ? auc_midrank(scores, labels)
                                                 : 0.0;
  return r;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "pixel_f1 " << pixel_f1 << "\n";
  os << "pixel_precision " << pixel_precision << "\n";
  os << "pixel_recall " << pixel_recall << "\n";
  os << "pixel_tp " << tp << "\n";
  os << "pixel_fp " << fp << "\n";
  os << "pixel_fn " << fn << "\n";
  os << "image_auc " << image_auc << "\n";
  os << "image_accuracy " << image_accuracy << "\n";
  os << "specificity " << specificity << "\n";
  os << "n_manipulated " << n_manipulated << "\n";
  os << "n_authentic " << n_authentic << "\n";
  return os.str();
}

}  // namespace mvss::metrics
