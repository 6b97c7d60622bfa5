#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvss/network.hpp"
#include "mvss/synthdata.hpp"
#include "mvss/tensor.hpp"

namespace mvss::sup {

struct LossWeights {
  double alpha = 0.16;  // segmentation
  double beta = 0.04;   // classification; edge gets 1 - alpha - beta
  void validate() const;  // ConfigError unless 0<alpha, 0<beta, alpha+beta<1
};

struct Targets {
  Tensor pixel_mask;           // (n,1,H,W), 0/1
  Tensor edge_mask;            // (n,1,H/4,W/4), 0/1
  std::vector<double> labels;  // n entries, 0/1 (1 iff pixel_mask row nonempty)
};

// Per-sample soft dice with smoothing in both numerator and denominator
// (so an empty target against an empty prediction scores 0, not 0/0):
//   1 - (2*sum(S*Y) + eps) / (sum(S^2) + sum(Y^2) + eps), eps = 1e-6.
// Returns an (n,1,1,1) graph tensor.
Tensor dice_per_sample(const Tensor& s, const Tensor& y);
// batch mean of the above, as a scalar graph tensor
Tensor dice_loss(const Tensor& s, const Tensor& y);

// dice on the quarter-resolution edge pair; shapes must already match
// (callers downsample targets; a full-resolution target is a DimensionError)
Tensor edge_loss(const Tensor& edge_pred, const Tensor& edge_target);

// per-sample binary cross-entropy on scores clamped to [1e-7, 1-1e-7]
Tensor bce_per_sample(const Tensor& c, const std::vector<double>& labels);
Tensor bce_image_loss(const Tensor& c, const std::vector<double>& labels);

// The routing rule: manipulated samples (y=1) contribute
// alpha*seg + beta*clf + (1-alpha-beta)*edge; authentic samples contribute
// beta*clf only, so nothing reaches the seg/edge terms (their parameters see
// exactly zero gradient from such samples). Batch value is the mean.
struct CombinedLoss {
  Tensor total;          // scalar graph tensor (the optimized quantity)
  double seg_sum = 0.0;  // plain sums for reporting
  double edge_sum = 0.0;
  double clf_sum = 0.0;
  int manipulated = 0;
  int count = 0;
};
CombinedLoss combined_loss(const net::Prediction& pred, const Targets& targets,
                           const LossWeights& weights);

struct TrainConfig {
  LossWeights weights;
  int epochs = 60;
  int batch = 8;  // split half manipulated / half authentic
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  void validate() const;
};

// Momentum SGD over every registered parameter (v = m*v + g; w -= lr*v),
// then the model's post-step maintenance (BayarConv projection, GeM p
// clamp). A non-finite gradient aborts with the parameter's name.
void sgd_step(net::MvssModel& model, const TrainConfig& cfg);

struct EpochRow {
  int epoch = 0;
  double lambda = 0.0;
  double seg = 0.0;
  double edge = 0.0;
  double clf = 0.0;
  double total = 0.0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  double final_lambda = 0.0;  // schedule value at epoch E
  std::string to_table() const;
};

// called after each optimizer step (instrumentation/monitoring)
using StepHook = std::function<void(net::MvssModel&, int epoch, int step)>;

// Shuffled mini-batches with a 1:1 manipulated:authentic target mix; one
// pass over the manipulated samples per epoch, authentic samples cycled
// (reshuffled on wrap). Forward runs with the epoch's lambda; every step is
// backward + sgd_step. ConfigError if either class is absent.
TrainReport train(net::MvssModel& model,
                  const std::vector<synth::Sample>& data,
                  const TrainConfig& cfg, const StepHook& hook = {});

// stacks samples into batch tensors (images, masks, edges, labels)
struct Batch {
  Tensor images;
  Targets targets;
};
Batch make_batch(const std::vector<synth::Sample>& data,
                 const std::vector<int>& indices);

}  // namespace mvss::sup
