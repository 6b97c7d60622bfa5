#pragma once

#include <string>

#include "mvss/nn.hpp"
#include "mvss/ops.hpp"
#include "mvss/rng.hpp"
#include "mvss/tensor.hpp"

namespace mvss::layers {

// fixed derivative kernels shared by every channel; never trained
extern const double kSobelGx[3][3];
extern const double kSobelGy[3][3];

// Sobel attention: per-channel gradient magnitude, batch-normalized,
// L2-normalized across channels at each pixel, squashed by a sigmoid and
// multiplied back onto the features. The Sobel kernels are fixed and never
// trained.
class SobelLayer {
 public:
  explicit SobelLayer(int channels);

  // returns F * A with A the attention map described above
  Tensor forward(const Tensor& f, ops::Mode mode);
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  nn::BatchNorm2d bn;
};

// Edge residual block: conv3x3 -> BN -> ReLU -> conv3x3, plus the input
// (through a 1x1 projection when the channel count changes). No output
// activation.
class Erb {
 public:
  Erb(int in_c, int out_c, Rng& rng);

  Tensor forward(const Tensor& x, ops::Mode mode);
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  nn::Conv2d conv1;  // in_c -> out_c, no bias (BN follows)
  nn::BatchNorm2d bn;
  nn::Conv2d conv2;  // out_c -> out_c, with bias
  bool has_proj;
  nn::Conv2d proj;   // 1x1 in_c -> out_c, no bias; identity path otherwise
};

// Constrained "prediction error" convolution: every 5x5 plane of every
// filter keeps its center at exactly -1 and its 24 remaining taps summing
// to 1, so spatially constant input produces an exactly zero response.
class BayarConvLayer {
 public:
  BayarConvLayer(int out_c, Rng& rng);

  // replicate-pads by 2 then convolves (stride 1), so the output keeps the
  // input's spatial size and the zero-response property holds up to the
  // borders. Verifies the constraints first (IntegrityError on violation).
  Tensor forward(const Tensor& x);

  // Rescales each plane's non-center taps to sum to 1 and pins the center
  // to -1. A plane whose non-center sum is degenerate (|sum| < 1e-8) is
  // redrawn from the init distribution and reprojected; a second degenerate
  // draw is an IntegrityError.
  void project();

  // max violation of either constraint, for monitoring
  double constraint_violation() const;
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  Parameter weight;  // (out_c, 3, 5, 5)

 private:
  Rng redraw_rng_;
  void check_constraints() const;
};

// Generalized-mean pooling head with a trainable exponent.
class GemHead {
 public:
  GemHead();

  // ( mean over h,w of S^p )^(1/p), per sample; S must be strictly positive
  Tensor forward(const Tensor& s) const;
  // applied after every optimizer step
  void clamp_p(double p_min = 0.1);
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  Parameter p;  // scalar, init 3.0
};

// Epoch-indexed decay for the ConvGeM skip connection:
// lambda(e) = lambda0 * (1 - (e/E)^gamma).
struct LambdaSchedule {
  double lambda0 = 0.99;
  double gamma = 2.0;
  int total_epochs = 0;
};

// lambda(0)=lambda0, lambda(E)=0, strictly decreasing with accelerating
// decay for gamma > 1. UsageError when E=0 or epoch is outside [0, E].
double lambda_at(const LambdaSchedule& schedule, int epoch);

// GeM augmented with a small conv stack over the score map and a decayed
// skip connection: C = lambda*GeM(S) + (1-lambda)*GeM(Conv(S)).
class ConvGemHead {
 public:
  ConvGemHead(LambdaSchedule schedule, Rng& rng);

  Tensor forward(const Tensor& s, int epoch) const;
  // the conv stack alone: conv3x3(1->8) -> ReLU -> conv3x3(8->1) -> sigmoid
  Tensor conv_block(const Tensor& s) const;
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  GemHead gem;
  nn::Conv2d conv1;
  nn::Conv2d conv2;
  LambdaSchedule schedule;
};

// global max pooling over h,w (the ablation baseline)
Tensor gmp_pool(const Tensor& s);

// Dual attention fusion: position attention (softmax over pairwise pixel
// affinities from reduced query/key projections) and channel attention
// (softmax over channel affinities of the raw features), each behind a
// zero-initialized scalar gate so the module starts as a pass-through; the
// branch sum goes through a 1x1 conv down to one channel.
class DualAttention {
 public:
  DualAttention(int channels, Rng& rng);

  // (n,c,h,w) -> (n,1,h,w)
  Tensor forward(const Tensor& f) const;
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  nn::Conv2d query;  // c -> max(1, c/8), 1x1, no bias
  nn::Conv2d key;    // c -> max(1, c/8), 1x1, no bias
  nn::Conv2d value;  // c -> c, 1x1, no bias
  Parameter gamma_pa;  // scalar gate, init 0
  Parameter gamma_ca;  // scalar gate, init 0
  nn::Conv2d out_conv;  // c -> 1, 1x1, with bias
  int channels;
};

}  // namespace mvss::layers
