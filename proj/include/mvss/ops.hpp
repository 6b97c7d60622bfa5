#pragma once

#include <vector>

#include "mvss/tensor.hpp"

namespace mvss::ops {

// ---- elementwise unary -----------------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor ln(const Tensor& x);           // natural log; DomainError on x <= 0
Tensor sqrt_eps(const Tensor& x, double eps);  // sqrt(x + eps)
Tensor pow_scalar(const Tensor& x, double e);  // x^e; DomainError if x <= 0
Tensor scale(const Tensor& x, double k);       // k * x
Tensor add_scalar(const Tensor& x, double k);  // x + k
Tensor neg(const Tensor& x);
// Clamp to [lo, hi]; gradient is passed through inside the range and zero at
// clamped positions.
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- elementwise binary with channel broadcasting ---------------------------
//
// Shapes must match exactly, or the right operand may have extent 1 on any
// subset of axes where the left operand is larger (numpy-style broadcast of
// b up to a). Gradients reduce (sum) over broadcast axes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);     // DomainError on b == 0
// a^b elementwise; requires a > 0 (DomainError otherwise) so both partial
// derivatives are finite.
Tensor pow_elem(const Tensor& a, const Tensor& b);

// ---- structural ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape s);
Tensor transpose_hw(const Tensor& x);  // swap the last two axes
Tensor concat_channels(const std::vector<Tensor>& xs);
// Pads h/w by `pad` on every side, replicating the nearest edge pixel
// (clamp-to-edge). Constant planes stay constant, which zero padding cannot
// guarantee for downstream difference filters.
Tensor replicate_pad(const Tensor& x, int pad);

// ---- reductions ------------------------------------------------------------

enum class Reduce { Sum, Mean, Max };

struct Axes {
  bool n = false;
  bool c = false;
  bool h = false;
  bool w = false;
  static Axes all() { return {true, true, true, true}; }
  static Axes hw() { return {false, false, true, true}; }
};

// Reduces over the selected axes, keeping them with extent 1. Max routes the
// gradient to the first maximum in row-major order within each slice.
Tensor reduce(const Tensor& x, Reduce kind, Axes axes);

// Softmax over one axis (0=n, 1=c, 2=h, 3=w) with max subtraction.
Tensor softmax(const Tensor& x, int axis);

// ---- convolution and friends -------------------------------------------------

// Cross-correlation (no kernel flip). weight is (c_out, c_in, kh, kw); bias is
// (1, c_out, 1, 1) or undefined for none. Zero padding, square stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// Fixed-coefficient 3x3 depthwise cross-correlation at stride 1 with
// replicate (clamp-to-edge) padding, so difference kernels see no phantom
// step at the borders of constant regions. The kernel is shared by every
// channel and is not differentiated; only the input receives a gradient.
Tensor depthwise3x3(const Tensor& x, const double (&kernel)[3][3]);

// Batched matrix product: (n, c, r, k) x (n, c, k, s) -> (n, c, r, s).
Tensor matmul(const Tensor& a, const Tensor& b);

// Bilinear resize with align_corners=true semantics; exact identity when the
// output size equals the input size.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// ---- batch normalization -----------------------------------------------------

enum class Mode { Train, Eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch

  explicit BatchNormState(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), 0.0),
        running_var(static_cast<std::size_t>(channels), 1.0) {}
};

// Per-channel batch normalization. gamma/beta are (1, c, 1, 1). In Train mode
// batch statistics (biased variance) are used and the running estimates are
// updated; in Eval mode the running estimates are used. Training on a batch
// with fewer than two values per channel (n*h*w < 2) is a DomainError.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode);

}  // namespace mvss::ops
