#include "mvss/nn.hpp"

#include <cmath>

#include "mvss/error.hpp"

namespace mvss::nn {

namespace {

Tensor he_uniform(int out_c, int in_c, int ksize, Rng& rng) {
  const Shape s{out_c, in_c, ksize, ksize};
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * ksize * ksize));
  Tensor w = Tensor::zeros(s);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int ksize, int stride, int padding,
               bool with_bias, Rng& rng)
    : weight(he_uniform(out_c, in_c, ksize, rng)),
      bias(with_bias ? Parameter(Tensor::zeros({1, out_c, 1, 1}))
                     : Parameter()),
      has_bias(with_bias),
      stride(stride),
      padding(padding) {}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight.value, has_bias ? bias.value : Tensor{}, stride,
                     padding);
}

void Conv2d::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add(prefix + ".weight", weight);
  if (has_bias) reg.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(Tensor::full({1, channels, 1, 1}, 1.0)),
      beta(Tensor::zeros({1, channels, 1, 1})),
      state(channels) {}

Tensor BatchNorm2d::forward(const Tensor& x, ops::Mode mode) {
  return ops::batchnorm2d(x, gamma.value, beta.value, state, mode);
}

void BatchNorm2d::register_into(const std::string& prefix, ParamRegistry& reg) {
  reg.add(prefix + ".gamma", gamma);
  reg.add(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", state.running_mean);
  reg.add_buffer(prefix + ".running_var", state.running_var);
}

}  // namespace mvss::nn
