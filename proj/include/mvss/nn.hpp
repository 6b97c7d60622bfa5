#pragma once

#include <string>
#include <vector>

#include "mvss/ops.hpp"
#include "mvss/rng.hpp"
#include "mvss/tensor.hpp"

namespace mvss::nn {

// Flat, order-stable enumeration of a model's parameters and non-trainable
// buffers (batch-norm running statistics). Pointers stay valid as long as the
// owning module does; registries are rebuilt on demand, never stored.
struct ParamRegistry {
  std::vector<NamedParam> params;
  std::vector<NamedBuffer> buffers;

  void add(std::string name, Parameter& p) {
    params.push_back({std::move(name), &p});
  }
  void add_buffer(std::string name, std::vector<double>& v) {
    buffers.push_back({std::move(name), &v});
  }
};

// Plain 2-D convolution layer. Weights use He-uniform initialization
// (bound sqrt(6 / fan_in)); biases start at zero.
class Conv2d {
 public:
  Conv2d(int in_c, int out_c, int ksize, int stride, int padding,
         bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Parameter weight;
  Parameter bias;  // holds an undefined tensor when constructed without bias
  bool has_bias;
  int stride;
  int padding;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, ops::Mode mode);
  void register_into(const std::string& prefix, ParamRegistry& reg);

  Parameter gamma;  // init 1
  Parameter beta;   // init 0
  ops::BatchNormState state;
};

}  // namespace mvss::nn
