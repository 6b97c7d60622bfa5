#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mvss/layers.hpp"
#include "mvss/nn.hpp"
#include "mvss/ops.hpp"
#include "mvss/rng.hpp"
#include "mvss/tensor.hpp"

namespace mvss::net {

enum class HeadKind : std::uint32_t { Gmp = 0, Gem = 1, ConvGem = 2 };

HeadKind head_kind_from_string(const std::string& s);  // ConfigError otherwise
std::string head_kind_to_string(HeadKind kind);

struct ModelConfig {
  int k = 64;             // final backbone width; earlier stages k/4, k/2, k, k
  int edge_channels = 16; // width of the edge-feature pathway
  HeadKind head = HeadKind::ConvGem;
  layers::LambdaSchedule schedule{0.99, 2.0, 1};
  std::uint64_t seed = 1;
};

// Four conv stages at cumulative strides (4, 8, 16, 16); each stage is
// conv3x3(strided)-BN-ReLU followed by conv3x3-BN-ReLU.
class Backbone {
 public:
  Backbone(int k, Rng& rng);

  // returns all four stage outputs (strides 4, 8, 16, 16)
  std::vector<Tensor> forward(const Tensor& x, ops::Mode mode);
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  struct Stage {
    Stage(int in_c, int out_c, int stride, Rng& rng);
    Tensor forward(const Tensor& x, ops::Mode mode);
    void register_into(const std::string& prefix, nn::ParamRegistry& reg);

    nn::Conv2d conv1;  // strided, no bias
    nn::BatchNorm2d bn1;
    nn::Conv2d conv2;  // stride 1, no bias
    nn::BatchNorm2d bn2;
  };

  std::vector<Stage> stages;
  std::vector<int> widths;
};

// Edge-supervised branch: per-stage Sobel attention + ERB, shallow-to-deep
// accumulation at quarter resolution with combiner ERBs, a 1-channel head
// ERB + sigmoid for the edge map; the raw stage-4 features go to fusion.
class EsbBranch {
 public:
  EsbBranch(const ModelConfig& cfg, Rng& rng);

  struct Output {
    Tensor features;  // (n, k, H/16, W/16)
    Tensor edge;      // (n, 1, H/4, W/4), in (0,1)
  };
  Output forward(const Tensor& x, ops::Mode mode);
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  Backbone backbone;
  std::vector<layers::SobelLayer> sobels;  // one per stage
  std::vector<layers::Erb> erbs;           // stage width -> edge_channels
  std::vector<layers::Erb> combiners;      // 3, after accumulations 1..3
  layers::Erb head_erb;                    // edge_channels -> 1
};

// Noise-sensitive branch: constrained BayarConv then the backbone.
class NsbBranch {
 public:
  NsbBranch(const ModelConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& x, ops::Mode mode);  // (n, k, H/16, W/16)
  void register_into(const std::string& prefix, nn::ParamRegistry& reg);

  layers::BayarConvLayer bayar;  // 3 -> 3
  Backbone backbone;
};

struct Prediction {
  Tensor seg;    // (n, 1, H, W), in (0,1)
  Tensor edge;   // (n, 1, H/4, W/4), in (0,1)
  Tensor score;  // (n, 1, 1, 1), in (0,1)
};

class MvssModel {
 public:
  explicit MvssModel(const ModelConfig& cfg);

  MvssModel(const MvssModel&) = delete;
  MvssModel& operator=(const MvssModel&) = delete;

  // Full forward pass. `epoch` selects the ConvGeM lambda during training;
  // eval mode always uses the decayed endpoint (lambda = 0) so inference
  // does not depend on the training epoch count. Input must be (n,3,H,W)
  // with H, W divisible by 16 and values in [0, 1].
  Prediction predict(const Tensor& x, int epoch, ops::Mode mode);

  // fusion alone: concat -> dual attention -> upsample -> sigmoid
  struct Fused {
    Tensor s_prime;  // (n, 1, H/16, W/16), pre-sigmoid
    Tensor seg;      // (n, 1, H, W), in (0,1)
  };
  Fused fuse_and_segment(const Tensor& f_esb, const Tensor& f_nsb, int out_h,
                         int out_w);

  // score head on a segmentation map (dispatches on cfg.head)
  Tensor classify(const Tensor& seg, int epoch, ops::Mode mode);

  // stable, complete enumeration (every parameter exactly once)
  nn::ParamRegistry named_params();

  // post-optimizer-step maintenance: BayarConv projection + GeM p clamp
  void post_step();

  const ModelConfig& config() const { return cfg_; }

  EsbBranch esb;
  NsbBranch nsb;
  layers::DualAttention da;
  layers::GemHead gem_head;          // used when head == Gem
  layers::ConvGemHead convgem_head;  // used when head == ConvGem

 private:
  // Delegation target: one sequential rng stream builds every submodule in a
  // fixed order, so trunk initialization is identical across head choices.
  MvssModel(const ModelConfig& cfg, Rng rng);

  ModelConfig cfg_;
};

}  // namespace mvss::net
