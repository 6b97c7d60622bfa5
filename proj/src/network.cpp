#include "mvss/network.hpp"

#include <string>

#include "mvss/error.hpp"

namespace mvss::net {

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "gmp") return HeadKind::Gmp;
  if (s == "gem") return HeadKind::Gem;
  if (s == "convgem") return HeadKind::ConvGem;
  throw ConfigError("unknown head '" + s + "' (expected gmp|gem|convgem)");
}

std::string head_kind_to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Gmp: return "gmp";
    case HeadKind::Gem: return "gem";
    case HeadKind::ConvGem: return "convgem";
  }
  throw UsageError("invalid head kind value");
}

// ---- backbone ------------------------------------------------------------------

Backbone::Stage::Stage(int in_c, int out_c, int stride, Rng& rng)
    : conv1(in_c, out_c, 3, stride, 1, /*with_bias=*/false, rng),
      bn1(out_c),
      conv2(out_c, out_c, 3, 1, 1, /*with_bias=*/false, rng),
      bn2(out_c) {}

Tensor Backbone::Stage::forward(const Tensor& x, ops::Mode mode) {
  Tensor h = ops::relu(bn1.forward(conv1.forward(x), mode));
  return ops::relu(bn2.forward(conv2.forward(h), mode));
}

void Backbone::Stage::register_into(const std::string& prefix,
                                    nn::ParamRegistry& reg) {
  conv1.register_into(prefix + ".conv1", reg);
  bn1.register_into(prefix + ".bn1", reg);
  conv2.register_into(prefix + ".conv2", reg);
  bn2.register_into(prefix + ".bn2", reg);
}

Backbone::Backbone(int k, Rng& rng) {
  if (k < 4) throw ConfigError("backbone width k must be at least 4");
  widths = {k / 4 > 0 ? k / 4 : 1, k / 2 > 0 ? k / 2 : 1, k, k};
  const int strides[4] = {4, 2, 2, 1};
  int in_c = 3;
  stages.reserve(4);
  for (int i = 0; i < 4; ++i) {
    stages.emplace_back(in_c, widths[static_cast<std::size_t>(i)], strides[i],
                        rng);
    in_c = widths[static_cast<std::size_t>(i)];
  }
}

std::vector<Tensor> Backbone::forward(const Tensor& x, ops::Mode mode) {
  std::vector<Tensor> outs;
  outs.reserve(4);
  Tensor h = x;
  for (Stage& stage : stages) {
    h = stage.forward(h, mode);
    outs.push_back(h);
  }
  return outs;
}

void Backbone::register_into(const std::string& prefix,
                             nn::ParamRegistry& reg) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].register_into(prefix + ".s" + std::to_string(i + 1), reg);
  }
}

namespace {
void require_dims(const Tensor& x, const char* who) {
  const Shape s = x.shape();
  if (s.c != 3) {
    throw DimensionError(std::string(who) + " expects 3-channel input, got " +
                         s.str());
  }
  if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0) {
    throw DimensionError(std::string(who) + " needs H, W divisible by 16, got " +
                         s.str());
  }
}
}  // namespace

// ---- edge-supervised branch -------------------------------------------------------

EsbBranch::EsbBranch(const ModelConfig& cfg, Rng& rng)
    : backbone(cfg.k, rng),
      head_erb(cfg.edge_channels, 1, rng) {
  sobels.reserve(4);
  erbs.reserve(4);
  for (int i = 0; i < 4; ++i) {
    const int width = backbone.widths[static_cast<std::size_t>(i)];
    sobels.emplace_back(width);
    erbs.emplace_back(width, cfg.edge_channels, rng);
  }
  combiners.reserve(3);
  for (int i = 0; i < 3; ++i) {
    combiners.emplace_back(cfg.edge_channels, cfg.edge_channels, rng);
  }
}

EsbBranch::Output EsbBranch::forward(const Tensor& x, ops::Mode mode) {
  require_dims(x, "esb_forward");
  const Shape s = x.shape();
  const int h4 = s.h / 4, w4 = s.w / 4;

  std::vector<Tensor> stages = backbone.forward(x, mode);
  Tensor running;
  for (int i = 0; i < 4; ++i) {
    Tensor attended = sobels[static_cast<std::size_t>(i)].forward(
        stages[static_cast<std::size_t>(i)], mode);
    Tensor e = erbs[static_cast<std::size_t>(i)].forward(attended, mode);
    Tensor e4 = ops::bilinear_resize(e, h4, w4);
    running = running.defined() ? ops::add(running, e4) : e4;
    if (i < 3) {
      running = combiners[static_cast<std::size_t>(i)].forward(running, mode);
    }
  }
  Tensor edge = ops::sigmoid(head_erb.forward(running, mode));
  return {stages[3], edge};
}

void EsbBranch::register_into(const std::string& prefix,
                              nn::ParamRegistry& reg) {
  backbone.register_into(prefix + ".backbone", reg);
  for (std::size_t i = 0; i < sobels.size(); ++i) {
    sobels[i].register_into(prefix + ".sobel" + std::to_string(i + 1), reg);
  }
  for (std::size_t i = 0; i < erbs.size(); ++i) {
    erbs[i].register_into(prefix + ".erb" + std::to_string(i + 1), reg);
  }
  for (std::size_t i = 0; i < combiners.size(); ++i) {
    combiners[i].register_into(prefix + ".comb" + std::to_string(i + 1), reg);
  }
  head_erb.register_into(prefix + ".head_erb", reg);
}

// ---- noise-sensitive branch --------------------------------------------------------

NsbBranch::NsbBranch(const ModelConfig& cfg, Rng& rng)
    : bayar(3, rng), backbone(cfg.k, rng) {}

Tensor NsbBranch::forward(const Tensor& x, ops::Mode mode) {
  require_dims(x, "nsb_forward");
  Tensor noise = bayar.forward(x);
  return backbone.forward(noise, mode).back();
}

void NsbBranch::register_into(const std::string& prefix,
                              nn::ParamRegistry& reg) {
  bayar.register_into(prefix + ".bayar", reg);
  backbone.register_into(prefix + ".backbone", reg);
}

// ---- full model ----------------------------------------------------------------

MvssModel::MvssModel(const ModelConfig& cfg)
    : MvssModel(cfg, Rng(cfg.seed)) {}

MvssModel::MvssModel(const ModelConfig& cfg, Rng rng)
    : esb(cfg, rng),
      nsb(cfg, rng),
      da(2 * cfg.k, rng),
      gem_head(),
      convgem_head(cfg.schedule, rng),
      cfg_(cfg) {
  if (cfg.schedule.total_epochs <= 0) {
    throw ConfigError("model schedule needs total_epochs >= 1");
  }
}

MvssModel::Fused MvssModel::fuse_and_segment(const Tensor& f_esb,
                                             const Tensor& f_nsb, int out_h,
                                             int out_w) {
  const Shape a = f_esb.shape(), b = f_nsb.shape();
  if (!(a == b) || a.c != cfg_.k) {
    throw DimensionError("fuse_and_segment expects two (n," +
                         std::to_string(cfg_.k) + ",h,w) tensors, got " +
                         a.str() + " and " + b.str());
  }
  Tensor fused = ops::concat_channels({f_esb, f_nsb});
  Tensor s_prime = da.forward(fused);
  Tensor seg = ops::sigmoid(ops::bilinear_resize(s_prime, out_h, out_w));
  return {s_prime, seg};
}

Tensor MvssModel::classify(const Tensor& seg, int epoch, ops::Mode mode) {
  switch (cfg_.head) {
    case HeadKind::Gmp:
      return layers::gmp_pool(seg);
    case HeadKind::Gem:
      return gem_head.forward(seg);
    case HeadKind::ConvGem: {
      // eval always uses the decayed endpoint so inference is independent
      // of the training epoch count
      const int e = mode == ops::Mode::Eval ? cfg_.schedule.total_epochs : epoch;
      return convgem_head.forward(seg, e);
    }
  }
  throw UsageError("invalid head kind value");
}

Prediction MvssModel::predict(const Tensor& x, int epoch, ops::Mode mode) {
  require_dims(x, "predict");
  for (double v : x.data()) {
    if (v < 0.0 || v > 1.0) {
      throw DomainError("predict expects pixel values in [0,1]");
    }
  }
  const Shape s = x.shape();
  EsbBranch::Output esb_out = esb.forward(x, mode);
  Tensor nsb_features = nsb.forward(x, mode);
  Fused fused = fuse_and_segment(esb_out.features, nsb_features, s.h, s.w);
  Tensor score = classify(fused.seg, epoch, mode);
  return {fused.seg, esb_out.edge, score};
}

nn::ParamRegistry MvssModel::named_params() {
  nn::ParamRegistry reg;
  esb.register_into("esb", reg);
  nsb.register_into("nsb", reg);
  da.register_into("da", reg);
  switch (cfg_.head) {
    case HeadKind::Gmp:
      break;
    case HeadKind::Gem:
      gem_head.register_into("clf", reg);
      break;
    case HeadKind::ConvGem:
      convgem_head.register_into("clf", reg);
      break;
  }
  return reg;
}

void MvssModel::post_step() {
  nsb.bayar.project();
  switch (cfg_.head) {
    case HeadKind::Gmp:
      break;
    case HeadKind::Gem:
      gem_head.clamp_p();
      break;
    case HeadKind::ConvGem:
      convgem_head.gem.clamp_p();
      break;
  }
}

}  // namespace mvss::net
