#include "mvss/layers.hpp"

#include <cmath>
#include <string>

#include "mvss/error.hpp"

namespace mvss::layers {

const double kSobelGx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
const double kSobelGy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

namespace {

constexpr double kSobelEps = 1e-8;  // inside the magnitude square root
// Conditioning constant inside the cross-channel norm. With a vanishing
// floor the ratio b / ||b|| turns into a sign function around the all-zero
// state — batch norm drives every channel through zero simultaneously on
// constant inputs — with derivatives on the order of 1/sqrt(floor). 1e-2
// bounds the worst-case slope at 10 while shifting realistic norms (>= 1)
// by under one percent.
constexpr double kNormGuard = 1e-2;

}  // namespace

// ---- Sobel attention ---------------------------------------------------------

SobelLayer::SobelLayer(int channels) : bn(channels) {}

Tensor SobelLayer::forward(const Tensor& f, ops::Mode mode) {
  // Replicate padding keeps the filters well-defined below 3x3 too (deep
  // stages of small inputs produce 2x2 and 1x1 maps).
  Tensor gx = ops::depthwise3x3(f, kSobelGx);
  Tensor gy = ops::depthwise3x3(f, kSobelGy);
  Tensor mag =
      ops::sqrt_eps(ops::add(ops::mul(gx, gx), ops::mul(gy, gy)), kSobelEps);
  Tensor b = bn.forward(mag, mode);
  Tensor ssum =
      ops::reduce(ops::mul(b, b), ops::Reduce::Sum, {false, true, false, false});
  Tensor denom = ops::sqrt_eps(ssum, kNormGuard);
  Tensor attention = ops::sigmoid(ops::div(b, denom));
  return ops::mul(f, attention);
}

void SobelLayer::register_into(const std::string& prefix,
                               nn::ParamRegistry& reg) {
  bn.register_into(prefix + ".bn", reg);
}

// ---- Edge residual block -------------------------------------------------------

Erb::Erb(int in_c, int out_c, Rng& rng)
    : conv1(in_c, out_c, 3, 1, 1, /*with_bias=*/false, rng),
      bn(out_c),
      conv2(out_c, out_c, 3, 1, 1, /*with_bias=*/true, rng),
      has_proj(in_c != out_c),
      proj(in_c, has_proj ? out_c : in_c, 1, 1, 0, /*with_bias=*/false, rng) {}

Tensor Erb::forward(const Tensor& x, ops::Mode mode) {
  Tensor h = conv2.forward(ops::relu(bn.forward(conv1.forward(x), mode)));
  Tensor residual = has_proj ? proj.forward(x) : x;
  return ops::add(h, residual);
}

void Erb::register_into(const std::string& prefix, nn::ParamRegistry& reg) {
  conv1.register_into(prefix + ".conv1", reg);
  bn.register_into(prefix + ".bn", reg);
  conv2.register_into(prefix + ".conv2", reg);
  if (has_proj) proj.register_into(prefix + ".proj", reg);
}

// ---- BayarConv ---------------------------------------------------------------

BayarConvLayer::BayarConvLayer(int out_c, Rng& rng)
    : weight(Tensor::zeros({out_c, 3, 5, 5})),
      redraw_rng_(rng.next_u64()) {
  for (double& v : weight.value.data()) v = rng.uniform(-1.0, 1.0);
  project();
}

namespace {
constexpr int kBayarK = 5;
constexpr int kBayarCenter = kBayarK * kBayarK / 2;  // flat index 12
constexpr double kDegenerateSum = 1e-8;
constexpr double kSumTolerance = 1e-9;
}  // namespace

void BayarConvLayer::project() {
  auto& w = weight.value.data();
  const Shape s = weight.value.shape();
  const int planes = s.n * s.c;
  for (int p = 0; p < planes; ++p) {
    double* plane = w.data() + static_cast<std::int64_t>(p) * kBayarK * kBayarK;
    for (int attempt = 0; attempt < 2; ++attempt) {
      double sum = 0.0;
      for (int i = 0; i < kBayarK * kBayarK; ++i) {
        if (i != kBayarCenter) sum += plane[i];
      }
      if (std::fabs(sum) >= kDegenerateSum) {
        for (int i = 0; i < kBayarK * kBayarK; ++i) {
          if (i != kBayarCenter) plane[i] /= sum;
        }
        plane[kBayarCenter] = -1.0;
        break;
      }
      if (attempt == 1) {
        throw IntegrityError("bayar_project: filter plane degenerate twice");
      }
      for (int i = 0; i < kBayarK * kBayarK; ++i) {
        if (i != kBayarCenter) plane[i] = redraw_rng_.uniform(-1.0, 1.0);
      }
    }
  }
}

double BayarConvLayer::constraint_violation() const {
  const auto& w = weight.value.data();
  const Shape s = weight.value.shape();
  double worst = 0.0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* plane =
        w.data() + static_cast<std::int64_t>(p) * kBayarK * kBayarK;
    double sum = 0.0;
    for (int i = 0; i < kBayarK * kBayarK; ++i) {
      if (i != kBayarCenter) sum += plane[i];
    }
    worst = std::max(worst, std::fabs(plane[kBayarCenter] + 1.0));
    worst = std::max(worst, std::fabs(sum - 1.0));
  }
  return worst;
}

void BayarConvLayer::check_constraints() const {
  const auto& w = weight.value.data();
  const Shape s = weight.value.shape();
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* plane =
        w.data() + static_cast<std::int64_t>(p) * kBayarK * kBayarK;
    if (plane[kBayarCenter] != -1.0) {
      throw IntegrityError("bayar_forward: center tap is not -1");
    }
    double sum = 0.0;
    for (int i = 0; i < kBayarK * kBayarK; ++i) {
      if (i != kBayarCenter) sum += plane[i];
    }
    if (std::fabs(sum - 1.0) > kSumTolerance) {
      throw IntegrityError("bayar_forward: non-center taps sum to " +
                           std::to_string(sum));
    }
  }
}

Tensor BayarConvLayer::forward(const Tensor& x) {
  check_constraints();
  Tensor padded = ops::replicate_pad(x, 2);
  return ops::conv2d(padded, weight.value, Tensor{}, /*stride=*/1,
                     /*padding=*/0);
}

void BayarConvLayer::register_into(const std::string& prefix,
                                   nn::ParamRegistry& reg) {
  reg.add(prefix + ".weight", weight);
}

// ---- pooling heads --------------------------------------------------------------

namespace {
void require_score_map(const Tensor& s, const char* who) {
  if (s.shape().c != 1) {
    throw DimensionError(std::string(who) + " expects a 1-channel map, got " +
                         s.shape().str());
  }
}
}  // namespace

Tensor gmp_pool(const Tensor& s) {
  require_score_map(s, "gmp_pool");
  return ops::reduce(s, ops::Reduce::Max, ops::Axes::hw());
}

GemHead::GemHead() : p(Tensor::scalar(3.0)) {}

Tensor GemHead::forward(const Tensor& s) const {
  require_score_map(s, "gem_pool");
  for (double v : s.data()) {
    if (v <= 0.0) throw DomainError("gem_pool needs strictly positive inputs");
  }
  Tensor powered = ops::pow_elem(s, p.value);
  Tensor mean = ops::reduce(powered, ops::Reduce::Mean, ops::Axes::hw());
  Tensor inv_p = ops::pow_scalar(p.value, -1.0);
  return ops::pow_elem(mean, inv_p);
}

void GemHead::clamp_p(double p_min) {
  double& v = p.value.data()[0];
  if (v < p_min) v = p_min;
}

void GemHead::register_into(const std::string& prefix, nn::ParamRegistry& reg) {
  reg.add(prefix + ".p", p);
}

double lambda_at(const LambdaSchedule& schedule, int epoch) {
  if (schedule.total_epochs <= 0) {
    throw UsageError("lambda schedule needs total_epochs >= 1");
  }
  if (epoch < 0 || epoch > schedule.total_epochs) {
    throw UsageError("lambda_at epoch " + std::to_string(epoch) +
                     " outside [0, " + std::to_string(schedule.total_epochs) +
                     "]");
  }
  const double t =
      static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
  return schedule.lambda0 * (1.0 - std::pow(t, schedule.gamma));
}

ConvGemHead::ConvGemHead(LambdaSchedule schedule_in, Rng& rng)
    : gem(),
      conv1(1, 8, 3, 1, 1, /*with_bias=*/true, rng),
      conv2(8, 1, 3, 1, 1, /*with_bias=*/true, rng),
      schedule(schedule_in) {}

Tensor ConvGemHead::conv_block(const Tensor& s) const {
  return ops::sigmoid(conv2.forward(ops::relu(conv1.forward(s))));
}

Tensor ConvGemHead::forward(const Tensor& s, int epoch) const {
  const double lam = lambda_at(schedule, epoch);
  Tensor skip = gem.forward(s);
  Tensor conv_path = gem.forward(conv_block(s));
  return ops::add(ops::scale(skip, lam), ops::scale(conv_path, 1.0 - lam));
}

void ConvGemHead::register_into(const std::string& prefix,
                                nn::ParamRegistry& reg) {
  gem.register_into(prefix, reg);
  conv1.register_into(prefix + ".conv1", reg);
  conv2.register_into(prefix + ".conv2", reg);
}

// ---- dual attention --------------------------------------------------------------

DualAttention::DualAttention(int channels_in, Rng& rng)
    : query(channels_in, channels_in / 8 > 0 ? channels_in / 8 : 1, 1, 1, 0,
            /*with_bias=*/false, rng),
      key(channels_in, channels_in / 8 > 0 ? channels_in / 8 : 1, 1, 1, 0,
          /*with_bias=*/false, rng),
      value(channels_in, channels_in, 1, 1, 0, /*with_bias=*/false, rng),
      gamma_pa(Tensor::scalar(0.0)),
      gamma_ca(Tensor::scalar(0.0)),
      out_conv(channels_in, 1, 1, 1, 0, /*with_bias=*/true, rng),
      channels(channels_in) {}

Tensor DualAttention::forward(const Tensor& f) const {
  const Shape s = f.shape();
  if (s.c != channels) {
    throw DimensionError("dual_attention configured for " +
                         std::to_string(channels) + " channels, got " +
                         s.str());
  }
  const int hw = s.h * s.w;
  const int reduced = query.weight.value.shape().n;

  // Position attention: affinity between every pair of pixels, computed in
  // a reduced channel space, applied to the value projection.
  Tensor qm = ops::reshape(query.forward(f), {s.n, 1, reduced, hw});
  Tensor km = ops::reshape(key.forward(f), {s.n, 1, reduced, hw});
  Tensor energy = ops::matmul(ops::transpose_hw(qm), km);  // (n,1,hw,hw)
  Tensor attn = ops::softmax(energy, 3);
  Tensor vm = ops::reshape(value.forward(f), {s.n, 1, s.c, hw});
  Tensor pa = ops::matmul(vm, ops::transpose_hw(attn));
  Tensor pa_out = ops::add(ops::mul(ops::reshape(pa, s), gamma_pa.value), f);

  // Channel attention: affinities between raw feature channels.
  Tensor fm = ops::reshape(f, {s.n, 1, s.c, hw});
  Tensor cenergy = ops::matmul(fm, ops::transpose_hw(fm));  // (n,1,c,c)
  Tensor cattn = ops::softmax(cenergy, 3);
  Tensor ca = ops::matmul(cattn, fm);
  Tensor ca_out = ops::add(ops::mul(ops::reshape(ca, s), gamma_ca.value), f);

  return out_conv.forward(ops::add(pa_out, ca_out));
}

void DualAttention::register_into(const std::string& prefix,
                                  nn::ParamRegistry& reg) {
  query.register_into(prefix + ".query", reg);
  key.register_into(prefix + ".key", reg);
  value.register_into(prefix + ".value", reg);
  reg.add(prefix + ".gamma_pa", gamma_pa);
  reg.add(prefix + ".gamma_ca", gamma_ca);
  out_conv.register_into(prefix + ".out", reg);
}

}  // namespace mvss::layers
