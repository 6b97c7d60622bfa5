#include "mvss/supervision.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "mvss/error.hpp"
#include "mvss/ops.hpp"
#include "mvss/rng.hpp"

namespace mvss::sup {

namespace {
constexpr double kDiceEps = 1e-6;
constexpr double kBceClamp = 1e-7;

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(std::string(who) + ": prediction " + a.shape().str() +
                         " vs target " + b.shape().str());
  }
}
}  // namespace

void LossWeights::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 &&
        alpha + beta < 1.0)) {
    throw ConfigError("loss weights need alpha, beta in (0,1) with alpha+beta < 1");
  }
}

// ---- losses -------------------------------------------------------------------

Tensor dice_per_sample(const Tensor& s, const Tensor& y) {
  require_same_shape(s, y, "dice_loss");
  const ops::Axes chw{false, true, true, true};
  Tensor inter = ops::reduce(ops::mul(s, y), ops::Reduce::Sum, chw);
  Tensor s2 = ops::reduce(ops::mul(s, s), ops::Reduce::Sum, chw);
  Tensor y2 = ops::reduce(ops::mul(y, y), ops::Reduce::Sum, chw);
  Tensor numer = ops::add_scalar(ops::scale(inter, 2.0), kDiceEps);
  Tensor denom = ops::add_scalar(ops::add(s2, y2), kDiceEps);
  Tensor ones = Tensor::full(inter.shape(), 1.0);
  return ops::sub(ones, ops::div(numer, denom));
}

Tensor dice_loss(const Tensor& s, const Tensor& y) {
  return ops::reduce(dice_per_sample(s, y), ops::Reduce::Mean,
                     ops::Axes::all());
}

Tensor edge_loss(const Tensor& edge_pred, const Tensor& edge_target) {
  require_same_shape(edge_pred, edge_target, "edge_loss");
  return dice_loss(edge_pred, edge_target);
}

Tensor bce_per_sample(const Tensor& c, const std::vector<double>& labels) {
  const Shape s = c.shape();
  if (s.c != 1 || s.h != 1 || s.w != 1 ||
      static_cast<std::size_t>(s.n) != labels.size()) {
    throw DimensionError("bce_image_loss expects (n,1,1,1) scores and n labels");
  }
  std::vector<double> y = labels;
  Tensor yv = Tensor::from_vector(s, y);
  Tensor one_minus_y = Tensor::from_vector(s, [&] {
    std::vector<double> v(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) v[i] = 1.0 - y[i];
    return v;
  }());
  Tensor cc = ops::clamp(c, kBceClamp, 1.0 - kBceClamp);
  Tensor ones = Tensor::full(s, 1.0);
  Tensor term_pos = ops::mul(yv, ops::ln(cc));
  Tensor term_neg = ops::mul(one_minus_y, ops::ln(ops::sub(ones, cc)));
  return ops::neg(ops::add(term_pos, term_neg));
}

Tensor bce_image_loss(const Tensor& c, const std::vector<double>& labels) {
  return ops::reduce(bce_per_sample(c, labels), ops::Reduce::Mean,
                     ops::Axes::all());
}

CombinedLoss combined_loss(const net::Prediction& pred, const Targets& targets,
                           const LossWeights& weights) {
  weights.validate();
  const int n = pred.score.shape().n;
  if (static_cast<std::size_t>(n) != targets.labels.size()) {
    throw DimensionError("combined_loss: label count does not match batch");
  }
  const double edge_weight = 1.0 - weights.alpha - weights.beta;

  Tensor seg_vec = dice_per_sample(pred.seg, targets.pixel_mask);
  Tensor edge_vec = dice_per_sample(pred.edge, targets.edge_mask);
  Tensor clf_vec = bce_per_sample(pred.score, targets.labels);

  // Multiplying by the 0/1 label vector zeroes both the forward value and
  // the backward signal of the seg/edge terms for authentic samples, which
  // is exactly the routing rule.
  Tensor yv = Tensor::from_vector(clf_vec.shape(), targets.labels);
  Tensor per_sample = ops::add(
      ops::scale(clf_vec, weights.beta),
      ops::mul(yv, ops::add(ops::scale(seg_vec, weights.alpha),
                            ops::scale(edge_vec, edge_weight))));

  CombinedLoss out;
  out.total = ops::reduce(per_sample, ops::Reduce::Mean, ops::Axes::all());
  out.count = n;
  for (int i = 0; i < n; ++i) {
    out.clf_sum += clf_vec.data()[static_cast<std::size_t>(i)];
    if (targets.labels[static_cast<std::size_t>(i)] > 0.5) {
      out.seg_sum += seg_vec.data()[static_cast<std::size_t>(i)];
      out.edge_sum += edge_vec.data()[static_cast<std::size_t>(i)];
      ++out.manipulated;
    }
  }
  return out;
}

// ---- optimizer ------------------------------------------------------------------

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 2 || batch % 2 != 0) {
    throw ConfigError("batch must be even and >= 2 (1:1 class mixing)");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

void sgd_step(net::MvssModel& model, const TrainConfig& cfg) {
  nn::ParamRegistry reg = model.named_params();
  for (NamedParam& np : reg.params) {
    Parameter& p = *np.param;
    auto& values = p.value.data();
    auto& grad = p.value.grad();
    if (p.momentum.empty()) p.momentum.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw DomainError("non-finite gradient in parameter '" + np.name + "'");
      }
      p.momentum[i] = cfg.momentum * p.momentum[i] + grad[i];
      values[i] -= cfg.lr * p.momentum[i];
    }
  }
  model.post_step();
}

// ---- training loop -----------------------------------------------------------------

Batch make_batch(const std::vector<synth::Sample>& data,
                 const std::vector<int>& indices) {
  if (indices.empty()) throw UsageError("make_batch with no indices");
  const Shape img_s = data[0].image.shape();
  const Shape mask_s = data[0].pixel_mask.shape();
  const Shape edge_s = data[0].edge_mask.shape();
  const int n = static_cast<int>(indices.size());

  Batch b;
  b.images = Tensor::zeros({n, img_s.c, img_s.h, img_s.w});
  b.targets.pixel_mask = Tensor::zeros({n, 1, mask_s.h, mask_s.w});
  b.targets.edge_mask = Tensor::zeros({n, 1, edge_s.h, edge_s.w});
  b.targets.labels.resize(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const synth::Sample& s = data[static_cast<std::size_t>(indices[i])];
    if (!(s.image.shape() == img_s) || !(s.pixel_mask.shape() == mask_s) ||
        !(s.edge_mask.shape() == edge_s)) {
      throw DimensionError("make_batch: samples have differing shapes");
    }
    auto copy_into = [&](const Tensor& src, Tensor& dst) {
      const std::int64_t plane = src.numel();
      std::copy(src.data().begin(), src.data().end(),
                dst.data().begin() + static_cast<std::int64_t>(i) * plane);
    };
    copy_into(s.image, b.images);
    copy_into(s.pixel_mask, b.targets.pixel_mask);
    copy_into(s.edge_mask, b.targets.edge_mask);
    b.targets.labels[static_cast<std::size_t>(i)] = s.label;
  }
  return b;
}

TrainReport train(net::MvssModel& model,
                  const std::vector<synth::Sample>& data,
                  const TrainConfig& cfg, const StepHook& hook) {
  cfg.validate();

  std::vector<int> manip, auth;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data[i].label == 1 ? manip : auth).push_back(static_cast<int>(i));
  }
  if (manip.empty()) {
    throw ConfigError("training data has no manipulated samples");
  }
  if (auth.empty()) {
    throw ConfigError("training data has no authentic samples");
  }

  const layers::LambdaSchedule& schedule = model.config().schedule;
  if (schedule.total_epochs != cfg.epochs) {
    throw ConfigError("model schedule total_epochs (" +
                      std::to_string(schedule.total_epochs) +
                      ") must equal training epochs (" +
                      std::to_string(cfg.epochs) + ")");
  }

  Rng shuffle_rng(Rng::mix(cfg.seed, 0x7368756666ull));
  const int half = cfg.batch / 2;

  TrainReport report;
  std::size_t auth_cursor = 0;
  std::vector<int> auth_order = auth;
  shuffle(auth_order, shuffle_rng);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(manip, shuffle_rng);
    const double lam = layers::lambda_at(schedule, epoch);

    double seg_sum = 0.0, edge_sum = 0.0, clf_sum = 0.0, total_sum = 0.0;
    int seg_n = 0, clf_n = 0, steps = 0;

    for (std::size_t pos = 0; pos < manip.size(); pos += half) {
      std::vector<int> indices;
      const std::size_t take =
          std::min(static_cast<std::size_t>(half), manip.size() - pos);
      for (std::size_t j = 0; j < take; ++j) {
        indices.push_back(manip[pos + j]);
      }
      for (std::size_t j = 0; j < take; ++j) {
        if (auth_cursor == auth_order.size()) {
          shuffle(auth_order, shuffle_rng);
          auth_cursor = 0;
        }
        indices.push_back(auth_order[auth_cursor++]);
      }

      Batch batch = make_batch(data, indices);
      Tape& tape = Tape::active();
      tape.clear();

      net::Prediction pred =
          model.predict(batch.images, epoch, ops::Mode::Train);
      CombinedLoss loss = combined_loss(pred, batch.targets, cfg.weights);
      tape.backward(loss.total);

      sgd_step(model, cfg);
      if (hook) hook(model, epoch, steps);

      // gradients accumulate across backward calls, so leaves are cleared
      // after each step
      nn::ParamRegistry reg = model.named_params();
      for (NamedParam& np : reg.params) np.param->value.zero_grad();
      tape.clear();

      total_sum += loss.total.item();
      seg_sum += loss.seg_sum;
      edge_sum += loss.edge_sum;
      clf_sum += loss.clf_sum;
      seg_n += loss.manipulated;
      clf_n += loss.count;
      ++steps;
    }

    EpochRow row;
    row.epoch = epoch;
    row.lambda = lam;
    row.seg = seg_n > 0 ? seg_sum / seg_n : 0.0;
    row.edge = seg_n > 0 ? edge_sum / seg_n : 0.0;
    row.clf = clf_n > 0 ? clf_sum / clf_n : 0.0;
    row.total = steps > 0 ? total_sum / steps : 0.0;
    report.rows.push_back(row);
  }

  report.final_lambda = layers::lambda_at(schedule, cfg.epochs);
  return report;
}

std::string TrainReport::to_table() const {
  std::ostringstream os;
  os << "epoch lambda loss_seg loss_edg loss_clf total\n";
  os << std::fixed << std::setprecision(6);
  for (const EpochRow& r : rows) {
    os << r.epoch << " " << r.lambda << " " << r.seg << " " << r.edge << " "
       << r.clf << " " << r.total << "\n";
  }
  os << "final_lambda " << final_lambda << "\n";
  return os.str();
}

}  // namespace mvss::sup
