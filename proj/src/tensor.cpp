#include "mvss/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mvss/error.hpp"

namespace mvss {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace {
void validate_shape(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw UsageError("every tensor extent must be positive, got " + s.str());
  }
}
}  // namespace

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  validate_shape(s);
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = s;
  t.impl_->data.assign(static_cast<std::size_t>(s.numel()), 0.0);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  for (double& v : t.data()) v = value;
  return t;
}

Tensor Tensor::from_vector(Shape s, std::vector<double> values,
                           bool requires_grad) {
  validate_shape(s);
  if (static_cast<std::int64_t>(values.size()) != s.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + s.str());
  }
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = s;
  t.impl_->data = std::move(values);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({1, 1, 1, 1}, {value}, requires_grad);
}

void Tensor::require_defined() const {
  if (!impl_) throw UsageError("operation on an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

Tensor& Tensor::set_requires_grad(bool value) {
  require_defined();
  impl_->requires_grad = value;
  if (value && impl_->grad.empty()) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  }
  return *this;
}

std::vector<double>& Tensor::data() {
  require_defined();
  return impl_->data;
}

const std::vector<double>& Tensor::data() const {
  require_defined();
  return impl_->data;
}

std::vector<double>& Tensor::grad() {
  require_defined();
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  require_defined();
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

std::int64_t Tensor::index(int n, int c, int h, int w) const {
  const Shape& s = shape();
  return ((static_cast<std::int64_t>(n) * s.c + c) * s.h + h) * s.w + w;
}

double& Tensor::at(int n, int c, int h, int w) {
  return data()[static_cast<std::size_t>(index(n, c, h, w))];
}

double Tensor::at(int n, int c, int h, int w) const {
  return data()[static_cast<std::size_t>(index(n, c, h, w))];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() on tensor of shape " + shape().str());
  }
  return data()[0];
}

Tensor Tensor::clone() const {
  require_defined();
  return from_vector(impl_->shape, impl_->data);
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {
thread_local bool g_recording_enabled = true;
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

bool Tape::recording_enabled() { return g_recording_enabled; }

Tape::NoGradGuard::NoGradGuard() : previous_(g_recording_enabled) {
  g_recording_enabled = false;
}

Tape::NoGradGuard::~NoGradGuard() { g_recording_enabled = previous_; }

void Tape::backward(Tensor output) {
  if (!output.defined() || output.numel() != 1) {
    throw UsageError("backward expects a scalar output");
  }
  output.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace mvss
