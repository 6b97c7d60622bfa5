#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mvss {

// Dense rank-4 layout (batch, channel, height, width), row-major.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched; same length as data once allocated
  bool requires_grad = false;
};
}  // namespace detail

// Handle with aliasing copy semantics: copies share the same storage, which
// is what the tape needs to route gradients back to the caller's buffers.
// Single-writer: a tensor (and any graph it participates in) must not be
// mutated from two threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from_vector(Shape s, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  // Marking a tensor as requiring grad allocates its gradient buffer, so a
  // parameter always has one even if no backward pass ever reaches it.
  Tensor& set_requires_grad(bool value);

  std::vector<double>& data();
  const std::vector<double>& data() const;
  // Allocates (zero-filled) on first access.
  std::vector<double>& grad();
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;
  std::int64_t index(int n, int c, int h, int w) const;

  // value of a single-element tensor
  double item() const;

  // deep copy of the values (fresh storage, no grad, requires_grad off)
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  void require_defined() const;
};

bool all_finite(const Tensor& t);

// Wengert list of backward steps, rebuilt each forward pass. Ops append a
// closure whenever recording is enabled and an input requires grad;
// backward() seeds d(out)=1 and replays the list in reverse. Thread-local,
// so independent model replicas can run on separate threads.
class Tape {
 public:
  using Step = std::function<void()>;

  void record(Step step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  // `output` must hold exactly one element. Gradients accumulate into every
  // requires_grad tensor the recorded ops touch; call zero_grad on leaves
  // (and clear()) between passes.
  void backward(Tensor output);

  static Tape& active();
  static bool recording_enabled();

  // Disables recording within a scope; forwards run as plain evaluation.
  class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
  };

 private:
  std::vector<Step> steps_;
};

// Trainable tensor plus its optimizer state.
struct Parameter {
  Tensor value;
  std::vector<double> momentum;  // sized on first optimizer step

  Parameter() = default;
  explicit Parameter(Tensor t) : value(std::move(t)) {
    value.set_requires_grad(true);
  }
};

struct NamedParam {
  std::string name;
  Parameter* param = nullptr;
};

// Non-trainable persistent state (batchnorm running stats) for checkpoints.
struct NamedBuffer {
  std::string name;
  std::vector<double>* values = nullptr;
};

}  // namespace mvss
