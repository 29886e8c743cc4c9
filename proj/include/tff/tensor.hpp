#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tff {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// Dense row-major array of 64-bit scalars. Handles share the payload;
// the payload is treated as immutable once an op has consumed it, the
// grad buffer is written only by a backward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  int dim(int axis) const { return node_->shape[axis]; }

  const std::vector<double>& data() const { return node_->data; }
  // For initialization and finite-difference probes only; never mutate a
  // tensor that is already part of a live graph.
  std::vector<double>& mutable_data() { return node_->data; }
  double value() const;  // numel()==1
  double at(const std::vector<int>& idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { node_->grad.clear(); }

  // Copy that does not participate in any graph.
  Tensor detached() const;

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

// Reverse-mode tape. Ops are recorded in execution order, which is a
// topological order by construction; backward walks the list once in
// reverse. Ops whose output never received a gradient are skipped (their
// contribution is identically zero).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<detail::NodePtr> inputs, detail::NodePtr output,
              std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss)=1 and propagates; accumulates into leaf grads.
  void backward(const Tensor& loss);

  size_t size() const { return ops_.size(); }

  static Tape* active();

 private:
  struct Op {
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> backward_fn;
  };
  std::vector<Op> ops_;

  friend class TapeScope;
  friend class NoGradScope;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();

 private:
  Tape* prev_;
};

class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();

 private:
  Tape* prev_;
};

// True when a tape is active and any input requires grad; the op wrapper
// then records itself and marks its output as requiring grad.
bool grad_enabled(const std::vector<detail::NodePtr>& inputs);

}  // namespace tff
