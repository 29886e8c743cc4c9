#include "tff/tensor.hpp"

#include <sstream>

#include "tff/util.hpp"

namespace tff {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = std::make_shared<detail::TensorNode>();
  for (int d : shape) check_arg(d > 0, "tensor dims must be positive");
  n->shape = std::move(shape);
  n->data.assign(shape_numel(n->shape), value);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
  check_arg(shape_numel(shape) == static_cast<int64_t>(values.size()),
            "from_data: shape/value count mismatch");
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) {
  return from_data({1}, {value});
}

double Tensor::value() const {
  check_arg(numel() == 1, "value(): tensor is not a scalar");
  return node_->data[0];
}

double Tensor::at(const std::vector<int>& idx) const {
  check_arg(idx.size() == node_->shape.size(), "at(): rank mismatch");
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    check_arg(idx[i] >= 0 && idx[i] < node_->shape[i], "at(): index out of range");
    off = off * node_->shape[i] + idx[i];
  }
  return node_->data[off];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

Tensor Tensor::detached() const {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<detail::NodePtr> inputs, detail::NodePtr output,
                  std::function<void()> backward_fn) {
  ops_.push_back(Op{std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  check_arg(loss.numel() == 1, "backward: loss must be a scalar");
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no contribution to the loss
    it->backward_fn();
  }
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

bool grad_enabled(const std::vector<detail::NodePtr>& inputs) {
  if (g_active_tape == nullptr) return false;
  for (const auto& in : inputs)
    if (in->requires_grad) return true;
  return false;
}

}  // namespace tff
