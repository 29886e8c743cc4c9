#include "tff/ops.hpp"

#include <algorithm>
#include <cmath>

#include "tff/kernels.hpp"

namespace tff {

namespace {

using detail::NodePtr;

void record_if_needed(const std::vector<NodePtr>& inputs, Tensor& out,
                      std::function<void()> backward_fn) {
  if (!grad_enabled(inputs)) return;
  out.set_requires_grad(true);
  Tape::active()->record(inputs, out.node(), std::move(backward_fn));
}

enum class Bcast { same, a_scalar, b_scalar, a_channel, b_channel };

Bcast binary_mode(const Tensor& a, const Tensor& b, bool allow_channel) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (a.numel() == 1) return Bcast::a_scalar;
  if (b.numel() == 1) return Bcast::b_scalar;
  if (allow_channel && a.shape().size() == 3 && b.shape().size() == 3 &&
      a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2)) {
    if (a.dim(0) == 1 && b.dim(0) > 1) return Bcast::a_channel;
    if (b.dim(0) == 1 && a.dim(0) > 1) return Bcast::b_channel;
  }
  check_arg(false, "incompatible shapes " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  return Bcast::same;
}

// Maps an output index to the operand's index under the broadcast mode.
struct BinaryIndex {
  Bcast mode;
  int64_t plane;  // h*w for channel broadcast
  int64_t a_index(int64_t i) const {
    if (mode == Bcast::a_scalar) return 0;
    if (mode == Bcast::a_channel) return i % plane;
    return i;
  }
  int64_t b_index(int64_t i) const {
    if (mode == Bcast::b_scalar) return 0;
    if (mode == Bcast::b_channel) return i % plane;
    return i;
  }
};

Tensor binary_op(const Tensor& a, const Tensor& b, bool allow_channel,
                 double (*f)(double, double), double (*dfa)(double, double),
                 double (*dfb)(double, double)) {
  const Bcast mode = binary_mode(a, b, allow_channel);
  const Shape& out_shape =
      (mode == Bcast::a_scalar || mode == Bcast::a_channel) ? b.shape() : a.shape();
  BinaryIndex ix{mode, 0};
  if (mode == Bcast::a_channel || mode == Bcast::b_channel)
    ix.plane = (int64_t)out_shape[1] * out_shape[2];
  const int64_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[ix.a_index(i)], bv[ix.b_index(i)]);
  Tensor y = Tensor::from_data(out_shape, std::move(out));
  auto an = a.node(), bn = b.node(), yn = y.node();
  record_if_needed({an, bn}, y, [an, bn, yn, ix, n, dfa, dfb]() {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const int64_t ai = ix.a_index(i);
        an->grad[ai] += yn->grad[i] * dfa(an->data[ai], bn->data[ix.b_index(i)]);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const int64_t bi = ix.b_index(i);
        bn->grad[bi] += yn->grad[i] * dfb(an->data[ix.a_index(i)], bn->data[bi]);
      }
    }
  });
  return y;
}

Tensor unary_op(const Tensor& x, double (*f)(double), double (*df)(double)) {
  const int64_t n = x.numel();
  std::vector<double> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, n, df]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += yn->grad[i] * df(xn->data[i]);
  });
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, false, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, false, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, true, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, [](double v) { return -v; }, [](double) { return -1.0; });
}

Tensor relu(const Tensor& x) {
  // subgradient 0 at the kink
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, n]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double s = yn->data[i];
      xn->grad[i] += yn->grad[i] * s * (1.0 - s);
    }
  });
  return y;
}

Tensor exp(const Tensor& x) {
  const int64_t n = x.numel();
  std::vector<double> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(xv[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, n]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += yn->grad[i] * yn->data[i];
  });
  return y;
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  check_arg(lo <= hi, "clip: lo > hi");
  const int64_t n = x.numel();
  std::vector<double> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::min(hi, std::max(lo, xv[i]));
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, n, lo, hi]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      if (xn->data[i] > lo && xn->data[i] < hi) xn->grad[i] += yn->grad[i];
  });
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  check_arg(axis >= 0 && axis < (int)shape.size(), "softmax: bad axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < (int)shape.size(); ++i) inner *= shape[i];
  const int64_t len = shape[axis];
  std::vector<double> out(x.numel());
  const auto& xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = xv[base];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      double denom = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        denom += e;
      }
      for (int64_t l = 0; l < len; ++l) out[base + l * inner] /= denom;
    }
  }
  Tensor y = Tensor::from_data(shape, std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, outer, inner, len]() {
    xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (int64_t l = 0; l < len; ++l)
          dot += yn->grad[base + l * inner] * yn->data[base + l * inner];
        for (int64_t l = 0; l < len; ++l) {
          const int64_t i = base + l * inner;
          xn->grad[i] += yn->data[i] * (yn->grad[i] - dot);
        }
      }
    }
  });
  return y;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::scalar(acc);
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn]() {
    xn->ensure_grad();
    const double g = yn->grad[0];
    for (size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += g;
  });
  return y;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double n = (double)x.numel();
  Tensor y = Tensor::scalar(acc / n);
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, n]() {
    xn->ensure_grad();
    const double g = yn->grad[0] / n;
    for (size_t i = 0; i < xn->data.size(); ++i) xn->grad[i] += g;
  });
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_arg(a.shape().size() == 2, "matmul: lhs must be rank 2");
  const bool vec = b.shape().size() == 1;
  check_arg(vec || b.shape().size() == 2, "matmul: rhs must be rank 1 or 2");
  const int m = a.dim(0), k = a.dim(1);
  const int n = vec ? 1 : b.dim(1);
  check_arg(b.dim(0) == k, "matmul: inner dims differ");
  std::vector<double> out((int64_t)m * n, 0.0);
  kern::matmul_forward(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor y = Tensor::from_data(vec ? Shape{m} : Shape{m, n}, std::move(out));
  auto an = a.node(), bn = b.node(), yn = y.node();
  record_if_needed({an, bn}, y, [an, bn, yn, m, k, n]() {
    if (an->requires_grad) {
      an->ensure_grad();
      kern::matmul_backward_a(yn->grad.data(), bn->data.data(), an->grad.data(), m, k, n);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      kern::matmul_backward_b(yn->grad.data(), an->data.data(), bn->grad.data(), m, k, n);
    }
  });
  return y;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  check_arg(input.shape().size() == 3, "conv2d: input must be [C,H,W]");
  check_arg(kernel.shape().size() == 4, "conv2d: kernel must be [Cout,Cin,kH,kW]");
  kern::Conv2dDims d;
  d.cin = input.dim(0);
  d.h = input.dim(1);
  d.w = input.dim(2);
  d.cout = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  d.pad = padding;
  check_arg(kernel.dim(1) == d.cin, "conv2d: kernel/input channel mismatch");
  check_arg(d.kh % 2 == 1 && d.kw % 2 == 1, "conv2d: kernel size must be odd");
  check_arg(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  check_arg(bias.shape() == Shape{d.cout}, "conv2d: bias must be [Cout]");
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  check_arg(d.oh > 0 && d.ow > 0, "conv2d: empty output");
  std::vector<double> out((int64_t)d.cout * d.oh * d.ow);
  kern::conv2d_forward(input.data().data(), kernel.data().data(),
                       bias.data().data(), out.data(), d);
  Tensor y = Tensor::from_data({d.cout, d.oh, d.ow}, std::move(out));
  auto in = input.node(), kn = kernel.node(), bn = bias.node(), yn = y.node();
  record_if_needed({in, kn, bn}, y, [in, kn, bn, yn, d]() {
    if (in->requires_grad) {
      in->ensure_grad();
      kern::conv2d_backward_input(yn->grad.data(), kn->data.data(), in->grad.data(), d);
    }
    if (kn->requires_grad) {
      kn->ensure_grad();
      kern::conv2d_backward_kernel(yn->grad.data(), in->data.data(), kn->grad.data(), d);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      kern::conv2d_backward_bias(yn->grad.data(), bn->grad.data(), d);
    }
  });
  return y;
}

namespace {

// Shared normalization backward: dx = istd*(dxhat - mean(dxhat) -
// xhat*mean(dxhat*xhat)) per statistics group.
Tensor batchnorm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      BnStats& running, bool train, double eps, double momentum,
                      int channels, int64_t group) {
  const auto& xv = x.data();
  std::vector<double> mu(channels), istd(channels);
  if (train) {
    for (int c = 0; c < channels; ++c) {
      const double* p = xv.data() + (int64_t)c * group;
      double m = 0.0;
      for (int64_t i = 0; i < group; ++i) m += p[i];
      m /= (double)group;
      double v = 0.0;
      for (int64_t i = 0; i < group; ++i) v += (p[i] - m) * (p[i] - m);
      v /= (double)group;
      mu[c] = m;
      istd[c] = 1.0 / std::sqrt(v + eps);
      running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * m;
      running.var[c] = (1.0 - momentum) * running.var[c] + momentum * v;
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mu[c] = running.mean[c];
      istd[c] = 1.0 / std::sqrt(running.var[c] + eps);
    }
  }
  std::vector<double> xhat(xv.size()), out(xv.size());
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  const bool per_element = gamma.numel() == (int64_t)xv.size();  // 1d variant
  for (int c = 0; c < channels; ++c) {
    for (int64_t i = 0; i < group; ++i) {
      const int64_t j = (int64_t)c * group + i;
      xhat[j] = (xv[j] - mu[c]) * istd[c];
      const int64_t a = per_element ? j : c;
      out[j] = gv[a] * xhat[j] + bv[a];
    }
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
  record_if_needed({xn, gn, bn}, y,
                   [xn, gn, bn, yn, xhat = std::move(xhat), istd = std::move(istd),
                    channels, group, per_element, train]() {
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t i = 0; i < group; ++i) {
        const int64_t j = (int64_t)c * group + i;
        const double dy = yn->grad[j];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat[j];
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        if (per_element) {
          for (int64_t i = 0; i < group; ++i) {
            const int64_t j = (int64_t)c * group + i;
            gn->grad[j] += yn->grad[j] * xhat[j];
          }
        } else {
          gn->grad[c] += sum_dy_xhat;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (per_element) {
          for (int64_t i = 0; i < group; ++i) {
            const int64_t j = (int64_t)c * group + i;
            bn->grad[j] += yn->grad[j];
          }
        } else {
          bn->grad[c] += sum_dy;
        }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        if (train) {
          // statistics depend on x
          double s1 = 0.0, s2 = 0.0;
          for (int64_t i = 0; i < group; ++i) {
            const int64_t j = (int64_t)c * group + i;
            const double dxhat = yn->grad[j] * gn->data[per_element ? j : c];
            s1 += dxhat;
            s2 += dxhat * xhat[j];
          }
          const double inv_n = 1.0 / (double)group;
          for (int64_t i = 0; i < group; ++i) {
            const int64_t j = (int64_t)c * group + i;
            const double dxhat = yn->grad[j] * gn->data[per_element ? j : c];
            xn->grad[j] += istd[c] * (dxhat - s1 * inv_n - xhat[j] * s2 * inv_n);
          }
        } else {
          for (int64_t i = 0; i < group; ++i) {
            const int64_t j = (int64_t)c * group + i;
            xn->grad[j] += yn->grad[j] * gn->data[per_element ? j : c] * istd[c];
          }
        }
      }
    }
  });
  return y;
}

}  // namespace

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BnStats& running, bool train, double eps, double momentum) {
  check_arg(x.shape().size() == 3, "batchnorm2d: input must be [C,H,W]");
  const int c = x.dim(0);
  check_arg(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
            "batchnorm2d: affine params must be [C]");
  check_arg((int)running.mean.size() == c, "batchnorm2d: running stats size");
  check_arg(eps > 0.0, "batchnorm2d: eps must be positive");
  return batchnorm_impl(x, gamma, beta, running, train, eps, momentum, c,
                        (int64_t)x.dim(1) * x.dim(2));
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BnStats& running, bool train, double eps, double momentum) {
  check_arg(x.shape().size() == 1, "batchnorm1d: input must be [N]");
  check_arg(gamma.shape() == x.shape() && beta.shape() == x.shape(),
            "batchnorm1d: affine params must match input");
  check_arg(running.mean.size() == 1, "batchnorm1d: running stats size");
  check_arg(eps > 0.0, "batchnorm1d: eps must be positive");
  return batchnorm_impl(x, gamma, beta, running, train, eps, momentum, 1, x.numel());
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check_arg(!parts.empty(), "concat: empty input list");
  const Shape& s0 = parts[0].shape();
  check_arg(axis >= 0 && axis < (int)s0.size(), "concat: bad axis");
  Shape out_shape = s0;
  int total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    check_arg(s.size() == s0.size(), "concat: rank mismatch");
    for (int i = 0; i < (int)s.size(); ++i)
      if (i != axis) check_arg(s[i] == s0[i], "concat: dim mismatch");
    total += s[axis];
  }
  out_shape[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < (int)s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(shape_numel(out_shape));
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t len = p.dim(axis) * inner;
    const auto& pv = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * len, pv.begin() + (o + 1) * len,
                out.begin() + o * total * inner + offset);
    offset += len;
  }
  Tensor y = Tensor::from_data(out_shape, std::move(out));
  std::vector<NodePtr> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  auto yn = y.node();
  record_if_needed(ins, y, [ins, yn, outer, inner, total, axis]() {
    int64_t offset = 0;
    for (const auto& pn : ins) {
      const int64_t len = pn->shape[axis] * inner;
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < len; ++i)
            pn->grad[o * len + i] += yn->grad[o * total * inner + offset + i];
      }
      offset += len;
    }
  });
  return y;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_arg(shape_numel(new_shape) == x.numel(), "reshape: element count differs");
  Tensor y = Tensor::from_data(std::move(new_shape), x.data());
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn]() {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += yn->grad[i];
  });
  return y;
}

Tensor slice0(const Tensor& x, int start, int len) {
  const Shape& s = x.shape();
  check_arg(start >= 0 && len > 0 && start + len <= s[0], "slice0: range out of bounds");
  int64_t inner = 1;
  for (size_t i = 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[0] = len;
  std::vector<double> out(x.data().begin() + start * inner,
                          x.data().begin() + (start + len) * inner);
  Tensor y = Tensor::from_data(out_shape, std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, start, inner]() {
    xn->ensure_grad();
    for (size_t i = 0; i < yn->grad.size(); ++i)
      xn->grad[start * inner + i] += yn->grad[i];
  });
  return y;
}

Tensor avgpool2d(const Tensor& x, int k) {
  check_arg(x.shape().size() == 3, "avgpool2d: input must be [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check_arg(k >= 1 && h % k == 0 && w % k == 0, "avgpool2d: kernel must divide spatial dims");
  const int oh = h / k, ow = w / k;
  std::vector<double> out((int64_t)c * oh * ow, 0.0);
  const auto& xv = x.data();
  const double inv = 1.0 / (k * k);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += xv[((int64_t)ci * h + oy * k + dy) * w + ox * k + dx];
        out[((int64_t)ci * oh + oy) * ow + ox] = acc * inv;
      }
  Tensor y = Tensor::from_data({c, oh, ow}, std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, c, h, w, oh, ow, k, inv]() {
    xn->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g = yn->grad[((int64_t)ci * oh + oy) * ow + ox] * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              xn->grad[((int64_t)ci * h + oy * k + dy) * w + ox * k + dx] += g;
        }
  });
  return y;
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
  check_arg(x.shape().size() == 3, "upsample_nearest2d: input must be [C,H,W]");
  check_arg(factor >= 1, "upsample_nearest2d: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h * factor, ow = w * factor;
  std::vector<double> out((int64_t)c * oh * ow);
  const auto& xv = x.data();
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        out[((int64_t)ci * oh + oy) * ow + ox] =
            xv[((int64_t)ci * h + oy / factor) * w + ox / factor];
  Tensor y = Tensor::from_data({c, oh, ow}, std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, c, h, w, oh, ow, factor]() {
    xn->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          xn->grad[((int64_t)ci * h + oy / factor) * w + ox / factor] +=
              yn->grad[((int64_t)ci * oh + oy) * ow + ox];
  });
  return y;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  check_arg(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!train || p == 0.0) return x;
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  auto xn = x.node(), yn = y.node();
  record_if_needed({xn}, y, [xn, yn, mask, n]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < n; ++i) xn->grad[i] += yn->grad[i] * (*mask)[i];
  });
  return y;
}

}  // namespace tff
