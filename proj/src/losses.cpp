#include "tff/losses.hpp"

#include <cmath>

#include "tff/ops.hpp"

namespace tff {

Tensor depth_l1(const Tensor& z_gt, const Tensor& z_hat) {
  check_arg(z_gt.shape() == z_hat.shape(), "depth_l1: shape mismatch");
  return sum(abs(sub(z_gt, z_hat)));
}

namespace {

double sign0(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// forward-difference pair of the scale-invariant gradient at one pixel
struct GradPair {
  double gx = 0, gy = 0;
  bool has_x = false, has_y = false;
};

GradPair norm_grad(const std::vector<double>& n, int h, int w, int y, int x, int step) {
  GradPair g;
  const double a = n[(size_t)y * w + x];
  if (y + step < h) {
    const double b = n[(size_t)(y + step) * w + x];
    const double den = std::fabs(b) + std::fabs(a);
    g.gx = den > 0 ? (b - a) / den : 0.0;
    g.has_x = true;
  }
  if (x + step < w) {
    const double b = n[(size_t)y * w + (x + step)];
    const double den = std::fabs(b) + std::fabs(a);
    g.gy = den > 0 ? (b - a) / den : 0.0;
    g.has_y = true;
  }
  return g;
}

}  // namespace

Tensor depth_sig(const Tensor& z_gt, const Tensor& z_hat) {
  check_arg(z_gt.shape() == z_hat.shape(), "depth_sig: shape mismatch");
  check_arg(z_gt.shape().size() == 3 && z_gt.dim(0) == 1, "depth_sig: maps must be [1,h,w]");
  const int h = z_gt.dim(1), w = z_gt.dim(2);
  const auto& gt = z_gt.data();
  const auto& zh = z_hat.data();

  double loss = 0.0;
  for (int step : {1, 2, 4}) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const GradPair a = norm_grad(gt, h, w, y, x, step);
        const GradPair b = norm_grad(zh, h, w, y, x, step);
        const double dx = a.has_x ? a.gx - b.gx : 0.0;
        const double dy = a.has_y ? a.gy - b.gy : 0.0;
        loss += std::sqrt(dx * dx + dy * dy);
      }
  }
  Tensor out = Tensor::scalar(loss);
  auto gn = z_gt.node(), zn = z_hat.node(), on = out.node();
  if (grad_enabled({gn, zn})) {
    out.set_requires_grad(true);
    Tape::active()->record({gn, zn}, on, [gn, zn, on, h, w]() {
      const double g0 = on->grad[0];
      if (zn->requires_grad) zn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      for (int step : {1, 2, 4}) {
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const GradPair a = norm_grad(gn->data, h, w, y, x, step);
            const GradPair b = norm_grad(zn->data, h, w, y, x, step);
            const double dx = a.has_x ? a.gx - b.gx : 0.0;
            const double dy = a.has_y ? a.gy - b.gy : 0.0;
            const double norm = std::sqrt(dx * dx + dy * dy);
            if (norm <= 0.0) continue;  // subgradient 0 at the kink
            // d loss / d g_h[zhat] components
            const double cgx = -dx / norm * g0;
            const double cgy = -dy / norm * g0;
            const double cgx_gt = dx / norm * g0;
            const double cgy_gt = dy / norm * g0;
            auto scatter = [&](detail::TensorNode* n, bool wants, double cx, double cy) {
              if (!wants) return;
              const double va = n->data[(size_t)y * w + x];
              if (cx != 0.0 && y + step < h) {
                const double vb = n->data[(size_t)(y + step) * w + x];
                const double den = std::fabs(vb) + std::fabs(va);
                if (den > 0) {
                  const double da = (-(den) - (vb - va) * sign0(va)) / (den * den);
                  const double db = ((den) - (vb - va) * sign0(vb)) / (den * den);
                  n->grad[(size_t)y * w + x] += cx * da;
                  n->grad[(size_t)(y + step) * w + x] += cx * db;
                }
              }
              if (cy != 0.0 && x + step < w) {
                const double vb = n->data[(size_t)y * w + (x + step)];
                const double den = std::fabs(vb) + std::fabs(va);
                if (den > 0) {
                  const double da = (-(den) - (vb - va) * sign0(va)) / (den * den);
                  const double db = ((den) - (vb - va) * sign0(vb)) / (den * den);
                  n->grad[(size_t)y * w + x] += cy * da;
                  n->grad[(size_t)y * w + (x + step)] += cy * db;
                }
              }
            };
            scatter(zn.get(), zn->requires_grad, cgx, cgy);
            scatter(gn.get(), gn->requires_grad, cgx_gt, cgy_gt);
          }
      }
    });
  }
  return out;
}

Tensor seg_ce(const Tensor& logits, const std::vector<int32_t>& labels) {
  check_arg(logits.shape().size() == 3, "seg_ce: logits must be [K,H,W]");
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const int64_t n = (int64_t)h * w;
  check_arg((int64_t)labels.size() == n, "seg_ce: label count mismatch");
  const auto& lv = logits.data();
  for (int32_t c : labels)
    check_arg(c >= 0 && c < k, "seg_ce: label out of range");

  // stable log-softmax per pixel; probabilities saved for the backward
  auto probs = std::make_shared<std::vector<double>>((size_t)k * n);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double mx = lv[i];
    for (int c = 1; c < k; ++c) mx = std::max(mx, lv[c * n + i]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(lv[c * n + i] - mx);
    const double log_denom = std::log(denom);
    for (int c = 0; c < k; ++c)
      (*probs)[c * n + i] = std::exp(lv[c * n + i] - mx) / denom;
    loss -= lv[labels[i] * n + i] - mx - log_denom;
  }
  loss /= (double)n;
  Tensor out = Tensor::scalar(loss);
  auto ln = logits.node(), on = out.node();
  if (grad_enabled({ln})) {
    out.set_requires_grad(true);
    auto labels_copy = std::make_shared<std::vector<int32_t>>(labels);
    Tape::active()->record({ln}, on, [ln, on, probs, labels_copy, k, n]() {
      ln->ensure_grad();
      const double g = on->grad[0] / (double)n;
      for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c)
          ln->grad[c * n + i] +=
              g * ((*probs)[c * n + i] - (c == (*labels_copy)[i] ? 1.0 : 0.0));
    });
  }
  return out;
}

Tensor translation_error_loss(const TauTensors& pred, const RigidTransform& gt) {
  const Tensor& T_hat = pred.translation;
  const Tensor& R_hat = pred.rotation;
  check_arg(T_hat.shape() == Shape{3} && R_hat.shape() == Shape({3, 3}),
            "translation_error_loss: bad pose tensors");
  const auto& t = T_hat.data();
  const auto& r = R_hat.data();
  const double u[3] = {gt.T[0] - t[0], gt.T[1] - t[1], gt.T[2] - t[2]};
  double v[3];
  for (int j = 0; j < 3; ++j) v[j] = r[j] * u[0] + r[3 + j] * u[1] + r[6 + j] * u[2];
  Tensor out = Tensor::scalar(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  auto tn = T_hat.node(), rn = R_hat.node(), on = out.node();
  if (grad_enabled({tn, rn})) {
    out.set_requires_grad(true);
    const std::array<double, 3> uc{u[0], u[1], u[2]};
    const std::array<double, 3> vc{v[0], v[1], v[2]};
    Tape::active()->record({tn, rn}, on, [tn, rn, on, uc, vc]() {
      const double g = on->grad[0];
      if (tn->requires_grad) {
        tn->ensure_grad();
        // d/dT_hat = -2 R_hat v
        for (int i = 0; i < 3; ++i) {
          double acc = 0;
          for (int j = 0; j < 3; ++j) acc += rn->data[i * 3 + j] * vc[j];
          tn->grad[i] += g * (-2.0) * acc;
        }
      }
      if (rn->requires_grad) {
        rn->ensure_grad();
        // v_j = sum_i R_ij u_i
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) rn->grad[i * 3 + j] += g * 2.0 * vc[j] * uc[i];
      }
    });
  }
  return out;
}

Tensor rotation_error_loss(const TauTensors& pred, const RigidTransform& gt,
                           double clamp_margin) {
  const Tensor& R_hat = pred.rotation;
  check_arg(R_hat.shape() == Shape({3, 3}), "rotation_error_loss: bad rotation tensor");
  const auto& r = R_hat.data();
  double trace = 0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) trace += r[k * 3 + i] * gt.R[k * 3 + i];
  const double lo = -1.0 + clamp_margin, hi = 1.0 - clamp_margin;
  const double raw = (trace - 1.0) / 2.0;
  const double arg = std::min(hi, std::max(lo, raw));
  Tensor out = Tensor::scalar(std::acos(arg));
  auto rn = R_hat.node(), on = out.node();
  if (grad_enabled({rn})) {
    out.set_requires_grad(true);
    const bool clamped = raw <= lo || raw >= hi;
    const double dacos = clamped ? 0.0 : -1.0 / std::sqrt(1.0 - arg * arg);
    std::array<double, 9> gtR;
    for (int i = 0; i < 9; ++i) gtR[i] = gt.R[i];
    Tape::active()->record({rn}, on, [rn, on, dacos, gtR]() {
      if (dacos == 0.0) return;
      rn->ensure_grad();
      const double g = on->grad[0] * dacos * 0.5;
      // d trace(R_hat^T gt) / d R_hat = gt
      for (int i = 0; i < 9; ++i) rn->grad[i] += g * gtR[i];
    });
  }
  return out;
}

std::pair<Tensor, Tensor> motion_losses(const TauTensors& pred, const RigidTransform& gt) {
  return {translation_error_loss(pred, gt), rotation_error_loss(pred, gt)};
}

Tensor multitask_total(const std::vector<std::pair<std::string, Tensor>>& losses,
                       ParameterStore& ps) {
  check_arg(!losses.empty(), "multitask_total: no components");
  Tensor total;
  for (const auto& [name, value] : losses) {
    check_arg(std::isfinite(value.value()), "multitask_total: non-finite " + name);
    Tensor s = ps.p("loss/s_" + name);
    Tensor term = add(mul(exp(neg(s)), value), s);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor inverse_depth_target(const Tensor& depth, int factor) {
  check_arg(depth.shape().size() == 3 && depth.dim(0) == 1,
            "inverse_depth_target: depth must be [1,H,W]");
  const int h = depth.dim(1), w = depth.dim(2);
  check_arg(h % factor == 0 && w % factor == 0, "inverse_depth_target: factor mismatch");
  const int oh = h / factor, ow = w / factor;
  std::vector<double> out((size_t)oh * ow, 0.0);
  const auto& dv = depth.data();
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          acc += 1.0 / dv[(size_t)(y * factor + dy) * w + (x * factor + dx)];
      out[(size_t)y * ow + x] = acc * inv;
    }
  return Tensor::from_data({1, oh, ow}, std::move(out));
}

}  // namespace tff
