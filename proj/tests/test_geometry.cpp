#include <doctest.h>

#include <cmath>
#include <cstring>

#include "tff/geometry.hpp"
#include "tff/ops.hpp"
#include "tff/ref_kernels.hpp"
#include "tff/trainer.hpp"
#include "tff/util.hpp"

using namespace tff;

namespace {

RigidTransform random_transform(Rng& rng, double t_scale = 0.5, double s_max = 0.6) {
  RigidTransform tau;
  tau.R = rotation_from_sines(rng.uniform(-s_max, s_max), rng.uniform(-s_max, s_max),
                              rng.uniform(-s_max, s_max));
  for (auto& t : tau.T) t = rng.uniform(-t_scale, t_scale);
  return tau;
}

RigidTransform rot_z(double angle) {
  RigidTransform r;
  r.R = {std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1};
  return r;
}

Tensor random_features(Rng& rng, int c, int h, int w) {
  std::vector<double> v((size_t)c * h * w);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data({c, h, w}, std::move(v));
}

DepthMap random_depth(Rng& rng, int h, int w, double lo = 0.8, double hi = 5.0) {
  std::vector<double> v((size_t)h * w);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DepthMap{Tensor::from_data({1, h, w}, std::move(v))};
}

}  // namespace

TEST_CASE("rotation_from_sines basic cases") {
  const auto id = rotation_from_sines(0, 0, 0);
  for (int i = 0; i < 9; ++i) CHECK(id[i] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0));

  const double s = std::sin(0.1);
  const auto rx = rotation_from_sines(s, 0, 0);
  // R * (0,1,0) = (0, cos 0.1, sin 0.1)
  CHECK(rx[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rx[4] == doctest::Approx(std::cos(0.1)));
  CHECK(rx[7] == doctest::Approx(std::sin(0.1)));
}

TEST_CASE("rotation_from_sines is orthonormal with det one") {
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    RigidTransform r;
    r.R = rotation_from_sines(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK(r.is_valid_rotation(1e-9));
  }
}

TEST_CASE("rotation tensor jacobian matches finite differences") {
  Rng rng(22);
  Tensor sines = Tensor::from_data(
      {3}, {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
  sines.set_requires_grad(true);
  Tensor w = random_features(rng, 1, 3, 3);
  const GradCheckReport r = grad_check(
      [&] { return sum(mul(rotation_tensor_from_sines(sines), reshape(w, {3, 3}))); },
      {sines}, 1e-5);
  CHECK_MESSAGE(r.pass, "max rel err ", r.max_rel_err);
}

TEST_CASE("translation error closed forms") {
  Rng rng(23);
  RigidTransform gt = random_transform(rng);
  CHECK(translation_error(gt, gt) == doctest::Approx(0.0));

  RigidTransform pred = RigidTransform::identity();
  RigidTransform off = RigidTransform::identity();
  off.T = {pred.T[0] - 1.0, 0, 0};
  // gt minus pred translation = (1,0,0)
  RigidTransform gt2 = RigidTransform::identity();
  gt2.T = {1, 0, 0};
  CHECK(translation_error(pred, gt2) == doctest::Approx(1.0));

  RigidTransform pred3 = rot_z(M_PI / 2);
  RigidTransform gt3 = rot_z(M_PI / 2);
  gt3.T = {0, 2, 0};
  CHECK(translation_error(pred3, gt3) == doctest::Approx(4.0));
}

TEST_CASE("rotation error closed forms and clamp") {
  RigidTransform id = RigidTransform::identity();
  CHECK(rotation_error(id, id) == doctest::Approx(0.0));
  CHECK(rotation_error(id, rot_z(0.1)) == doctest::Approx(0.1));
  CHECK(rotation_error(rot_z(0.1), id) == doctest::Approx(0.1));

  // slightly inflated matrix pushes the trace argument above one
  RigidTransform inflated = id;
  for (auto& v : inflated.R) v *= 1.0 + 1e-12;
  const double e = rotation_error(inflated, id);
  CHECK(std::isfinite(e));
  CHECK(e == doctest::Approx(0.0));
}

TEST_CASE("rotation error is symmetric") {
  Rng rng(24);
  for (int i = 0; i < 50; ++i) {
    RigidTransform a = random_transform(rng);
    RigidTransform b = random_transform(rng);
    CHECK(rotation_error(a, b) == doctest::Approx(rotation_error(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("compose and invert") {
  Rng rng(25);
  RigidTransform a = random_transform(rng);
  RigidTransform id = compose(a, invert(a));
  CHECK(id.is_valid_rotation(1e-9));
  for (int i = 0; i < 3; ++i) CHECK(id.T[i] == doctest::Approx(0.0).epsilon(1e-9));
  for (int i = 0; i < 9; ++i)
    CHECK(id.R[i] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0).epsilon(1e-9));

  RigidTransform b = random_transform(rng);
  RigidTransform cb = compose(RigidTransform::identity(), b);
  for (int i = 0; i < 9; ++i) CHECK(cb.R[i] == b.R[i]);
  for (int i = 0; i < 3; ++i) CHECK(cb.T[i] == b.T[i]);

  // homogeneous 4x4 oracle
  for (int iter = 0; iter < 20; ++iter) {
    RigidTransform x = random_transform(rng);
    RigidTransform y = random_transform(rng);
    RigidTransform c = compose(x, y);
    double hx[16] = {x.R[0], x.R[1], x.R[2], x.T[0], x.R[3], x.R[4], x.R[5], x.T[1],
                     x.R[6], x.R[7], x.R[8], x.T[2], 0,      0,      0,      1};
    double hy[16] = {y.R[0], y.R[1], y.R[2], y.T[0], y.R[3], y.R[4], y.R[5], y.T[1],
                     y.R[6], y.R[7], y.R[8], y.T[2], 0,      0,      0,      1};
    double hc[16] = {0};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) hc[i * 4 + j] += hx[i * 4 + k] * hy[k * 4 + j];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j)
        CHECK(c.R[i * 3 + j] == doctest::Approx(hc[i * 4 + j]).epsilon(1e-12));
      CHECK(c.T[i] == doctest::Approx(hc[i * 4 + 3]).epsilon(1e-12));
    }
  }
}

TEST_CASE("identity warp reproduces features with full validity") {
  Rng rng(26);
  const CameraIntrinsics K = CameraIntrinsics::defaults(6, 5);
  Tensor f = random_features(rng, 3, 5, 6);
  DepthMap d = random_depth(rng, 5, 6);
  WarpResult wr = project_warp(f, d, RigidTransform::identity(), K);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(wr.warped.data()[i] == f.data()[i]);
  for (double v : wr.validity.data()) CHECK(v == 1.0);
}

TEST_CASE("pure x translation shifts by one column") {
  // 4x4 grid, fx=fy=2, cx=cy=2, unit depth, T=(0.5,0,0): du = fx*Tx/z = +1
  CameraIntrinsics K{2, 2, 2, 2, 4, 4};
  std::vector<double> feat(16);
  for (int i = 0; i < 16; ++i) feat[i] = i + 1;
  Tensor f = Tensor::from_data({1, 4, 4}, feat);
  DepthMap d{Tensor::full({1, 4, 4}, 1.0)};
  RigidTransform tau;
  tau.T = {0.5, 0, 0};
  WarpResult wr = project_warp(f, d, tau, K);
  for (int v = 0; v < 4; ++v) {
    CHECK(wr.validity.data()[v * 4 + 0] == 0.0);  // nothing lands on the first column
    CHECK(wr.warped.data()[v * 4 + 0] == 0.0);
    for (int u = 1; u < 4; ++u) {
      CHECK(wr.validity.data()[v * 4 + u] == 1.0);
      CHECK(wr.warped.data()[v * 4 + u] == feat[v * 4 + (u - 1)]);
    }
  }
}

TEST_CASE("collisions resolve to the smaller transformed depth") {
  // two sources meet at one target; the nearer one wins
  CameraIntrinsics K{1, 1, 1, 0, 3, 1};
  Tensor f = Tensor::from_data({1, 1, 3}, {10.0, 20.0, 30.0});
  DepthMap d{Tensor::from_data({1, 1, 3}, {1.0, 0.5, 3.0})};
  RigidTransform tau;
  tau.T = {0, 0, 1.0};  // zoom out pulls the borders inward
  WarpResult wr = project_warp(f, d, tau, K);
  // u=0: X=-1, Z'=2, u' = -0.5+1 = 0.5 -> 1 ; u=1: X=0, Z'=1.5, u'=1 ; collision at 1
  CHECK(wr.warped.data()[1] == 20.0);
  CHECK(wr.validity.data()[1] == 1.0);

  DepthMap d2{Tensor::from_data({1, 1, 3}, {0.2, 1.0, 3.0})};
  WarpResult wr2 = project_warp(f, d2, tau, K);
  // now the border pixel is nearer: Z' 1.2 vs 2.0
  CHECK(wr2.warped.data()[1] == 10.0);
}

TEST_CASE("warp equals the homogeneous reference on random scenes") {
  Rng rng(27);
  for (int iter = 0; iter < 60; ++iter) {
    const int h = 2 + rng.uniform_int(0, 6), w = 2 + rng.uniform_int(0, 6);
    const int c = 1 + rng.uniform_int(0, 2);
    CameraIntrinsics K = CameraIntrinsics::defaults(w, h);
    Tensor f = random_features(rng, c, h, w);
    DepthMap d = random_depth(rng, h, w);
    RigidTransform tau = random_transform(rng, 0.4, 0.4);
    WarpResult wr = project_warp(f, d, tau, K);
    ref::WarpRef expect = ref::project_warp(f.data(), c, h, w, d.values.data(), tau, K);
    CHECK(std::memcmp(wr.warped.data().data(), expect.warped.data(),
                      expect.warped.size() * 8) == 0);
    CHECK(std::memcmp(wr.validity.data().data(), expect.validity.data(),
                      expect.validity.size() * 8) == 0);
  }
}

TEST_CASE("warp validity marks exactly the covered pixels") {
  Rng rng(28);
  for (int iter = 0; iter < 20; ++iter) {
    CameraIntrinsics K = CameraIntrinsics::defaults(7, 7);
    Tensor f = random_features(rng, 2, 7, 7);
    DepthMap d = random_depth(rng, 7, 7);
    RigidTransform tau = random_transform(rng, 0.3, 0.3);
    WarpResult wr = project_warp(f, d, tau, K);
    const int64_t n = 49;
    for (int64_t i = 0; i < n; ++i) {
      const bool any_nonzero =
          wr.warped.data()[i] != 0.0 || wr.warped.data()[n + i] != 0.0;
      if (any_nonzero) CHECK(wr.validity.data()[i] == 1.0);
      if (wr.validity.data()[i] == 0.0) {
        CHECK(wr.warped.data()[i] == 0.0);
        CHECK(wr.warped.data()[n + i] == 0.0);
      }
    }
  }
}

TEST_CASE("warp gradient w.r.t. features matches finite differences") {
  Rng rng(29);
  CameraIntrinsics K = CameraIntrinsics::defaults(6, 6);
  Tensor f = random_features(rng, 2, 6, 6).set_requires_grad(true);
  DepthMap d = random_depth(rng, 6, 6);
  RigidTransform tau = random_transform(rng, 0.3, 0.3);
  Tensor w = random_features(rng, 2, 6, 6);
  const GradCheckReport r = grad_check(
      [&] {
        WarpResult wr = project_warp(f, d, tau, K);
        return sum(mul(wr.warped, w));
      },
      {f}, 1e-6);
  CHECK_MESSAGE(r.pass, "max rel err ", r.max_rel_err);
}

TEST_CASE("warp rejects non-positive depth") {
  CameraIntrinsics K = CameraIntrinsics::defaults(3, 3);
  Tensor f = Tensor::zeros({1, 3, 3});
  DepthMap d{Tensor::full({1, 3, 3}, -1.0)};
  CHECK_THROWS_AS(project_warp(f, d, RigidTransform::identity(), K), std::invalid_argument);
}

TEST_CASE("downscaled intrinsics keep pixel centers aligned") {
  const CameraIntrinsics K = CameraIntrinsics::defaults(32, 32);
  const CameraIntrinsics K4 = K.scaled_down(4);
  CHECK(K4.width == 8);
  CHECK(K4.fx == doctest::Approx(K.fx / 4));
  CHECK(K4.cx == doctest::Approx((8 - 1) / 2.0));
  CHECK(K4.cy == doctest::Approx((8 - 1) / 2.0));
}
