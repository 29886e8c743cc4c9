#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tff/ops.hpp"
#include "tff/ref_kernels.hpp"
#include "tff/tensor.hpp"
#include "tff/tensor_io.hpp"
#include "tff/trainer.hpp"
#include "tff/util.hpp"

using namespace tff;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// keeps FD probes away from relu/clip/abs kinks
Tensor rand_tensor_away_from(Shape shape, Rng& rng, const std::vector<double>& kinks,
                             double margin = 1e-2) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(-2.0, 2.0);
      bool ok = true;
      for (double k : kinks)
        if (std::fabs(x - k) < margin) ok = false;
      if (ok) break;
    } while (true);
  }
  return Tensor::from_data(std::move(shape), std::move(v));
}

void expect_fd(const std::function<Tensor()>& closure, const std::vector<Tensor>& leaves,
               double tol = 1e-4) {
  const GradCheckReport r = grad_check(closure, leaves, tol);
  CHECK(r.checked > 0);
  CHECK_MESSAGE(r.pass, "max rel err ", r.max_rel_err);
}

}  // namespace

TEST_CASE("conv2d zero input gives zero output") {
  Rng rng(1);
  Tensor x = Tensor::zeros({1, 3, 3});
  Tensor k = rand_tensor({2, 1, 3, 3}, rng);
  Tensor out = conv2d(x, k, Tensor::zeros({2}), 1, 1);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(2);
  Tensor x = rand_tensor({1, 4, 5}, rng);
  Tensor k = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor out = conv2d(x, k, Tensor::zeros({1}), 1, 0);
  REQUIRE(out.shape() == Shape({1, 4, 5}));
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches the serial reference exactly") {
  Rng rng(3);
  for (int iter = 0; iter < 20; ++iter) {
    const int stride = 1 + (iter % 2), pad = iter % 3;
    Tensor x = rand_tensor({2, 5, 5}, rng);
    Tensor k = rand_tensor({3, 2, 3, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    kern::Conv2dDims d{2, 5, 5, 3, 3, 3, stride, pad, 0, 0};
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.oh <= 0 || d.ow <= 0) continue;
    Tensor out = conv2d(x, k, b, stride, pad);
    std::vector<double> expect((size_t)3 * d.oh * d.ow);
    ref::conv2d_forward(x.data().data(), k.data().data(), b.data().data(), expect.data(), d);
    REQUIRE(out.numel() == (int64_t)expect.size());
    for (size_t i = 0; i < expect.size(); ++i) CHECK(out.data()[i] == expect[i]);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x = Tensor::zeros({2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k, Tensor::zeros({1}), 1, 1), std::invalid_argument);
}

TEST_CASE("elementwise trivial values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5));
  Tensor logits = Tensor::zeros({13});
  Tensor sm = softmax(logits, 0);
  for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 13));
  CHECK(clip(Tensor::scalar(1.7), -1, 1).value() == 1.0);
  CHECK(relu(Tensor::scalar(-3.0)).value() == 0.0);
  CHECK(abs(Tensor::scalar(-2.5)).value() == 2.5);
}

TEST_CASE("matmul matches a plain loop") {
  Rng rng(4);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 5}, rng);
  Tensor c = matmul(a, b);
  std::vector<double> expect(15, 0.0);
  ref::matmul_forward(a.data().data(), b.data().data(), expect.data(), 3, 4, 5);
  for (size_t i = 0; i < expect.size(); ++i) CHECK(c.data()[i] == expect[i]);

  Tensor v = rand_tensor({4}, rng);
  Tensor mv = matmul(a, v);
  REQUIRE(mv.shape() == Shape{3});
  for (int i = 0; i < 3; ++i) {
    double acc = 0;
    for (int p = 0; p < 4; ++p) acc += a.data()[i * 4 + p] * v.data()[p];
    CHECK(mv.data()[i] == acc);
  }
}

TEST_CASE("reductions accumulate left to right") {
  Rng rng(5);
  Tensor x = rand_tensor({37}, rng);
  double acc = 0;
  for (double v : x.data()) acc += v;
  CHECK(sum(x).value() == acc);
  CHECK(mean(x).value() == acc / 37.0);
}

TEST_CASE("batchnorm2d constant channel and zero gamma") {
  Tensor x = Tensor::full({2, 3, 3}, 4.2);
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  BnStats stats = BnStats::make(2);
  Tensor y = batchnorm2d(x, gamma, beta, stats, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0));

  Tensor beta2 = Tensor::from_data({2}, {0.7, -0.3});
  BnStats stats2 = BnStats::make(2);
  Rng rng(6);
  Tensor x2 = rand_tensor({2, 3, 3}, rng);
  Tensor y2 = batchnorm2d(x2, Tensor::zeros({2}), beta2, stats2, true);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i) CHECK(y2.data()[c * 9 + i] == doctest::Approx(beta2.data()[c]));
}

TEST_CASE("batchnorm2d matches two-pass statistics") {
  Rng rng(7);
  Tensor x = rand_tensor({2, 4, 4}, rng);
  Tensor gamma = rand_tensor({2}, rng, 0.5, 1.5);
  Tensor beta = rand_tensor({2}, rng, -0.5, 0.5);
  BnStats stats = BnStats::make(2);
  Tensor y = batchnorm2d(x, gamma, beta, stats, true, 1e-5, 0.1);
  for (int c = 0; c < 2; ++c) {
    double m = 0;
    for (int i = 0; i < 16; ++i) m += x.data()[c * 16 + i];
    m /= 16;
    double var = 0;
    for (int i = 0; i < 16; ++i) var += (x.data()[c * 16 + i] - m) * (x.data()[c * 16 + i] - m);
    var /= 16;
    for (int i = 0; i < 16; ++i) {
      const double expect =
          gamma.data()[c] * (x.data()[c * 16 + i] - m) / std::sqrt(var + 1e-5) + beta.data()[c];
      CHECK(y.data()[c * 16 + i] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(stats.mean[c] == doctest::Approx(0.1 * m));
    CHECK(stats.var[c] == doctest::Approx(0.9 * 1.0 + 0.1 * var));
  }
  // eval mode normalizes with the running buffers
  Tensor ye = batchnorm2d(x, gamma, beta, stats, false, 1e-5, 0.1);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i) {
      const double expect = gamma.data()[c] * (x.data()[c * 16 + i] - stats.mean[c]) /
                                std::sqrt(stats.var[c] + 1e-5) +
                            beta.data()[c];
      CHECK(ye.data()[c * 16 + i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("backward trivial gradients") {
  Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0}).set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor x2 = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(x2, x2));
    tape.backward(loss);
  }
  CHECK(x2.grad()[0] == doctest::Approx(2.0));
  CHECK(x2.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({3}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("non-participating leaves get zero gradients") {
  Tensor x = Tensor::from_data({2}, {1.0, -1.0}).set_requires_grad(true);
  Tensor unused = Tensor::from_data({2}, {5.0, 5.0}).set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(mul(x, x));
    Tensor side = sum(unused);  // recorded but not part of the loss
    (void)side;
    tape.backward(loss);
  }
  for (double g : unused.grad()) CHECK(g == 0.0);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("composite conv-bn-relu-mean matches finite differences") {
  Rng rng(8);
  Tensor x = rand_tensor({2, 5, 5}, rng, -1.5, 1.5);
  Tensor k = rand_tensor({3, 2, 3, 3}, rng, -0.8, 0.8).set_requires_grad(true);
  Tensor b = rand_tensor({3}, rng, -0.3, 0.3).set_requires_grad(true);
  Tensor gamma = rand_tensor({3}, rng, 0.7, 1.4).set_requires_grad(true);
  Tensor beta = rand_tensor({3}, rng, -0.4, 0.4).set_requires_grad(true);
  auto closure = [&]() {
    BnStats stats = BnStats::make(3);
    return mean(relu(batchnorm2d(conv2d(x, k, b, 1, 1), gamma, beta, stats, true)));
  };
  expect_fd(closure, {k, b, gamma, beta});
}

TEST_CASE("per-op gradients match finite differences") {
  Rng rng(9);

  SUBCASE("add sub mul neg") {
    Tensor a = rand_tensor({2, 3}, rng).set_requires_grad(true);
    Tensor b = rand_tensor({2, 3}, rng).set_requires_grad(true);
    Tensor s = rand_tensor({1}, rng).set_requires_grad(true);
    expect_fd([&] { return sum(add(a, b)); }, {a, b});
    expect_fd([&] { return sum(sub(a, b)); }, {a, b});
    expect_fd([&] { return sum(mul(a, b)); }, {a, b});
    expect_fd([&] { return sum(mul(a, s)); }, {a, s});
    expect_fd([&] { return sum(add(a, s)); }, {a, s});
    expect_fd([&] { return sum(neg(a)); }, {a});
  }
  SUBCASE("channel broadcast mul") {
    Tensor gate = rand_tensor({1, 3, 2}, rng).set_requires_grad(true);
    Tensor feat = rand_tensor({4, 3, 2}, rng).set_requires_grad(true);
    expect_fd([&] { return sum(mul(gate, feat)); }, {gate, feat});
    expect_fd([&] { return sum(mul(feat, gate)); }, {feat, gate});
  }
  SUBCASE("activations") {
    Tensor x = rand_tensor_away_from({3, 3}, rng, {0.0});
    x.set_requires_grad(true);
    expect_fd([&] { return sum(relu(x)); }, {x});
    expect_fd([&] { return sum(sigmoid(x)); }, {x});
    expect_fd([&] { return mean(exp(x)); }, {x});
    expect_fd([&] { return sum(abs(x)); }, {x});
  }
  SUBCASE("clip") {
    Tensor x = rand_tensor_away_from({4, 4}, rng, {-1.0, 1.0});
    x.set_requires_grad(true);
    expect_fd([&] { return sum(clip(x, -1, 1)); }, {x});
  }
  SUBCASE("softmax") {
    Tensor x = rand_tensor({3, 2, 2}, rng).set_requires_grad(true);
    Tensor w = rand_tensor({3, 2, 2}, rng);
    expect_fd([&] { return sum(mul(softmax(x, 0), w)); }, {x});
    Tensor v = rand_tensor({7}, rng).set_requires_grad(true);
    Tensor wv = rand_tensor({7}, rng);
    expect_fd([&] { return sum(mul(softmax(v, 0), wv)); }, {v});
  }
  SUBCASE("matmul") {
    Tensor a = rand_tensor({3, 4}, rng).set_requires_grad(true);
    Tensor b = rand_tensor({4, 2}, rng).set_requires_grad(true);
    Tensor v = rand_tensor({4}, rng).set_requires_grad(true);
    expect_fd([&] { return sum(matmul(a, b)); }, {a, b});
    expect_fd([&] { return sum(matmul(a, v)); }, {a, v});
  }
  SUBCASE("conv2d") {
    Tensor x = rand_tensor({2, 5, 5}, rng).set_requires_grad(true);
    Tensor k = rand_tensor({3, 2, 3, 3}, rng).set_requires_grad(true);
    Tensor b = rand_tensor({3}, rng).set_requires_grad(true);
    expect_fd([&] { return mean(conv2d(x, k, b, 1, 1)); }, {x, k, b});
    expect_fd([&] { return mean(conv2d(x, k, b, 2, 0)); }, {x, k, b});
  }
  SUBCASE("batchnorm2d train and eval") {
    Tensor x = rand_tensor({2, 3, 3}, rng).set_requires_grad(true);
    Tensor g = rand_tensor({2}, rng, 0.5, 1.5).set_requires_grad(true);
    Tensor b = rand_tensor({2}, rng).set_requires_grad(true);
    Tensor w = rand_tensor({2, 3, 3}, rng);
    expect_fd(
        [&] {
          BnStats stats = BnStats::make(2);
          return sum(mul(batchnorm2d(x, g, b, stats, true), w));
        },
        {x, g, b});
    BnStats fixed = BnStats::make(2);
    fixed.mean = {0.2, -0.1};
    fixed.var = {1.3, 0.8};
    expect_fd([&] { return sum(mul(batchnorm2d(x, g, b, fixed, false), w)); }, {x, g, b});
  }
  SUBCASE("batchnorm1d") {
    Tensor x = rand_tensor({6}, rng).set_requires_grad(true);
    Tensor g = rand_tensor({6}, rng, 0.5, 1.5).set_requires_grad(true);
    Tensor b = rand_tensor({6}, rng).set_requires_grad(true);
    Tensor w = rand_tensor({6}, rng);
    expect_fd(
        [&] {
          BnStats stats = BnStats::make(1);
          return sum(mul(batchnorm1d(x, g, b, stats, true), w));
        },
        {x, g, b});
  }
  SUBCASE("structure ops") {
    Tensor a = rand_tensor({2, 2, 3}, rng).set_requires_grad(true);
    Tensor b = rand_tensor({3, 2, 3}, rng).set_requires_grad(true);
    Tensor w = rand_tensor({5, 2, 3}, rng);
    expect_fd([&] { return sum(mul(concat({a, b}, 0), w)); }, {a, b});
    expect_fd([&] { return sum(slice0(reshape(a, {12}), 2, 7)); }, {a});
  }
  SUBCASE("pooling and upsampling") {
    Tensor x = rand_tensor({2, 4, 4}, rng).set_requires_grad(true);
    Tensor w = rand_tensor({2, 2, 2}, rng);
    Tensor wu = rand_tensor({2, 8, 8}, rng);
    expect_fd([&] { return sum(mul(avgpool2d(x, 2), w)); }, {x});
    expect_fd([&] { return sum(mul(upsample_nearest2d(x, 2), wu)); }, {x});
  }
  SUBCASE("dropout with a fixed mask") {
    Tensor x = rand_tensor({3, 3}, rng).set_requires_grad(true);
    expect_fd(
        [&] {
          Rng mask_rng(42);
          return sum(dropout(x, 0.3, mask_rng, true));
        },
        {x});
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(10);
  Tensor x = rand_tensor({8}, rng, 0.2, 2.0).set_requires_grad(true);
  const double a = 1.7, b = -0.6;

  auto grads_of = [&](const std::function<Tensor()>& loss_fn) {
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss_fn());
    return x.grad();
  };
  auto g1 = grads_of([&] { return mean(mul(x, x)); });
  auto g2 = grads_of([&] { return sum(sigmoid(x)); });
  auto gc = grads_of([&] {
    return add(mul(Tensor::scalar(a), mean(mul(x, x))),
               mul(Tensor::scalar(b), sum(sigmoid(x))));
  });
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK(gc[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12));
}

TEST_CASE("identical inputs give bit-identical results") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = rand_tensor({3, 8, 8}, rng);
    Tensor k = rand_tensor({4, 3, 3, 3}, rng);
    Tensor b = rand_tensor({4}, rng);
    BnStats stats = BnStats::make(4);
    Tensor y = batchnorm2d(conv2d(x, k, b, 2, 1), Tensor::full({4}, 1.0),
                           Tensor::zeros({4}), stats, true);
    return sum(sigmoid(y)).value();
  };
  const double r1 = run(123), r2 = run(123);
  CHECK(std::memcmp(&r1, &r2, sizeof(double)) == 0);
}

TEST_CASE("tensor file round-trips bit-exactly") {
  Rng rng(11);
  Tensor t = rand_tensor({3, 4, 5}, rng);
  const std::string path = "/tmp/tff_test_tensor.tnsr";
  write_tensor(path, t);
  Tensor back = read_tensor(path);
  REQUIRE(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), t.numel() * 8) == 0);

  std::vector<int32_t> ints = {-3, 0, 7, 2000000000, -2000000000, 42};
  write_tensor_i32(path, {2, 3}, ints);
  auto [shape, vals] = read_tensor_i32(path);
  CHECK(shape == Shape({2, 3}));
  CHECK(vals == ints);
  std::filesystem::remove(path);
}

TEST_CASE("tensor file rejects bad headers") {
  const std::string path = "/tmp/tff_bad_tensor.tnsr";
  {
    std::ofstream os(path, std::ios::binary);
    os << "JUNKJUNKJUNKJUNK";
  }
  CHECK_THROWS(read_tensor(path));
  std::filesystem::remove(path);
}
