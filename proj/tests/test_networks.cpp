#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "test_helpers.hpp"
#include "tff/networks.hpp"
#include "tff/trainer.hpp"

using namespace tff;
using tff_test::random_frame;
using tff_test::tiny_config;

TEST_CASE("encode produces the contracted shape and zero maps to zero") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(31);
  init_model_params(ps, cfg, rng);
  Fwd f;

  Tensor x = random_frame(rng, 16, 16);
  Tensor r = encode(x, ps, cfg, f);
  CHECK(r.shape() == Shape({8, 4, 4}));

  Tensor zero = Tensor::zeros({3, 16, 16});
  Tensor rz = encode(zero, ps, cfg, f);
  for (double v : rz.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("encode rejects indivisible input sizes") {
  NetConfig cfg = tiny_config();
  cfg.image_height = 18;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("every encoder parameter group feeds the output") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(32);
  init_model_params(ps, cfg, rng);
  Fwd f;
  Tensor x = random_frame(rng, 16, 16);
  const Tensor base = encode(x, ps, cfg, f);

  for (const char* name : {"enc/stem0/W", "enc/stem1/W", "enc/refine/W", "enc/psp0/W",
                           "enc/psp1/W", "enc/fuse/W"}) {
    Tensor& w = ps.p(name);
    auto saved = w.data();
    for (auto& v : w.mutable_data()) v *= 2.0;
    const Tensor out = encode(x, ps, cfg, f);
    double diff = 0;
    for (int64_t i = 0; i < out.numel(); ++i)
      diff = std::max(diff, std::fabs(out.data()[i] - base.data()[i]));
    CHECK_MESSAGE(diff > 1e-9, name, " appears to be a dead path");
    w.mutable_data() = saved;
  }
}

TEST_CASE("semantic decoder emits full-resolution logits") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(33);
  init_model_params(ps, cfg, rng);
  Fwd f;
  Tensor x = random_frame(rng, 16, 16);
  Tensor logits = decode_semantic(encode(x, ps, cfg, f), ps, cfg, f);
  CHECK(logits.shape() == Shape({4, 16, 16}));
}

TEST_CASE("depth decoder output is never negative") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(34);
  init_model_params(ps, cfg, rng);
  Fwd f;
  for (int iter = 0; iter < 5; ++iter) {
    Tensor x = random_frame(rng, 16, 16);
    Tensor z = decode_depth(encode(x, ps, cfg, f), ps, cfg, f);
    CHECK(z.shape() == Shape({1, 4, 4}));
    for (double v : z.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("motion decoder width and directionality") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(35);
  init_model_params(ps, cfg, rng);
  Fwd f;
  Tensor a = encode(random_frame(rng, 16, 16), ps, cfg, f);
  Tensor b = encode(random_frame(rng, 16, 16), ps, cfg, f);
  Tensor ab = decode_motion(concat({a, b}, 0), ps, cfg, f);
  Tensor ba = decode_motion(concat({b, a}, 0), ps, cfg, f);
  CHECK(ab.shape() == Shape{16});
  double diff = 0;
  for (int i = 0; i < 16; ++i) diff = std::max(diff, std::fabs(ab.data()[i] - ba.data()[i]));
  CHECK_MESSAGE(diff > 1e-9, "motion features ignore the frame order");
}

TEST_CASE("motion decoder collapses to zero at zero parameters") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(36);
  init_model_params(ps, cfg, rng);
  for (const auto& name : ps.order)
    if (name.rfind("mot/", 0) == 0)
      std::fill(ps.p(name).mutable_data().begin(), ps.p(name).mutable_data().end(), 0.0);
  Fwd f;
  Tensor a = encode(random_frame(rng, 16, 16), ps, cfg, f);
  Tensor m = decode_motion(concat({a, a}, 0), ps, cfg, f);
  for (double v : m.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("acceleration fusion identity and projection paths") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(37);
  init_model_params(ps, cfg, rng);
  Fwd f;
  std::vector<double> mv(16);
  for (auto& v : mv) v = rng.uniform(-1, 1);
  Tensor m = Tensor::from_data({16}, mv);

  Tensor no_accel = fuse_acceleration(m, std::nullopt, ps, cfg, f);
  CHECK(no_accel.node() == m.node());  // untouched

  Tensor with_zero = fuse_acceleration(m, std::array<double, 3>{0, 0, 0}, ps, cfg, f);
  CHECK(with_zero.shape() == Shape{16});
  // zero acceleration contributes nothing beyond the feature projection
  const Tensor& W = ps.p("fus/W");
  const Tensor& b = ps.p("fus/b");
  for (int i = 0; i < 16; ++i) {
    double acc = b.data()[i];
    for (int j = 0; j < 16; ++j) acc += W.data()[i * 19 + j] * mv[j];
    CHECK(with_zero.data()[i] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("gradients flow through encoder and decoders") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(38);
  init_model_params(ps, cfg, rng);
  Tensor x = random_frame(rng, 16, 16);
  std::vector<int32_t> labels(16 * 16);
  for (auto& l : labels) l = rng.uniform_int(0, 3);

  std::vector<Tensor> probes = {ps.p("enc/stem0/W"), ps.p("enc/fuse/W"),
                                ps.p("sem/conv/W"), ps.p("dep/conv0/W"),
                                ps.p("sem/head/b")};
  Fwd f;  // eval-mode forward keeps the closure free of dropout draws
  auto closure = [&]() {
    Tensor r = encode(x, ps, cfg, f);
    Tensor logits = decode_semantic(r, ps, cfg, f);
    Tensor z = decode_depth(r, ps, cfg, f);
    return add(mean(logits), mean(z));
  };
  const GradCheckReport rep = grad_check(closure, probes, 1e-4, 1e-5, 4, 99);
  CHECK(rep.checked == 20);
  CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err);
}

TEST_CASE("forward passes are deterministic in eval mode") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(39);
  init_model_params(ps, cfg, rng);
  Fwd f;
  Tensor x = random_frame(rng, 16, 16);
  Tensor a = decode_semantic(encode(x, ps, cfg, f), ps, cfg, f);
  Tensor b = decode_semantic(encode(x, ps, cfg, f), ps, cfg, f);
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * 8) == 0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const NetConfig cfg = tiny_config();
  ParameterStore ps;
  Rng rng(40);
  init_model_params(ps, cfg, rng);
  // leave some running statistics behind
  Fwd tf;
  tf.train = true;
  Rng drng(41);
  tf.rng = &drng;
  decode_depth(encode(random_frame(rng, 16, 16), ps, cfg, tf), ps, cfg, tf);

  const std::string dir = "/tmp/tff_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, ps, cfg);
  ParameterStore back;
  const NetConfig cfg2 = load_checkpoint(dir, back);
  CHECK(cfg2.encoder_channels == cfg.encoder_channels);
  CHECK(cfg2.class_count == cfg.class_count);
  REQUIRE(back.order == ps.order);
  for (const auto& name : ps.order) {
    const Tensor& a = ps.p(name);
    const Tensor& b = back.p(name);
    REQUIRE(a.shape() == b.shape());
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * 8) == 0);
    CHECK(b.requires_grad());
  }
  for (const auto& [name, st] : ps.stats) {
    REQUIRE(back.stats.count(name));
    CHECK(std::memcmp(back.stats.at(name).mean.data(), st.mean.data(),
                      st.mean.size() * 8) == 0);
    CHECK(std::memcmp(back.stats.at(name).var.data(), st.var.data(),
                      st.var.size() * 8) == 0);
  }
  std::filesystem::remove_all(dir);
}
