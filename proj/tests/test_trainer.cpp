#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "test_helpers.hpp"
#include "tff/ops.hpp"
#include "tff/synthdata.hpp"
#include "tff/trainer.hpp"

using namespace tff;
using tff_test::tiny_config;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.net = tiny_config();
  cfg.lr = 3e-3;
  cfg.epochs = 2;
  cfg.accum = 2;
  cfg.seed = 5;
  return cfg;
}

std::string make_dataset(const std::string& name, int count, int length,
                         const MotionProfile& profile, uint64_t seed) {
  const std::string dir = "/tmp/tff_train_" + name;
  std::filesystem::remove_all(dir);
  generate_dataset(dir, count, seed, length, profile,
                   CameraIntrinsics::defaults(16, 16), 4);
  return dir;
}

std::map<std::string, std::vector<double>> snapshot(const ParameterStore& ps) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : ps.params) out[name] = t.data();
  return out;
}

}  // namespace

TEST_CASE("adam with zero gradients applies only decoupled weight decay") {
  TrainConfig cfg = tiny_train_config();
  ParameterStore ps;
  Rng rng(81);
  init_model_params(ps, cfg.net, rng);
  const auto before = snapshot(ps);

  OptimizerState opt;
  const std::vector<std::string> all(ps.order);
  adam_step(ps, all, opt, cfg);
  CHECK(opt.step == 1);

  const double mult = 1.0 - cfg.lr * cfg.weight_decay;
  for (const auto& name : ps.order) {
    const auto& now = ps.p(name).data();
    const auto& was = before.at(name);
    for (size_t i = 0; i < now.size(); ++i) {
      if (decays(name))
        CHECK(now[i] == doctest::Approx(was[i] * mult).epsilon(1e-15));
      else
        CHECK(now[i] == was[i]);
    }
  }
  adam_step(ps, all, opt, cfg);
  CHECK(opt.step == 2);
}

TEST_CASE("adam under a constant gradient approaches a step of lr") {
  TrainConfig cfg = tiny_train_config();
  cfg.weight_decay = 0.0;
  cfg.lr = 1e-3;
  ParameterStore ps;
  Tensor p = Tensor::zeros({1});
  ps.add("x", std::move(p));
  OptimizerState opt;
  double prev = ps.p("x").value();
  for (int i = 0; i < 200; ++i) {
    ps.p("x").zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      // loss = 3 x, gradient a constant 3
      tape.backward(mul(Tensor::scalar(3.0), ps.p("x")));
    }
    adam_step(ps, {"x"}, opt, cfg);
    if (i > 50) {
      const double step_size = prev - ps.p("x").value();
      CHECK(step_size == doctest::Approx(cfg.lr).epsilon(1e-3));
    }
    prev = ps.p("x").value();
  }
}

TEST_CASE("weight decay targets weight matrices only") {
  CHECK(decays("enc/stem0/W"));
  CHECK(decays("gru/Wmc"));
  CHECK(decays("gate/Whid"));
  CHECK(!decays("enc/stem0/b"));
  CHECK(!decays("enc/stem0/bn_g"));
  CHECK(!decays("loss/s_seg"));
  CHECK(!decays("head/fc0/bn_b"));
}

TEST_CASE("motion pretrain leaves the encoder bitwise untouched") {
  const std::string dir = make_dataset("motion", 4, 4, MotionProfile::defaults(), 11);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  cfg.motion_outage_frames = 2;
  ParameterStore ps;
  Rng rng(82);
  init_model_params(ps, cfg.net, rng);
  const auto before = snapshot(ps);
  train_stage("motion-pretrain", dir, ps, cfg, nullptr);
  bool motion_changed = false;
  for (const auto& name : ps.order) {
    const auto& now = ps.p(name).data();
    const auto& was = before.at(name);
    const bool same = std::memcmp(now.data(), was.data(), now.size() * 8) == 0;
    if (name.rfind("enc/", 0) == 0 || name.rfind("sem/", 0) == 0 ||
        name.rfind("dep/", 0) == 0 || name.rfind("gate/", 0) == 0 ||
        name.rfind("loss/", 0) == 0 || name.rfind("fus/", 0) == 0) {
      CHECK_MESSAGE(same, name, " changed in a frozen group");
    } else if (!same) {
      motion_changed = true;
    }
  }
  CHECK(motion_changed);
  std::filesystem::remove_all(dir);
}

TEST_CASE("update pretrain leaves every decoder bitwise untouched") {
  const std::string dir = make_dataset("static", 4, 3, MotionProfile::static_camera(), 12);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  ParameterStore ps;
  Rng rng(83);
  init_model_params(ps, cfg.net, rng);
  const auto before = snapshot(ps);
  train_stage("update-pretrain", dir, ps, cfg, nullptr);
  bool trainable_changed = false;
  for (const auto& name : ps.order) {
    const auto& now = ps.p(name).data();
    const auto& was = before.at(name);
    const bool same = std::memcmp(now.data(), was.data(), now.size() * 8) == 0;
    if (name.rfind("sem/", 0) == 0 || name.rfind("dep/", 0) == 0 ||
        name.rfind("mot/", 0) == 0 || name.rfind("gru/", 0) == 0 ||
        name.rfind("head/", 0) == 0 || name.rfind("fus/", 0) == 0 ||
        name == "loss/s_trans" || name == "loss/s_rot") {
      CHECK_MESSAGE(same, name, " changed in a frozen group");
    } else if (!same) {
      trainable_changed = true;
    }
  }
  CHECK(trainable_changed);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stage and dataset mismatches are rejected") {
  const std::string dynamic = make_dataset("dyn", 2, 4, MotionProfile::defaults(), 13);
  const std::string still = make_dataset("still", 2, 4, MotionProfile::static_camera(), 14);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  cfg.motion_outage_frames = 2;
  ParameterStore ps;
  Rng rng(84);
  init_model_params(ps, cfg.net, rng);
  CHECK_THROWS_AS(train_stage("update-pretrain", dynamic, ps, cfg, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_stage("motion-pretrain", still, ps, cfg, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_stage("nonsense", dynamic, ps, cfg, nullptr),
                  std::invalid_argument);
  std::filesystem::remove_all(dynamic);
  std::filesystem::remove_all(still);
}

TEST_CASE("training is bit-reproducible from the seed") {
  const std::string dir = make_dataset("repro", 3, 3, MotionProfile::defaults(), 15);
  auto run = [&]() {
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 1;
    ParameterStore ps;
    Rng rng(85);
    init_model_params(ps, cfg.net, rng);
    train_stage("baseline", dir, ps, cfg, nullptr);
    return snapshot(ps);
  };
  const auto a = run(), b = run();
  for (const auto& [name, va] : a) {
    const auto& vb = b.at(name);
    CHECK(std::memcmp(va.data(), vb.data(), va.size() * 8) == 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("baseline training on the static toy task halves its loss") {
  const std::string dir = make_dataset("smoke", 8, 3, MotionProfile::static_camera(), 16);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 14;
  cfg.lr = 3e-3;
  ParameterStore ps;
  Rng rng(86);
  init_model_params(ps, cfg.net, rng);
  const StageMetrics m = train_stage("baseline", dir, ps, cfg, nullptr);
  CHECK_MESSAGE(m.last_epoch_loss <= 0.5 * m.first_epoch_loss, "first ",
                m.first_epoch_loss, " last ", m.last_epoch_loss);
  std::filesystem::remove_all(dir);
}

TEST_CASE("grad_check is exact for a linear model") {
  Tensor w = Tensor::from_data({4}, {0.3, -0.2, 0.9, 0.1}).set_requires_grad(true);
  Tensor x = Tensor::from_data({4}, {1.0, 2.0, -1.0, 0.5});
  const GradCheckReport r = grad_check([&] { return sum(mul(w, x)); }, {w}, 1e-9);
  CHECK(r.pass);
  CHECK(r.max_rel_err < 1e-9);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
  Tensor x = Tensor::from_data({3}, {0.4, -0.7, 1.2}).set_requires_grad(true);
  auto broken_double = [](const Tensor& in) {
    std::vector<double> out(in.data());
    for (auto& v : out) v *= 2.0;
    Tensor y = Tensor::from_data(in.shape(), std::move(out));
    auto xn = in.node(), yn = y.node();
    if (grad_enabled({xn})) {
      y.set_requires_grad(true);
      Tape::active()->record({xn}, yn, [xn, yn]() {
        xn->ensure_grad();
        for (size_t i = 0; i < xn->grad.size(); ++i)
          xn->grad[i] += 3.0 * yn->grad[i];  // wrong on purpose
      });
    }
    return y;
  };
  const GradCheckReport r = grad_check([&] { return sum(broken_double(x)); }, {x}, 1e-4);
  CHECK(!r.pass);
  CHECK(r.max_rel_err > 0.1);
}

TEST_CASE("train config json round-trips") {
  TrainConfig cfg = tiny_train_config();
  cfg.lr = 0.00025;
  cfg.motion_outage_frames = 3;
  cfg.static_halfnoise = false;
  const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  CHECK(back.lr == cfg.lr);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.motion_outage_frames == 3);
  CHECK(back.static_halfnoise == false);
  CHECK(back.net.encoder_channels == cfg.net.encoder_channels);
  CHECK(back.net.psp_kernels == cfg.net.psp_kernels);
}
