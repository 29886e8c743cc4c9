#include "tff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "tff/corrupt.hpp"
#include "tff/filter.hpp"
#include "tff/losses.hpp"
#include "tff/ops.hpp"

using nlohmann::json;

namespace tff {

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["accum"] = c.accum;
  j["seed"] = c.seed;
  j["max_steps_per_epoch"] = c.max_steps_per_epoch;
  j["motion_outage_frames"] = c.motion_outage_frames;
  j["static_halfnoise"] = c.static_halfnoise;
  j["net"] = json::parse(net_config_to_json(c.net));
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("weight_decay", c.weight_decay);
  get("epochs", c.epochs);
  get("accum", c.accum);
  get("seed", c.seed);
  get("max_steps_per_epoch", c.max_steps_per_epoch);
  get("motion_outage_frames", c.motion_outage_frames);
  get("static_halfnoise", c.static_halfnoise);
  if (j.contains("net")) c.net = net_config_from_json(j.at("net").dump());
  return c;
}

bool decays(const std::string& name) {
  const auto pos = name.rfind('/');
  const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
  return !leaf.empty() && leaf[0] == 'W';
}

void adam_step(ParameterStore& ps, const std::vector<std::string>& trainable,
               OptimizerState& opt, const TrainConfig& cfg) {
  check_arg(cfg.lr > 0, "adam: lr must be positive");
  check_arg(cfg.beta1 > 0 && cfg.beta1 < 1 && cfg.beta2 > 0 && cfg.beta2 < 1,
            "adam: betas must lie in (0,1)");
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, (double)opt.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, (double)opt.step);
  for (const auto& name : trainable) {
    Tensor& p = ps.p(name);
    auto& mom = opt.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(p.numel(), 0.0);
      mom.v.assign(p.numel(), 0.0);
    }
    const bool has_grad = p.has_grad();
    auto& data = p.mutable_data();
    const double decay_mult = decays(name) ? 1.0 - cfg.lr * cfg.weight_decay : 1.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double g = has_grad ? p.grad()[i] : 0.0;
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      data[i] = data[i] * decay_mult - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::vector<std::string> stage_trainable(const std::string& stage,
                                         const ParameterStore& ps) {
  auto with_prefixes = [&](const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const auto& name : ps.order)
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          out.push_back(name);
          break;
        }
    return out;
  };
  if (stage == "baseline")
    return with_prefixes({"enc/", "sem/", "dep/", "mot/", "head/", "loss/"});
  if (stage == "motion-pretrain")
    return with_prefixes({"mot/", "gru/", "head/"});
  if (stage == "update-pretrain")
    return with_prefixes({"enc/", "gate/", "loss/s_seg", "loss/s_depl1", "loss/s_depsig"});
  if (stage == "finetune")
    return with_prefixes({"enc/", "sem/", "dep/", "mot/", "gru/", "head/", "gate/", "loss/"});
  check_arg(false, "unknown stage " + stage);
  return {};
}

namespace {

Tensor mean_of(const std::vector<Tensor>& xs) {
  Tensor acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return mul(acc, Tensor::scalar(1.0 / (double)xs.size()));
}

struct Components {
  std::vector<std::pair<std::string, Tensor>> items;
  void put(const std::string& name, Tensor value) { items.emplace_back(name, value); }
  const Tensor* find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return &v;
    return nullptr;
  }
};

Components filtered_sequence_losses(const SequenceSample& sample,
                                    const std::vector<Tensor>& frames,
                                    ParameterStore& ps, const NetConfig& net,
                                    const Fwd& f, bool identity_motion) {
  const int ds = net.downsample();
  FilterState state = FilterState::initial(net);
  std::vector<Tensor> seg, dl1, dsig;
  std::vector<Tensor> trans, rot;
  StepOptions opt;
  opt.force_identity_motion = identity_motion;
  for (int t = 0; t < (int)frames.size(); ++t) {
    StepResult out = step(state, frames[t], ps, net, sample.intrinsics, f, opt);
    seg.push_back(seg_ce(out.logits, sample.labels[t]));
    const Tensor z_gt = inverse_depth_target(sample.depths[t], ds);
    dl1.push_back(depth_l1(z_gt, out.z_hat));
    dsig.push_back(depth_sig(z_gt, out.z_hat));
    if (t >= 1 && !identity_motion) {
      auto [lt, lr] = motion_losses(out.tau, sample.relative_motion(t));
      trans.push_back(lt);
      rot.push_back(lr);
    }
    state = out.state;
  }
  Components c;
  c.put("seg", mean_of(seg));
  c.put("depl1", mean_of(dl1));
  c.put("depsig", mean_of(dsig));
  if (!trans.empty()) {
    c.put("trans", mean_of(trans));
    c.put("rot", mean_of(rot));
  }
  return c;
}

Components motion_sequence_losses(const SequenceSample& sample,
                                  const std::vector<Tensor>& frames,
                                  ParameterStore& ps, const NetConfig& net,
                                  const Fwd& f) {
  // encoder is frozen in this stage; its outputs are constants
  std::vector<Tensor> enc;
  {
    NoGradScope no_grad;
    for (const auto& fr : frames) enc.push_back(encode(fr, ps, net, f).detached());
  }
  Tensor h = Tensor::zeros({net.motion_state_width});
  std::vector<Tensor> trans, rot;
  for (int t = 1; t < (int)frames.size(); ++t) {
    Tensor pair = concat({enc[t - 1], enc[t]}, 0);
    Tensor m = decode_motion(pair, ps, net, f);
    auto [h_new, tau] = motion_step(h, m, ps, net, f);
    h = h_new;
    auto [lt, lr] = motion_losses(tau, sample.relative_motion(t));
    trans.push_back(lt);
    rot.push_back(lr);
  }
  Components c;
  c.put("trans", mean_of(trans));
  c.put("rot", mean_of(rot));
  return c;
}

Components baseline_pair_losses(const SequenceSample& sample, int a,
                                ParameterStore& ps, const NetConfig& net,
                                const Fwd& f) {
  const int ds = net.downsample();
  Tensor ra = encode(sample.frames[a], ps, net, f);
  Tensor rb = encode(sample.frames[a + 1], ps, net, f);
  std::vector<Tensor> seg, dl1, dsig;
  const Tensor* reps[2] = {&ra, &rb};
  for (int i = 0; i < 2; ++i) {
    const int t = a + i;
    Tensor logits = decode_semantic(*reps[i], ps, net, f);
    Tensor z_hat = decode_depth(*reps[i], ps, net, f);
    seg.push_back(seg_ce(logits, sample.labels[t]));
    const Tensor z_gt = inverse_depth_target(sample.depths[t], ds);
    dl1.push_back(depth_l1(z_gt, z_hat));
    dsig.push_back(depth_sig(z_gt, z_hat));
  }
  // the pair model reuses the filter's pose head on the motion features
  Tensor m = decode_motion(concat({ra, rb}, 0), ps, net, f);
  TauTensors tau = motion_head(m, ps, net, f);
  auto [lt, lr] = motion_losses(tau, sample.relative_motion(a + 1));
  Components c;
  c.put("seg", mean_of(seg));
  c.put("depl1", mean_of(dl1));
  c.put("depsig", mean_of(dsig));
  c.put("trans", lt);
  c.put("rot", lr);
  return c;
}

bool is_static_sequence(const SequenceSample& s) {
  for (size_t t = 1; t < s.poses.size(); ++t) {
    for (int i = 0; i < 9; ++i)
      if (std::fabs(s.poses[t].R[i] - s.poses[0].R[i]) > 1e-12) return false;
    for (int i = 0; i < 3; ++i)
      if (std::fabs(s.poses[t].T[i] - s.poses[0].T[i]) > 1e-12) return false;
  }
  return true;
}

}  // namespace

StageMetrics train_stage(const std::string& stage, const std::string& data_dir,
                         ParameterStore& ps, const TrainConfig& cfg,
                         std::ostream* metrics_log) {
  cfg.net.validate();
  const std::vector<std::string> seq_dirs = list_sequence_dirs(data_dir);
  check_arg(!seq_dirs.empty(), "train_stage: no sequences under " + data_dir);
  const std::vector<std::string> trainable = stage_trainable(stage, ps);
  if (stage == "baseline")
    check_arg(cfg.net.motion_state_width == cfg.net.motion_feature_width,
              "baseline: pose head reuse needs motion state width == feature width");

  // freeze everything the stage does not own
  std::vector<std::string> frozen;
  for (const auto& name : ps.order)
    if (std::find(trainable.begin(), trainable.end(), name) == trainable.end()) {
      frozen.push_back(name);
      ps.p(name).set_requires_grad(false);
    }

  OptimizerState opt;
  Rng order_rng(mix_seed(cfg.seed, 0x0D0E));
  Rng dropout_rng(mix_seed(cfg.seed, 0xD0));
  Fwd fwd;
  fwd.train = true;
  fwd.rng = &dropout_rng;
  fwd.bn_eval_running = cfg.net.eval_use_running_stats;

  StageMetrics metrics;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(seq_dirs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    if (cfg.max_steps_per_epoch > 0 && (int)order.size() > cfg.max_steps_per_epoch)
      order.resize(cfg.max_steps_per_epoch);

    std::map<std::string, double> sums;
    double total_sum = 0;
    int count = 0;

    for (size_t pos = 0; pos < order.size();) {
      const int group = std::min<int>(cfg.accum, (int)(order.size() - pos));
      ps.zero_grads();
      for (int gi = 0; gi < group; ++gi, ++pos) {
        const int seq_index = order[pos];
        const SequenceSample sample = load_sequence(seq_dirs[seq_index]);
        check_arg(sample.length() >= 2, "train_stage: sequence too short");
        const uint64_t seq_salt =
            mix_seed(cfg.seed, (uint64_t)seq_index * 1000003ULL + (uint64_t)epoch);

        Tape tape;
        Components comps;
        Tensor total;
        {
          TapeScope scope(tape);
          if (stage == "baseline") {
            const int a = order_rng.uniform_int(0, sample.length() - 2);
            comps = baseline_pair_losses(sample, a, ps, cfg.net, fwd);
            total = multitask_total(comps.items, ps);
          } else if (stage == "motion-pretrain") {
            check_arg(!is_static_sequence(sample),
                      "motion-pretrain: dataset has static sequences");
            check_arg(sample.length() > cfg.motion_outage_frames + 1,
                      "motion-pretrain: outage longer than the sequence");
            // half the visits see an outage suffix, half stay clean, so
            // the estimator trains on clean pairs and the recurrence
            // learns to hold through garbage
            Rng outage_rng(mix_seed(seq_salt, 7));
            std::vector<Tensor> frames = sample.frames;
            if (outage_rng.bernoulli(0.5))
              frames = blank_suffix_with_noise(frames, cfg.motion_outage_frames,
                                               mix_seed(seq_salt, 8));
            comps = motion_sequence_losses(sample, frames, ps, cfg.net, fwd);
            total = add(*comps.find("trans"), *comps.find("rot"));
          } else if (stage == "update-pretrain") {
            check_arg(is_static_sequence(sample),
                      "update-pretrain: needs static sequences");
            std::vector<Tensor> frames = sample.frames;
            if (cfg.static_halfnoise)
              for (size_t t = 0; t < frames.size(); ++t)
                frames[t] =
                    replace_left_half_with_noise(frames[t], mix_seed(seq_salt, t));
            comps = filtered_sequence_losses(sample, frames, ps, cfg.net, fwd, true);
            total = multitask_total(comps.items, ps);
          } else if (stage == "finetune") {
            comps = filtered_sequence_losses(sample, sample.frames, ps, cfg.net, fwd,
                                             false);
            total = multitask_total(comps.items, ps);
          } else {
            check_arg(false, "unknown stage " + stage);
          }
          Tensor scaled = mul(total, Tensor::scalar(1.0 / group));
          tape.backward(scaled);
        }
        for (const auto& [name, value] : comps.items) sums[name] += value.value();
        total_sum += total.value();
        ++count;
      }
      adam_step(ps, trainable, opt, cfg);
    }

    json line;
    line["stage"] = stage;
    line["epoch"] = epoch;
    line["sequences"] = count;
    line["loss_total"] = total_sum / count;
    for (const auto& [name, s] : sums) line["loss_" + name] = s / count;
    for (const char* s : {"s_seg", "s_depl1", "s_depsig", "s_trans", "s_rot"})
      line[s] = ps.p(std::string("loss/") + s).value();
    metrics.log_lines.push_back(line.dump());
    if (metrics_log) (*metrics_log) << line.dump() << "\n";
    if (epoch == 0) metrics.first_epoch_loss = total_sum / count;
    metrics.last_epoch_loss = total_sum / count;
  }

  for (const auto& name : frozen) ps.p(name).set_requires_grad(true);
  return metrics;
}

GradCheckReport grad_check(const std::function<Tensor()>& closure,
                           const std::vector<Tensor>& leaves, double tolerance,
                           double fd_step, int max_per_leaf, uint64_t select_seed) {
  for (const auto& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = closure();
    tape.backward(loss);
  }
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheckReport report;
  Rng pick(select_seed);
  NoGradScope no_grad;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    std::vector<int64_t> idx(leaf.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (max_per_leaf > 0 && (int64_t)idx.size() > max_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), pick.engine());
      idx.resize(max_per_leaf);
    }
    for (int64_t i : idx) {
      auto& data = leaf.mutable_data();
      const double saved = data[i];
      data[i] = saved + fd_step;
      const double up = closure().value();
      data[i] = saved - fd_step;
      const double down = closure().value();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      const double a = analytic[li][i];
      const double err = std::fabs(fd - a) / std::max({std::fabs(fd), std::fabs(a), 1e-6});
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.checked;
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace tff
