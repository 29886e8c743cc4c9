#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tff/eval.hpp"
#include "tff/filter.hpp"
#include "tff/networks.hpp"
#include "tff/perturb.hpp"
#include "tff/synthdata.hpp"
#include "tff/tensor_io.hpp"
#include "tff/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw CLI::ValidationError("--size", "expected HxW");
  return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
}

int cmd_gen_data(const std::string& out, int train_n, int test_n, uint64_t seed,
                 const std::string& size, int len, int classes,
                 const std::string& profile_name) {
  const auto [h, w] = parse_size(size);
  const tff::CameraIntrinsics K = tff::CameraIntrinsics::defaults(w, h);
  const tff::MotionProfile profile = profile_name == "static"
                                         ? tff::MotionProfile::static_camera()
                                         : tff::MotionProfile::defaults();
  tff::generate_dataset(out + "/train", train_n, tff::mix_seed(seed, 1), len, profile,
                        K, classes);
  tff::generate_dataset(out + "/test", test_n, tff::mix_seed(seed, 2), len, profile, K,
                        classes);
  std::cout << "wrote " << train_n << " train / " << test_n << " test sequences to "
            << out << "\n";
  return 0;
}

json spec_to_json(const tff::PerturbationSpec& s) {
  json j;
  j["noise_variance"] = s.noise_variance;
  j["clutter_kernel_count"] = s.clutter_kernel_count;
  json kernels = json::array();
  for (const auto& k : s.clutter_kernels)
    kernels.push_back({{"center_x", k.cx}, {"center_y", k.cy}, {"std_x", k.sx}, {"std_y", k.sy}});
  j["clutter_kernels"] = kernels;
  j["lighting_frame_index"] = s.lighting_frame_index;
  j["lighting_scale"] = s.lighting_scale;
  j["lighting_sign"] = s.lighting_sign;
  j["seed"] = s.seed;
  return j;
}

int cmd_perturb(const std::string& in, const std::string& out, uint64_t seed) {
  const auto dirs = tff::list_sequence_dirs(in);
  if (dirs.empty()) throw std::runtime_error("no sequences under " + in);
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < dirs.size(); ++i) {
    tff::SequenceSample s = tff::load_sequence(dirs[i]);
    const tff::PerturbationSpec spec =
        tff::sample_spec(tff::mix_seed(seed, i), s.intrinsics.width,
                         s.intrinsics.height, s.length());
    s.frames = tff::perturb_sequence(s.frames, spec);
    const std::string dst = out + "/" + fs::path(dirs[i]).filename().string();
    tff::save_sequence(dst, s);
    std::ofstream os(dst + "/perturbation.json");
    os << spec_to_json(spec).dump(2) << "\n";
  }
  std::cout << "perturbed " << dirs.size() << " sequences into " << out << "\n";
  return 0;
}

int cmd_train(const std::string& stage, const std::string& data, const std::string& out,
              const std::string& config_path, const std::string& init_ckpt,
              const std::string& log_path) {
  tff::TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw std::runtime_error("cannot read config " + config_path);
    std::stringstream ss;
    ss << is.rdbuf();
    cfg = tff::train_config_from_json(ss.str());
  }
  tff::ParameterStore ps;
  if (!init_ckpt.empty()) {
    cfg.net = tff::load_checkpoint(init_ckpt, ps);
  } else {
    tff::Rng rng(tff::mix_seed(cfg.seed, 0x1117));
    tff::init_model_params(ps, cfg.net, rng);
  }
  std::ofstream log;
  if (!log_path.empty()) log.open(log_path);
  const tff::StageMetrics m =
      tff::train_stage(stage, data, ps, cfg, log.is_open() ? &log : nullptr);
  tff::save_checkpoint(out, ps, cfg.net);
  for (const auto& line : m.log_lines) std::cout << line << "\n";
  std::cout << "saved checkpoint to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& experiment, const std::string& data,
             const std::string& ckpt, const std::string& baseline_ckpt,
             const std::string& out, uint64_t seed) {
  fs::create_directories(out);
  tff::ExperimentReport rep;
  if (experiment == "static") {
    rep = tff::experiment_static(data, ckpt, out, seed);
  } else if (experiment == "motion") {
    rep = tff::experiment_motion(data, ckpt, out, seed);
  } else if (experiment == "compare") {
    if (baseline_ckpt.empty())
      throw std::runtime_error("compare needs --baseline-ckpt");
    rep = tff::experiment_compare(data, ckpt, baseline_ckpt, out, seed);
  } else {
    throw std::runtime_error("unknown experiment " + experiment);
  }
  std::ofstream os(out + "/report.json");
  os << rep.to_json() << "\n";
  std::cout << rep.table_text();
  std::cout << "wall seconds: " << rep.wall_seconds << "\n";
  std::cout << "report written to " << out << "/report.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal feature filtering for robust segmentation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "render synthetic sequence datasets");
  std::string gen_out, gen_size = "32x32", gen_profile = "smooth";
  int gen_train = 100, gen_test = 20, gen_len = 7, gen_classes = 6;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--train", gen_train);
  gen->add_option("--test", gen_test);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--size", gen_size);
  gen->add_option("--len", gen_len);
  gen->add_option("--classes", gen_classes);
  gen->add_option("--profile", gen_profile)->check(CLI::IsMember({"smooth", "static"}));

  auto* per = app.add_subcommand("perturb", "apply noise/clutter/lighting corruption");
  std::string per_in, per_out;
  uint64_t per_seed = 1;
  per->add_option("--in", per_in)->required();
  per->add_option("--out", per_out)->required();
  per->add_option("--seed", per_seed);

  auto* tr = app.add_subcommand("train", "run one training stage");
  std::string tr_stage, tr_data, tr_out, tr_config, tr_init, tr_log;
  tr->add_option("--stage", tr_stage)
      ->required()
      ->check(CLI::IsMember({"baseline", "motion-pretrain", "update-pretrain", "finetune"}));
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--config", tr_config);
  tr->add_option("--init", tr_init);
  tr->add_option("--log", tr_log);

  auto* ev = app.add_subcommand("eval", "run a desk-scale experiment");
  std::string ev_exp, ev_data, ev_ckpt, ev_base, ev_out;
  uint64_t ev_seed = 1;
  ev->add_option("--experiment", ev_exp)
      ->required()
      ->check(CLI::IsMember({"static", "motion", "compare"}));
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--baseline-ckpt", ev_base);
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--seed", ev_seed);

  auto* wd = app.add_subcommand("warp-demo", "warp frames with ground-truth geometry");
  std::string wd_seq, wd_out;
  wd->add_option("--seq", wd_seq)->required();
  wd->add_option("--out", wd_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_train, gen_test, gen_seed, gen_size, gen_len,
                          gen_classes, gen_profile);
    if (per->parsed()) return cmd_perturb(per_in, per_out, per_seed);
    if (tr->parsed()) return cmd_train(tr_stage, tr_data, tr_out, tr_config, tr_init, tr_log);
    if (ev->parsed()) return cmd_eval(ev_exp, ev_data, ev_ckpt, ev_base, ev_out, ev_seed);
    if (wd->parsed()) {
      tff::warp_demo(wd_seq, wd_out);
      std::cout << "warp demo written to " << wd_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
