#include "tff/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tff/corrupt.hpp"
#include "tff/filter.hpp"
#include "tff/networks.hpp"
#include "tff/synthdata.hpp"
#include "tff/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tff {

void ConfusionMatrix::add_labels(const std::vector<int32_t>& gt,
                                 const std::vector<int32_t>& pred) {
  check_arg(gt.size() == pred.size(), "confusion: label count mismatch");
  for (size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i]);
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  check_arg(k == other.k, "confusion: class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

double mean_iou(const ConfusionMatrix& m) {
  check_arg(m.total() > 0, "mean_iou: empty confusion matrix");
  double acc = 0;
  int present = 0;
  for (int c = 0; c < m.k; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < m.k; ++j) {
      row += m.counts[(size_t)c * m.k + j];
      col += m.counts[(size_t)j * m.k + c];
    }
    if (row == 0) continue;  // class absent from ground truth
    const int64_t diag = m.counts[(size_t)c * m.k + c];
    acc += (double)diag / (double)(row + col - diag);
    ++present;
  }
  check_arg(present > 0, "mean_iou: no class present in ground truth");
  return acc / present;
}

std::vector<int32_t> argmax_labels(const Tensor& logits) {
  const int k = logits.dim(0);
  const int64_t n = (int64_t)logits.dim(1) * logits.dim(2);
  std::vector<int32_t> out(n);
  const auto& lv = logits.data();
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    double bv = lv[i];
    for (int c = 1; c < k; ++c)
      if (lv[c * n + i] > bv) {
        bv = lv[c * n + i];
        best = c;
      }
    out[i] = best;
  }
  return out;
}

std::string ExperimentReport::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["config"] = config_echo.empty() ? json() : json::parse(config_echo);
  json rws = json::array();
  for (const auto& row : rows) {
    json r;
    for (size_t i = 0; i < columns.size(); ++i) r[columns[i]] = row[i];
    rws.push_back(r);
  }
  j["rows"] = rws;
  return j.dump(2);
}

std::string ExperimentReport::table_text() const {
  std::ostringstream os;
  for (const auto& c : columns) {
    os.width(14);
    os << c;
  }
  os << "\n";
  for (const auto& row : rows) {
    for (double v : row) {
      os.width(14);
      os.precision(5);
      os << std::fixed << v;
    }
    os << "\n";
  }
  return os.str();
}

double ExperimentReport::cell(const std::string& column, int row) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == column) return rows.at(row).at(i);
  check_arg(false, "report: unknown column " + column);
  return 0;
}

namespace {

constexpr std::array<std::array<int, 3>, 8> kLabelPalette = {{
    {40, 40, 40},
    {220, 70, 60},
    {70, 180, 80},
    {70, 110, 220},
    {230, 200, 60},
    {180, 80, 210},
    {70, 200, 200},
    {240, 150, 60},
}};

unsigned char to_byte(double v) {
  return (unsigned char)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
}

struct EvalModel {
  ParameterStore ps;
  NetConfig net;
};

EvalModel load_model(const std::string& ckpt_dir) {
  EvalModel m;
  m.net = load_checkpoint(ckpt_dir, m.ps);
  return m;
}

Fwd eval_fwd(const NetConfig& net) {
  Fwd f;
  f.train = false;
  f.bn_eval_running = net.eval_use_running_stats;
  return f;
}

// composed successive projection of frame 0 into frame t
struct SuccessiveProjection {
  Tensor rgb;
  std::vector<int32_t> labels;
  Tensor validity;
};

SuccessiveProjection project_first_frame(const SequenceSample& s,
                                         const RigidTransform& tau_0_to_t) {
  SuccessiveProjection out;
  const int h = s.intrinsics.height, w = s.intrinsics.width;
  // stack rgb + labels so both share one winner assignment
  std::vector<double> packed;
  packed.reserve((size_t)4 * h * w);
  packed.insert(packed.end(), s.frames[0].data().begin(), s.frames[0].data().end());
  for (int32_t v : s.labels[0]) packed.push_back((double)v);
  const Tensor features = Tensor::from_data({4, h, w}, std::move(packed));
  const WarpResult wr =
      project_warp(features, DepthMap{s.depths[0]}, tau_0_to_t, s.intrinsics);
  const auto& wv = wr.warped.data();
  const int64_t n = (int64_t)h * w;
  out.rgb = Tensor::from_data({3, h, w}, std::vector<double>(wv.begin(), wv.begin() + 3 * n));
  out.labels.resize(n);
  for (int64_t i = 0; i < n; ++i) out.labels[i] = (int32_t)std::lround(wv[3 * n + i]);
  out.validity = wr.validity;
  return out;
}

}  // namespace

void emit_image(const Tensor& t, const std::string& path, const std::string& mode) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image: " + path);
  if (mode == "rgb") {
    check_arg(t.shape().size() == 3 && t.dim(0) == 3, "emit_image: rgb wants [3,H,W]");
    const int h = t.dim(1), w = t.dim(2);
    const int64_t n = (int64_t)h * w;
    os << "P6\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) os.put((char)to_byte(t.data()[c * n + i]));
  } else if (mode == "gray" || mode == "depth") {
    check_arg(t.shape().size() == 3 && t.dim(0) == 1, "emit_image: gray wants [1,H,W]");
    const int h = t.dim(1), w = t.dim(2);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < (int64_t)h * w; ++i) {
      double v = t.data()[i];
      if (mode == "depth") v = v > 0 ? 1.0 / v : 0.0;  // inverse depth as gray
      os.put((char)to_byte(v));
    }
  } else if (mode == "labels") {
    check_arg(t.shape().size() == 3 && t.dim(0) == 1, "emit_image: labels want [1,H,W]");
    const int h = t.dim(1), w = t.dim(2);
    os << "P6\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < (int64_t)h * w; ++i) {
      const int id = (int)std::lround(t.data()[i]);
      const auto& c = kLabelPalette[((id % 8) + 8) % 8];
      os.put((char)c[0]).put((char)c[1]).put((char)c[2]);
    }
  } else {
    check_arg(false, "emit_image: unknown mode " + mode);
  }
  if (!os) throw std::runtime_error("image write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read image: " + path);
  std::string magic;
  int w, h, maxv;
  is >> magic >> w >> h >> maxv;
  check_arg(magic == "P6" && maxv == 255, "read_ppm: unsupported format");
  is.get();  // single whitespace after header
  std::vector<double> data((size_t)3 * h * w);
  const int64_t n = (int64_t)h * w;
  for (int64_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) data[c * n + i] = (double)(unsigned char)is.get() / 255.0;
  return Tensor::from_data({3, h, w}, std::move(data));
}

ExperimentReport experiment_static(const std::string& data_dir, const std::string& ckpt_dir,
                                   const std::string& out_dir, uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalModel model = load_model(ckpt_dir);
  const Fwd f = eval_fwd(model.net);
  const auto dirs = list_sequence_dirs(data_dir);
  check_arg(!dirs.empty(), "experiment_static: no sequences in " + data_dir);
  constexpr int kFrames = 4;

  std::vector<std::vector<ConfusionMatrix>> per_seq(
      dirs.size(), std::vector<ConfusionMatrix>(kFrames, ConfusionMatrix(model.net.class_count)));

#pragma omp parallel for schedule(dynamic)
  for (size_t si = 0; si < dirs.size(); ++si) {
    const SequenceSample s = load_sequence(dirs[si]);
    FilterState state = FilterState::initial(model.net);
    StepOptions opt;
    opt.force_identity_motion = true;
    for (int t = 0; t < kFrames; ++t) {
      const Tensor frame = replace_left_half_with_noise(
          s.frames[0], mix_seed(mix_seed(seed, si), (uint64_t)t));
      StepResult out = step(state, frame, model.ps, model.net, s.intrinsics, f, opt);
      per_seq[si][t].add_labels(s.labels[0], argmax_labels(out.logits));
      state = out.state;
      if (si < 2 && !out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof(name), "/static_seq%zu_f%d", si, t);
        emit_image(frame, out_dir + name + "_input.ppm", "rgb");
        emit_image(out.gate, out_dir + name + "_gate.pgm", "gray");
      }
    }
  }

  ExperimentReport rep;
  rep.experiment = "static";
  rep.seed = seed;
  rep.config_echo = net_config_to_json(model.net);
  rep.columns = {"frame", "mean_iou"};
  for (int t = 0; t < kFrames; ++t) {
    ConfusionMatrix m(model.net.class_count);
    for (size_t si = 0; si < dirs.size(); ++si) m.merge(per_seq[si][t]);
    rep.rows.push_back({(double)(t + 1), mean_iou(m)});
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

ExperimentReport experiment_motion(const std::string& data_dir, const std::string& ckpt_dir,
                                   const std::string& out_dir, uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalModel model = load_model(ckpt_dir);
  const Fwd f = eval_fwd(model.net);
  const auto dirs = list_sequence_dirs(data_dir);
  check_arg(!dirs.empty(), "experiment_motion: no sequences in " + data_dir);

  const SequenceSample probe = load_sequence(dirs[0]);
  const int length = probe.length();
  check_arg(length >= 4, "experiment_motion: sequences too short");
  const int pairs = length - 1;
  const int blanked = length / 2;

  struct SeqResult {
    std::vector<double> dt, dr;
    int64_t agree = 0, valid = 0;
  };
  std::vector<SeqResult> results(dirs.size());

#pragma omp parallel for schedule(dynamic)
  for (size_t si = 0; si < dirs.size(); ++si) {
    const SequenceSample s = load_sequence(dirs[si]);
    const auto frames =
        blank_suffix_with_noise(s.frames, blanked, mix_seed(seed, si));
    FilterState state = FilterState::initial(model.net);
    SeqResult& r = results[si];
    RigidTransform pred_chain = RigidTransform::identity();
    RigidTransform gt_chain = RigidTransform::identity();
    for (int t = 0; t < (int)frames.size(); ++t) {
      StepResult out = step(state, frames[t], model.ps, model.net, s.intrinsics, f);
      state = out.state;
      if (t == 0) continue;
      const RigidTransform tau_pred = out.tau.value();
      const RigidTransform tau_gt = s.relative_motion(t);
      r.dt.push_back(translation_error(tau_pred, tau_gt));
      r.dr.push_back(rotation_error(tau_pred, tau_gt));
      pred_chain = compose(tau_pred, pred_chain);
      gt_chain = compose(tau_gt, gt_chain);
      // ground-truth successive projection of frame one, label agreement
      SuccessiveProjection gt_proj = project_first_frame(s, gt_chain);
      const auto& valid = gt_proj.validity.data();
      for (size_t i = 0; i < valid.size(); ++i) {
        if (valid[i] == 0.0) continue;
        r.valid += 1;
        if (gt_proj.labels[i] == s.labels[t][i]) r.agree += 1;
      }
      if (si < 2 && !out_dir.empty()) {
        SuccessiveProjection pred_proj = project_first_frame(s, pred_chain);
        char name[64];
        std::snprintf(name, sizeof(name), "/motion_seq%zu_f%d", si, t);
        emit_image(frames[t], out_dir + name + "_input.ppm", "rgb");
        emit_image(gt_proj.rgb, out_dir + name + "_proj_gt.ppm", "rgb");
        emit_image(pred_proj.rgb, out_dir + name + "_proj_pred.ppm", "rgb");
      }
    }
  }

  ExperimentReport rep;
  rep.experiment = "motion";
  rep.seed = seed;
  rep.config_echo = net_config_to_json(model.net);
  rep.columns = {"pair", "delta_t", "delta_r", "blanked", "finite_frac", "dr_below_halfpi"};
  for (int p = 0; p < pairs; ++p) {
    double dt = 0, dr = 0, finite = 0, below = 0;
    for (const auto& r : results) {
      dt += r.dt[p];
      dr += r.dr[p];
      finite += std::isfinite(r.dt[p]) && std::isfinite(r.dr[p]) ? 1 : 0;
      below += r.dr[p] < M_PI / 2 ? 1 : 0;
    }
    const double n = (double)results.size();
    rep.rows.push_back({(double)(p + 1), dt / n, dr / n,
                        p + 1 >= length - blanked ? 1.0 : 0.0, finite / n, below / n});
  }
  // aggregate label agreement of the ground-truth successive projection
  int64_t agree = 0, valid = 0;
  for (const auto& r : results) {
    agree += r.agree;
    valid += r.valid;
  }
  rep.columns.push_back("gt_projection_agreement");
  for (auto& row : rep.rows) row.push_back(valid > 0 ? (double)agree / valid : 0.0);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

ExperimentReport experiment_compare(const std::string& data_dir,
                                    const std::string& ckpt_filtered,
                                    const std::string& ckpt_baseline,
                                    const std::string& out_dir, uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalModel filt = load_model(ckpt_filtered);
  EvalModel base = load_model(ckpt_baseline);
  const Fwd ff = eval_fwd(filt.net);
  const Fwd fb = eval_fwd(base.net);
  const auto dirs = list_sequence_dirs(data_dir);
  check_arg(!dirs.empty(), "experiment_compare: no sequences in " + data_dir);

  const SequenceSample probe = load_sequence(dirs[0]);
  const int length = probe.length();

  std::vector<std::vector<ConfusionMatrix>> conf_f(
      dirs.size(), std::vector<ConfusionMatrix>(length, ConfusionMatrix(filt.net.class_count)));
  std::vector<std::vector<ConfusionMatrix>> conf_b = conf_f;

#pragma omp parallel for schedule(dynamic)
  for (size_t si = 0; si < dirs.size(); ++si) {
    const SequenceSample s = load_sequence(dirs[si]);
    FilterState state = FilterState::initial(filt.net);
    for (int t = 0; t < s.length(); ++t) {
      StepResult out = step(state, s.frames[t], filt.ps, filt.net, s.intrinsics, ff);
      state = out.state;
      conf_f[si][t].add_labels(s.labels[t], argmax_labels(out.logits));
      Tensor rb = encode(s.frames[t], base.ps, base.net, fb);
      Tensor logits_b = decode_semantic(rb, base.ps, base.net, fb);
      conf_b[si][t].add_labels(s.labels[t], argmax_labels(logits_b));
      if (si < 2 && !out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof(name), "/compare_seq%zu_f%d", si, t);
        emit_image(s.frames[t], out_dir + name + "_input.ppm", "rgb");
        emit_image(out.gate, out_dir + name + "_gate.pgm", "gray");
        std::vector<double> lab(out.logits.dim(1) * (size_t)out.logits.dim(2));
        const auto pred = argmax_labels(out.logits);
        for (size_t i = 0; i < lab.size(); ++i) lab[i] = pred[i];
        emit_image(Tensor::from_data({1, out.logits.dim(1), out.logits.dim(2)}, lab),
                   out_dir + name + "_pred.ppm", "labels");
      }
    }
  }

  ExperimentReport rep;
  rep.experiment = "compare";
  rep.seed = seed;
  rep.config_echo = net_config_to_json(filt.net);
  rep.columns = {"frame", "mean_iou_filtered", "mean_iou_baseline", "gap"};
  for (int t = 0; t < length; ++t) {
    ConfusionMatrix mf(filt.net.class_count), mb(base.net.class_count);
    for (size_t si = 0; si < dirs.size(); ++si) {
      mf.merge(conf_f[si][t]);
      mb.merge(conf_b[si][t]);
    }
    const double f_iou = mean_iou(mf), b_iou = mean_iou(mb);
    rep.rows.push_back({(double)(t + 1), f_iou, b_iou, f_iou - b_iou});
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

void warp_demo(const std::string& seq_dir, const std::string& out_dir) {
  const SequenceSample s = load_sequence(seq_dir);
  fs::create_directories(out_dir);
  for (int t = 1; t < s.length(); ++t) {
    const RigidTransform tau = s.relative_motion(t);
    const WarpResult wr =
        project_warp(s.frames[t - 1], DepthMap{s.depths[t - 1]}, tau, s.intrinsics);
    char name[64];
    std::snprintf(name, sizeof(name), "/pair_%02d", t);
    emit_image(s.frames[t - 1], out_dir + name + "_source.ppm", "rgb");
    emit_image(wr.warped, out_dir + name + "_warped.ppm", "rgb");
    emit_image(s.frames[t], out_dir + name + "_target.ppm", "rgb");
    emit_image(wr.validity, out_dir + name + "_validity.pgm", "gray");
    emit_image(s.depths[t - 1], out_dir + name + "_depth.pgm", "depth");
    std::vector<double> lab(s.labels[t - 1].begin(), s.labels[t - 1].end());
    emit_image(Tensor::from_data({1, s.intrinsics.height, s.intrinsics.width}, lab),
               out_dir + name + "_labels.ppm", "labels");
  }
}

}  // namespace tff
