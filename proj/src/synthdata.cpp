#include "tff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tff/tensor_io.hpp"
#include "tff/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tff {

namespace {

// value-noise lattice hash -> [0,1)
double lattice(uint64_t seed, int64_t ix, int64_t iy) {
  uint64_t h = mix_seed(seed, (uint64_t)(ix * 73856093LL) ^ (uint64_t)(iy * 19349663LL));
  return (double)(h >> 11) * (1.0 / 9007199254740992.0);
}

double value_noise(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int64_t ix = (int64_t)fx, iy = (int64_t)fy;
  const double tx = x - fx, ty = y - fy;
  const double sx = tx * tx * (3 - 2 * tx);
  const double sy = ty * ty * (3 - 2 * ty);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  const double top = a + (b - a) * sx;
  const double bot = c + (d - c) * sx;
  return top + (bot - top) * sy;
}

double texture_value(uint64_t seed, double freq, double x, double y) {
  return 0.65 * value_noise(seed, x * freq, y * freq) +
         0.35 * value_noise(seed ^ 0x9e37ULL, x * freq * 2.7, y * freq * 2.7);
}

constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.55, 0.56, 0.60},  // background gray
    {0.90, 0.35, 0.30},
    {0.30, 0.75, 0.35},
    {0.30, 0.45, 0.90},
    {0.90, 0.80, 0.25},
    {0.75, 0.35, 0.85},
    {0.30, 0.80, 0.80},
    {0.95, 0.60, 0.25},
}};

std::array<double, 3> class_color(int class_id) {
  return kPalette[class_id % kPalette.size()];
}

// Small-angle rotation from an axis-angle vector (Rodrigues).
std::array<double, 9> rotation_from_axis_angle(const std::array<double, 3>& w) {
  const double theta = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  if (theta < 1e-15) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const double kx = w[0] / theta, ky = w[1] / theta, kz = w[2] / theta;
  const double s = std::sin(theta), c = std::cos(theta), v = 1 - c;
  return {c + kx * kx * v,      kx * ky * v - kz * s, kx * kz * v + ky * s,
          ky * kx * v + kz * s, c + ky * ky * v,      ky * kz * v - kx * s,
          kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v};
}

}  // namespace

Scene generate_scene(uint64_t seed, int class_count) {
  check_arg(class_count >= 2, "generate_scene: need at least two classes");
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.class_count = class_count;
  scene.background_class = 0;
  scene.background_tex_seed = mix_seed(seed, 900);

  const int max_rects = std::min(8, class_count - 1);
  const int min_rects = std::min(3, max_rects);
  const int count = rng.uniform_int(min_rects, max_rects);

  // one distinct non-background class per rectangle
  std::vector<int> classes;
  for (int c = 1; c < class_count; ++c) classes.push_back(c);
  std::shuffle(classes.begin(), classes.end(), rng.engine());

  for (int i = 0; i < count; ++i) {
    TexturedRect r;
    r.z = rng.uniform(1.0, 5.0);
    // at depth z the default camera sees x,y in about [-z, z]
    const double half = rng.uniform(0.25, 0.55) * r.z;
    const double cx = rng.uniform(-0.6, 0.6) * r.z;
    const double cy = rng.uniform(-0.6, 0.6) * r.z;
    r.x0 = cx - half;
    r.y0 = cy - half * rng.uniform(0.7, 1.3);
    r.ex = 2 * half;
    r.ey = (cy - r.y0) * 2;
    r.class_id = classes[i];
    r.tex_seed = mix_seed(seed, 100 + i);
    // low frequencies survive the encoder downsampling and stay trackable
    r.tex_freq = rng.uniform(0.4, 1.5);
    r.base_color = class_color(r.class_id);
    scene.rects.push_back(r);
  }
  // near-to-far simplifies nothing for the ray cast but makes dumps readable
  std::sort(scene.rects.begin(), scene.rects.end(),
            [](const TexturedRect& a, const TexturedRect& b) { return a.z < b.z; });
  return scene;
}

void render(const Scene& scene, const RigidTransform& pose, const CameraIntrinsics& K,
            Tensor* frame, Tensor* depth, std::vector<int32_t>* labels) {
  K.validate();
  const int h = K.height, w = K.width;
  const int64_t n = (int64_t)h * w;
  std::vector<double> rgb(3 * n), dep(n);
  std::vector<int32_t> lab(n);
  constexpr double kNear = 0.05;

#pragma omp parallel for
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const int64_t i = (int64_t)v * w + u;
      // camera ray with unit forward component; camera depth equals the
      // ray parameter t
      const double dcx = (u - K.cx) / K.fx;
      const double dcy = (v - K.cy) / K.fy;
      const double dwx = pose.R[0] * dcx + pose.R[1] * dcy + pose.R[2];
      const double dwy = pose.R[3] * dcx + pose.R[4] * dcy + pose.R[5];
      const double dwz = pose.R[6] * dcx + pose.R[7] * dcy + pose.R[8];

      double best_t = std::numeric_limits<double>::infinity();
      const TexturedRect* hit = nullptr;
      for (const auto& r : scene.rects) {
        if (std::fabs(dwz) < 1e-12) continue;
        const double t = (r.z - pose.T[2]) / dwz;
        if (t <= kNear || t >= best_t) continue;
        const double px = pose.T[0] + t * dwx;
        const double py = pose.T[1] + t * dwy;
        if (px < r.x0 || px > r.x0 + r.ex || py < r.y0 || py > r.y0 + r.ey) continue;
        best_t = t;
        hit = &r;
      }

      double cr, cg, cb;
      if (hit) {
        dep[i] = best_t;
        lab[i] = hit->class_id;
        const double px = pose.T[0] + best_t * dwx;
        const double py = pose.T[1] + best_t * dwy;
        const double tex = 0.55 + 0.45 * texture_value(hit->tex_seed, hit->tex_freq, px, py);
        cr = hit->base_color[0] * tex;
        cg = hit->base_color[1] * tex;
        cb = hit->base_color[2] * tex;
      } else {
        // background wall
        double t = kBackgroundDepth;
        if (std::fabs(dwz) > 1e-12) {
          const double tw = (kBackgroundDepth - pose.T[2]) / dwz;
          if (tw > kNear) t = tw;
        }
        dep[i] = t;
        lab[i] = scene.background_class;
        const double px = pose.T[0] + t * dwx;
        const double py = pose.T[1] + t * dwy;
        const auto base = class_color(scene.background_class);
        const double tex = 0.55 + 0.45 * texture_value(scene.background_tex_seed, 0.25, px, py);
        cr = base[0] * tex;
        cg = base[1] * tex;
        cb = base[2] * tex;
      }
      rgb[i] = std::min(1.0, std::max(0.0, cr));
      rgb[n + i] = std::min(1.0, std::max(0.0, cg));
      rgb[2 * n + i] = std::min(1.0, std::max(0.0, cb));
    }
  }
  if (frame) *frame = Tensor::from_data({3, h, w}, std::move(rgb));
  if (depth) *depth = Tensor::from_data({1, h, w}, std::move(dep));
  if (labels) *labels = std::move(lab);
}

SequenceSample generate_sequence(uint64_t seed, int length, const MotionProfile& profile,
                                 const CameraIntrinsics& K, int class_count) {
  check_arg(length >= 2, "generate_sequence: length must be >= 2");
  const Scene scene = generate_scene(mix_seed(seed, 1), class_count);
  Rng rng(mix_seed(seed, 2));

  SequenceSample s;
  s.intrinsics = K;
  s.class_count = class_count;
  s.seed = seed;

  RigidTransform pose;  // camera-to-world
  pose.T = {rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};

  // low-pass filtered per-step motion, burnt in so the velocity starts at
  // its stationary distribution rather than at rest
  std::array<double, 3> vel{0, 0, 0}, rot{0, 0, 0};
  auto advance_motion = [&]() {
    std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
    const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    const double mag = rng.uniform(profile.t_min, profile.t_max);
    std::array<double, 3> axis{rng.normal(), rng.normal(), rng.normal()};
    const double anorm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double ang = rng.uniform(profile.r_min, profile.r_max);
    for (int k = 0; k < 3; ++k) {
      const double tv = norm > 1e-12 ? dir[k] / norm * mag : 0.0;
      const double rv = anorm > 1e-12 ? axis[k] / anorm * ang : 0.0;
      vel[k] = 0.6 * vel[k] + 0.4 * tv;
      rot[k] = 0.6 * rot[k] + 0.4 * rv;
    }
  };
  for (int i = 0; i < 8; ++i) advance_motion();
  for (int t = 0; t < length; ++t) {
    if (t > 0) {
      advance_motion();
      RigidTransform step;  // new camera expressed in the previous frame
      step.R = rotation_from_axis_angle(rot);
      step.T = vel;
      pose = compose(pose, step);
    }
    Tensor frame, depth;
    std::vector<int32_t> labels;
    render(scene, pose, K, &frame, &depth, &labels);
    s.frames.push_back(std::move(frame));
    s.depths.push_back(std::move(depth));
    s.labels.push_back(std::move(labels));
    s.poses.push_back(pose);
  }
  return s;
}

namespace {

std::string frame_file(const std::string& stem, int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%03d.tnsr", t);
  return stem + buf;
}

}  // namespace

void save_sequence(const std::string& dir, const SequenceSample& s) {
  fs::create_directories(dir);
  json m;
  m["format"] = 1;
  m["length"] = s.length();
  m["class_count"] = s.class_count;
  m["seed"] = s.seed;
  m["intrinsics"] = {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy},
                     {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy},
                     {"width", s.intrinsics.width}, {"height", s.intrinsics.height}};
  json poses = json::array();
  for (const auto& p : s.poses) {
    json row = json::array();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) row.push_back(p.R[i * 3 + j]);
      row.push_back(p.T[i]);
    }
    poses.push_back(row);
  }
  m["poses"] = poses;
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << m.dump(2) << "\n";

  const Shape label_shape{1, s.intrinsics.height, s.intrinsics.width};
  for (int t = 0; t < s.length(); ++t) {
    write_tensor(dir + "/" + frame_file("rgb", t), s.frames[t]);
    write_tensor(dir + "/" + frame_file("depth", t), s.depths[t]);
    write_tensor_i32(dir + "/" + frame_file("label", t), label_shape, s.labels[t]);
  }
}

SequenceSample load_sequence(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw std::runtime_error("cannot read manifest in " + dir);
  json m = json::parse(is);

  SequenceSample s;
  s.class_count = m.at("class_count").get<int>();
  s.seed = m.at("seed").get<uint64_t>();
  const auto& ji = m.at("intrinsics");
  s.intrinsics = {ji.at("fx").get<double>(),   ji.at("fy").get<double>(),
                  ji.at("cx").get<double>(),   ji.at("cy").get<double>(),
                  ji.at("width").get<int>(),   ji.at("height").get<int>()};
  const int length = m.at("length").get<int>();
  for (const auto& row : m.at("poses")) {
    RigidTransform p;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) p.R[i * 3 + j] = row[i * 4 + j].get<double>();
      p.T[i] = row[i * 4 + 3].get<double>();
    }
    s.poses.push_back(p);
  }
  check_arg((int)s.poses.size() == length, "manifest: pose count mismatch");
  for (int t = 0; t < length; ++t) {
    s.frames.push_back(read_tensor(dir + "/" + frame_file("rgb", t)));
    s.depths.push_back(read_tensor(dir + "/" + frame_file("depth", t)));
    s.labels.push_back(read_tensor_i32(dir + "/" + frame_file("label", t)).second);
  }
  return s;
}

std::vector<std::string> list_sequence_dirs(const std::string& root) {
  std::vector<std::string> dirs;
  if (!fs::is_directory(root)) return dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
      dirs.push_back(e.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

void generate_dataset(const std::string& out_dir, int count, uint64_t seed,
                      int length, const MotionProfile& profile,
                      const CameraIntrinsics& K, int class_count) {
  fs::create_directories(out_dir);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const SequenceSample s =
        generate_sequence(mix_seed(seed, (uint64_t)i), length, profile, K, class_count);
    char name[16];
    std::snprintf(name, sizeof(name), "%05d", i);
    save_sequence(out_dir + "/" + name, s);
  }
}

}  // namespace tff
