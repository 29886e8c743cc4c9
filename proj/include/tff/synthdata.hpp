#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tff/geometry.hpp"
#include "tff/tensor.hpp"

namespace tff {

// Fronto-parallel textured rectangle at a fixed world depth.
struct TexturedRect {
  double x0 = 0, y0 = 0, z = 1;  // top-left corner and plane depth
  double ex = 1, ey = 1;         // extents
  int class_id = 1;
  uint64_t tex_seed = 0;
  double tex_freq = 1.0;
  std::array<double, 3> base_color{1, 1, 1};
};

struct Scene {
  std::vector<TexturedRect> rects;
  int background_class = 0;
  int class_count = 6;
  uint64_t seed = 0;
  uint64_t background_tex_seed = 0;
};

// Background wall sits at this world depth; rays that miss every
// rectangle hit it.
inline constexpr double kBackgroundDepth = 10.0;

struct MotionProfile {
  double t_min = 0, t_max = 0;  // per-step translation magnitude, scene units
  double r_min = 0, r_max = 0;  // per-step rotation magnitude, radians
  static MotionProfile defaults() { return {0.35, 1.10, 0.025, 0.14}; }
  static MotionProfile static_camera() { return {0, 0, 0, 0}; }
};

struct SequenceSample {
  std::vector<Tensor> frames;                // [3,H,W] in [0,1]
  std::vector<Tensor> depths;                // [1,H,W] camera-space depth
  std::vector<std::vector<int32_t>> labels;  // H*W class ids
  std::vector<RigidTransform> poses;         // camera-to-world
  CameraIntrinsics intrinsics;
  int class_count = 6;
  uint64_t seed = 0;

  int length() const { return (int)frames.size(); }
  // tau mapping frame t-1 camera coordinates into frame t.
  RigidTransform relative_motion(int t) const {
    return compose(invert(poses[t]), poses[t - 1]);
  }
};

Scene generate_scene(uint64_t seed, int class_count);

void render(const Scene& scene, const RigidTransform& pose, const CameraIntrinsics& K,
            Tensor* frame, Tensor* depth, std::vector<int32_t>* labels);

SequenceSample generate_sequence(uint64_t seed, int length, const MotionProfile& profile,
                                 const CameraIntrinsics& K, int class_count);

// Directory layout: <dir>/manifest.json + rgb_###.tnsr / depth_###.tnsr /
// label_###.tnsr per frame.
void save_sequence(const std::string& dir, const SequenceSample& sample);
SequenceSample load_sequence(const std::string& dir);
std::vector<std::string> list_sequence_dirs(const std::string& root);

void generate_dataset(const std::string& out_dir, int count, uint64_t seed,
                      int length, const MotionProfile& profile,
                      const CameraIntrinsics& K, int class_count);

}  // namespace tff
