#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tff/tensor.hpp"

namespace tff {

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int classes) : k(classes), counts((size_t)classes * classes, 0) {}
  void add(int gt, int pred) { counts[(size_t)gt * k + pred] += 1; }
  void add_labels(const std::vector<int32_t>& gt, const std::vector<int32_t>& pred);
  ConfusionMatrix& merge(const ConfusionMatrix& other);
  int64_t total() const;
};

// Mean over classes present in the ground truth of
// M[c,c] / (row_c + col_c - M[c,c]); absent classes are excluded.
double mean_iou(const ConfusionMatrix& m);

std::vector<int32_t> argmax_labels(const Tensor& logits);

struct ExperimentReport {
  std::string experiment;
  uint64_t seed = 0;
  std::string config_echo;           // checkpoint config json
  std::vector<std::string> columns;  // row field names, for the text table
  std::vector<std::vector<double>> rows;
  double wall_seconds = 0;  // printed only, kept out of the JSON

  std::string to_json() const;  // deterministic: no wall clock
  std::string table_text() const;
  double cell(const std::string& column, int row) const;
};

// Static feature integration: length-4 sequences repeating each test
// sequence's first frame, left half replaced by per-frame Gaussian noise,
// identity motion pinned. Reports per-frame mean IoU.
ExperimentReport experiment_static(const std::string& data_dir, const std::string& ckpt_dir,
                                   const std::string& out_dir, uint64_t seed);

// Temporal motion integration: the last half of every sequence blanked
// with noise; reports per-pair translation / rotation errors plus the
// label agreement of the ground-truth successive projection.
ExperimentReport experiment_motion(const std::string& data_dir, const std::string& ckpt_dir,
                                   const std::string& out_dir, uint64_t seed);

// Filtered model against the unfiltered pair baseline on perturbed test
// sequences; reports per-frame mean IoU for both.
ExperimentReport experiment_compare(const std::string& data_dir,
                                    const std::string& ckpt_filtered,
                                    const std::string& ckpt_baseline,
                                    const std::string& out_dir, uint64_t seed);

// Warps every frame onto its successor with ground-truth depth and motion
// and writes the images; exercises the geometric pipeline without a
// checkpoint.
void warp_demo(const std::string& seq_dir, const std::string& out_dir);

// mode: rgb ([3,H,W] -> P6), gray ([1,H,W] in [0,1] -> P5),
// depth ([1,H,W] depths; 1/d as gray), labels ([1,H,W] ids -> palette P6).
void emit_image(const Tensor& t, const std::string& path, const std::string& mode);

Tensor read_ppm(const std::string& path);

}  // namespace tff
