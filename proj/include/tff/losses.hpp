#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tff/filter.hpp"
#include "tff/geometry.hpp"
#include "tff/networks.hpp"
#include "tff/tensor.hpp"

namespace tff {

// Sum of absolute inverse-depth differences.
Tensor depth_l1(const Tensor& z_gt, const Tensor& z_hat);

// Scale-invariant gradient loss: per scale h in {1,2,4} the normalized
// forward differences g_h are compared under the Euclidean norm. A
// difference whose forward neighbor leaves the map, or whose denominator
// |a|+|b| is zero, contributes zero.
Tensor depth_sig(const Tensor& z_gt, const Tensor& z_hat);

// Mean over pixels of -log softmax(logits)[label].
Tensor seg_ce(const Tensor& logits, const std::vector<int32_t>& labels);

// (translation, rotation) losses of Eq-style relative transforms. The
// rotation loss clamps the trace argument with a small margin so its
// gradient stays finite at zero error; the geometry metrics stay exact.
std::pair<Tensor, Tensor> motion_losses(const TauTensors& pred, const RigidTransform& gt);

inline constexpr double kRotationLossClampMargin = 1e-7;

Tensor translation_error_loss(const TauTensors& pred, const RigidTransform& gt);
Tensor rotation_error_loss(const TauTensors& pred, const RigidTransform& gt,
                           double clamp_margin = kRotationLossClampMargin);

// sum_i exp(-s_i) L_i + s_i with the learned scalars from the store
// (loss/s_<name>); names pick which components participate.
Tensor multitask_total(const std::vector<std::pair<std::string, Tensor>>& losses,
                       ParameterStore& ps);

// Ground-truth inverse depth at the feature grid: mean of 1/depth over
// each factor x factor block.
Tensor inverse_depth_target(const Tensor& depth, int factor);

}  // namespace tff
