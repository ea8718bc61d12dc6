#pragma once

#include "softorder/model.hpp"

#include <vector>

namespace softorder {

/// Raised by scaled_trace_chain when an intermediate trace is (numerically)
/// zero; carries the offending index.
class SingularTraceError : public std::runtime_error {
public:
  SingularTraceError(std::string msg, int index)
      : std::runtime_error(std::move(msg)), index(index) {}
  int index;
};

/// F_i = G_i * G_(i+1 mod T) * ... * G_(i-1 mod T). T = 1 returns {G_1}.
std::vector<Tensor> cyclic_products(const std::vector<Tensor>& G);

/// max_i |tr(F_i) - tr(F_1)|; ~0 for genuine cyclic products.
Scalar trace_residual(const std::vector<Tensor>& F);

/// s_1 = 1, s_(i+1) = s_i * tr(F_(i+1)) / tr(F_i); requires nonzero traces.
std::vector<Scalar> scaled_trace_chain(const std::vector<Tensor>& F);

Scalar trace(const Tensor& square);

struct UsageDistribution {
  Tensor usage; // [branches x depth]; usage[j,k] = mean over tasks of s(i,j,k)
};

UsageDistribution layer_usage(const ScalingTensor& s);

/// Per-depth Euclidean distance between the scale columns of two tasks.
std::vector<Scalar> scaling_distance(const ScalingTensor& s, int task_a, int task_b);

/// Mean over (task, depth) of the max scale: 1/D at uniform init, 1 when hard.
Scalar ordering_hardness(const ScalingTensor& s);

/// Renders the model's predicted image for a pixel task while overwriting the
/// gate output s(task, layer, depth) with each grid value (sigmoid-gate soft
/// models with a global-average-pool decoder). Returns one [h x w] image per
/// grid value.
std::vector<Tensor> layer_sweep(const MultitaskModel& model, int task, int layer, int depth,
                                const std::vector<Scalar>& grid, Index img_h, Index img_w);

/// Predicted image of a pixel-task model at the current scalings.
Tensor render_pixel_task(const MultitaskModel& model, int task, Index img_h, Index img_w);

} // namespace softorder
