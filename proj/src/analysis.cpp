#include "softorder/analysis.hpp"

#include <cmath>

namespace softorder {

Scalar trace(const Tensor& square) {
  if (square.rank() != 2 || square.dim(0) != square.dim(1))
    throw ShapeError("trace: need a square matrix, got " + square.shape_str());
  const Index m = square.dim(0);
  Scalar t = 0;
  for (Index i = 0; i < m; ++i) t += square[i * m + i];
  return t;
}

std::vector<Tensor> cyclic_products(const std::vector<Tensor>& G) {
  if (G.empty()) throw ContractError("cyclic_products: empty input");
  const Index m = G[0].dim(0);
  for (const auto& g : G)
    if (g.rank() != 2 || g.dim(0) != m || g.dim(1) != m)
      throw ShapeError("cyclic_products: matrices must all be " + std::to_string(m) + "x" +
                       std::to_string(m) + ", got " + g.shape_str());
  const size_t T = G.size();
  std::vector<Tensor> F;
  for (size_t i = 0; i < T; ++i) {
    Tensor f = G[i];
    for (size_t step = 1; step < T; ++step) {
      const Tensor& next = G[(i + step) % T];
      Tensor prod({m, m});
      prod.matrix(m, m).noalias() = f.matrix(m, m) * next.matrix(m, m);
      f = std::move(prod);
    }
    F.push_back(std::move(f));
  }
  return F;
}

Scalar trace_residual(const std::vector<Tensor>& F) {
  if (F.empty()) throw ContractError("trace_residual: empty input");
  const Scalar t1 = trace(F[0]);
  Scalar r = 0;
  for (const auto& f : F) r = std::max(r, std::abs(trace(f) - t1));
  return r;
}

std::vector<Scalar> scaled_trace_chain(const std::vector<Tensor>& F) {
  if (F.empty()) throw ContractError("scaled_trace_chain: empty input");
  std::vector<Scalar> traces;
  for (const auto& f : F) traces.push_back(trace(f));
  for (size_t i = 0; i < traces.size(); ++i)
    if (std::abs(traces[i]) < Scalar(1e-12))
      throw SingularTraceError("scaled_trace_chain: tr(F_" + std::to_string(i + 1) +
                                   ") is zero; scalar chain undefined",
                               static_cast<int>(i));
  std::vector<Scalar> s{Scalar(1)};
  for (size_t i = 0; i + 1 < F.size(); ++i)
    s.push_back(s.back() * (traces[i + 1] / traces[i]));
  return s;
}

UsageDistribution layer_usage(const ScalingTensor& s) {
  UsageDistribution u{Tensor({s.branches, s.depth})};
  for (Index j = 0; j < s.branches; ++j)
    for (Index k = 0; k < s.depth; ++k) {
      Scalar sum = 0;
      for (Index i = 0; i < s.tasks; ++i) sum += s.scales[(i * s.branches + j) * s.depth + k];
      u.usage[j * s.depth + k] = sum / Scalar(s.tasks);
    }
  return u;
}

std::vector<Scalar> scaling_distance(const ScalingTensor& s, int task_a, int task_b) {
  if (task_a == task_b || task_a < 0 || task_b < 0 || task_a >= s.tasks || task_b >= s.tasks)
    throw ContractError("scaling_distance: need two distinct valid task indices");
  std::vector<Scalar> d(static_cast<size_t>(s.depth), 0);
  for (Index k = 0; k < s.depth; ++k) {
    Scalar sq = 0;
    for (Index j = 0; j < s.branches; ++j) {
      const Scalar diff = s.scales[(task_a * s.branches + j) * s.depth + k] -
                          s.scales[(task_b * s.branches + j) * s.depth + k];
      sq += diff * diff;
    }
    d[static_cast<size_t>(k)] = std::sqrt(sq);
  }
  return d;
}

Scalar ordering_hardness(const ScalingTensor& s) {
  Scalar sum = 0;
  for (Index i = 0; i < s.tasks; ++i)
    for (Index k = 0; k < s.depth; ++k) {
      Scalar mx = s.scales[(i * s.branches + 0) * s.depth + k];
      for (Index j = 1; j < s.branches; ++j)
        mx = std::max(mx, s.scales[(i * s.branches + j) * s.depth + k]);
      sum += mx;
    }
  return sum / Scalar(s.tasks * s.depth);
}

namespace {

Tensor pixel_coordinate_batch(Index h, Index w) {
  Tensor x({h * w, 2});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      x[(i * w + j) * 2 + 0] = w > 1 ? Scalar(j) / Scalar(w - 1) : Scalar(0);
      x[(i * w + j) * 2 + 1] = h > 1 ? Scalar(i) / Scalar(h - 1) : Scalar(0);
    }
  return x;
}

Tensor render_with_scales(const MultitaskModel& model, int task, const ScalingTensor& scales,
                          Index h, Index w) {
  NodePtr x = leaf(pixel_coordinate_batch(h, w), false);
  Tensor pred = forward_soft_scaled(model, task, x, scales)->value;
  return pred.reshaped({h, w});
}

} // namespace

Tensor render_pixel_task(const MultitaskModel& model, int task, Index img_h, Index img_w) {
  return render_with_scales(model, task, current_scaling(model), img_h, img_w);
}

std::vector<Tensor> layer_sweep(const MultitaskModel& model, int task, int layer, int depth,
                                const std::vector<Scalar>& grid, Index img_h, Index img_w) {
  if (model.ordering.mode != OrderingMode::Soft)
    throw ContractError("layer_sweep: model must use soft ordering");
  if (depth < 1 || depth > model.depth || layer < 0 || layer >= model.branch_count())
    throw ContractError("layer_sweep: layer/depth out of range");
  for (Scalar g : grid)
    if (g < 0 || g > 1) throw ContractError("layer_sweep: grid values must lie in [0, 1]");

  ScalingTensor base = current_scaling(model);
  const Index flat = (Index(task) * base.branches + layer) * base.depth + (depth - 1);
  std::vector<Tensor> frames;
  for (Scalar g : grid) {
    ScalingTensor s = base;
    s.scales[flat] = g;
    frames.push_back(render_with_scales(model, task, s, img_h, img_w));
  }
  return frames;
}

} // namespace softorder
