#pragma once

#include "softorder/tensor.hpp"

#include <functional>
#include <vector>

namespace softorder {

enum class Activation { Identity, Relu, Sigmoid };

/// out[b,o] = sum_i W[o,i] * x[b,i] + b[o].
/// W: [m_out x m_in], bias: [m_out], x: [batch x m_in].
Tensor affine_forward(const Tensor& W, const Tensor& bias, const Tensor& x);

/// Same-size 3x3 cross-correlation with one-pixel zero padding.
/// K: [c_out x c_in x 3 x 3], bias: [c_out], x: [batch x c_in x h x w].
Tensor conv2d_forward(const Tensor& K, const Tensor& bias, const Tensor& x);

/// 2x2 max pooling with stride 2; odd trailing row/column dropped.
/// If argmax is non-null it receives, per output cell, the flat input index
/// of the winning element (used to route gradients).
Tensor maxpool2x2(const Tensor& x, std::vector<Index>* argmax = nullptr);

Tensor activate(Activation kind, const Tensor& x);

/// Numerically stable softmax along the given axis (max subtracted per slice).
Tensor softmax_axis(const Tensor& x, int axis);

/// Central-difference gradient of a scalar-valued function; the independent
/// oracle against which reverse-mode gradients are checked.
Tensor finite_difference_grad(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                              Scalar h = Scalar(1e-6));

} // namespace softorder
