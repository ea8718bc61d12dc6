#pragma once

#include "softorder/ops.hpp"
#include "softorder/rng.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace softorder {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the (acyclic) computation graph. Values are written once at
/// construction; gradients are filled by backward().
struct Node {
  Tensor value;
  Tensor grad;            // valid when has_grad
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backprop; // pulls this->grad into inputs' grads

  void accumulate(const Tensor& g) {
    require_same_shape(value, g, "gradient accumulation");
    if (has_grad) {
      grad.array() += g.array();
    } else {
      grad = g;
      has_grad = true;
    }
  }

  void zero_grad() {
    grad = Tensor(value.shape());
    has_grad = true;
  }
};

/// Graph leaf; parameters pass requires_grad = true, constants false.
NodePtr leaf(Tensor value, bool requires_grad = false);

NodePtr affine(const NodePtr& x, const NodePtr& W, const NodePtr& b);
NodePtr conv2d(const NodePtr& x, const NodePtr& K, const NodePtr& b);
NodePtr maxpool(const NodePtr& x);
NodePtr activation(Activation kind, const NodePtr& x);
NodePtr softmax(const NodePtr& x, int axis);
NodePtr sigmoid(const NodePtr& x);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr reshape(const NodePtr& x, std::vector<Index> shape);

/// Inverted dropout: train mode zeroes units with probability rate and scales
/// survivors by 1/(1-rate); eval mode is the identity.
NodePtr dropout(const NodePtr& x, Scalar rate, bool train, Rng& rng);

/// y = scales.value[flat_index] * x; gradient flows into both x and the
/// selected entry of scales.
NodePtr scale_entry(const NodePtr& x, const NodePtr& scales, Index flat_index);

NodePtr scale_const(const NodePtr& x, Scalar c);

/// Mean over every non-batch axis: [batch x ...] -> [batch x 1].
NodePtr batch_mean_rest(const NodePtr& x);

/// Losses, all reduced to a [1] scalar node (mean over the batch).
/// Probabilities are clamped to [1e-12, 1-1e-12]; gradients are zero in the
/// clamped region.
NodePtr bce_loss(const NodePtr& pred, const Tensor& targets);
NodePtr ce_loss(const NodePtr& probs, const Tensor& class_indices);
NodePtr mse_loss(const NodePtr& pred, const Tensor& targets);

/// Sum of [1]-shaped scalar nodes.
NodePtr total(const std::vector<NodePtr>& scalars);

NodePtr sum_all(const NodePtr& x);

/// Reverse topological sweep seeding output with `seed` (shape must match).
void backward(const NodePtr& out, const Tensor& seed);
void backward(const NodePtr& out); // seed of ones

} // namespace softorder
