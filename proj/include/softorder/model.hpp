#pragma once

#include "softorder/autograd.hpp"

#include <optional>
#include <string>
#include <vector>

namespace softorder {

enum class LayerKind { Dense, Conv };
enum class EncoderKind { Identity, FrozenRandomDense, LearnedDense, LearnedLinear };
enum class DecoderKind { DenseSigmoid, DenseSoftmax, GlobalAveragePool };
enum class OrderingMode { Parallel, Permuted, Soft };
enum class GateKind { Softmax, Sigmoid };

/// One shared transformation. Dense: W [m x m], b [m]. Conv: K [c x c x 3 x 3],
/// b [c], followed by 2x2 max pooling inside the branch. phi is indexed by
/// depth position when the layer sits at that depth.
struct CoreLayer {
  LayerKind kind = LayerKind::Dense;
  Activation phi = Activation::Relu;
  Index units = 0; // m for dense, filter count c for conv
  NodePtr W;
  NodePtr b;
};

struct Encoder {
  EncoderKind kind = EncoderKind::Identity;
  NodePtr W; // dense kinds only
  NodePtr b;
};

struct Decoder {
  DecoderKind kind = DecoderKind::DenseSigmoid;
  Index out = 1;
  NodePtr W; // dense kinds only
  NodePtr b;
};

/// The task x branch x depth scales of the soft model, materialized as a
/// plain tensor (softmax-normalized over the branch axis, or per-entry
/// sigmoid in sweep mode).
struct ScalingTensor {
  Tensor scales; // [tasks x branches x depth]
  Index tasks = 0;
  Index branches = 0;
  Index depth = 0;
};

struct OrderingSpec {
  OrderingMode mode = OrderingMode::Parallel;
  std::vector<std::vector<int>> perms; // per task, 0-based layer index per depth
  NodePtr logits;                      // soft mode: [T x branches x D], trainable
  GateKind gate = GateKind::Softmax;
  bool include_identity = false;
};

struct MultitaskModel {
  Index task_count = 0;
  Index depth = 0;
  std::vector<CoreLayer> core;     // D layers
  std::vector<Encoder> encoders;   // per task (may alias shared params)
  std::vector<Decoder> decoders;   // per task (may alias shared params)
  OrderingSpec ordering;
  Scalar dropout_rate = 0;

  Index branch_count() const {
    return depth + (ordering.include_identity ? 1 : 0);
  }
  std::vector<NodePtr> trainable_params() const;
  std::vector<NodePtr> all_params() const;
  Index trainable_scalar_count() const;
};

struct ModelConfig {
  Index tasks = 2;
  Index depth = 2;
  LayerKind layer_kind = LayerKind::Dense;
  Index units = 16; // m (dense) or filters (conv)
  Activation phi = Activation::Relu;
  EncoderKind encoder_kind = EncoderKind::Identity;
  std::vector<Index> input_dims; // per task feature count (dense encoders)
  bool share_encoder = false;
  DecoderKind decoder_kind = DecoderKind::DenseSigmoid;
  std::vector<Index> output_dims; // per task
  bool share_decoder = false;
  Index image_h = 0, image_w = 0; // conv models
  OrderingMode mode = OrderingMode::Parallel;
  GateKind gate = GateKind::Softmax;
  bool include_identity = false;
  Scalar dropout_rate = 0;
};

/// Builds a model with uniform fan-scaled init; permutations (permuted mode)
/// are drawn uniformly from rng, soft logits start at zero.
MultitaskModel build_model(const ModelConfig& cfg, Rng& rng);

/// Softmax over the branch axis of [T x B x D] logits.
ScalingTensor scaling_from_logits(const Tensor& logits);

/// Per-entry sigmoid gate (analysis/sweep mode; columns need not sum to 1).
ScalingTensor sigmoid_scaling(const Tensor& logits);

/// Exact 0/1 scaling realizing fixed permutations: s[i, perm_i[k], k] = 1.
ScalingTensor one_hot_scaling(const std::vector<std::vector<int>>& perms);

NodePtr forward_parallel(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng);
NodePtr forward_permuted(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng);
NodePtr forward_soft(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng);

/// Soft forward with an explicit scale tensor instead of the gated logits
/// (eval only; used for subsumption checks and layer sweeps).
NodePtr forward_soft_scaled(const MultitaskModel& m, int task, const NodePtr& x,
                            const ScalingTensor& scales);

/// Dispatch on m.ordering.mode.
NodePtr forward(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng);

/// Build-and-evaluate convenience; no dropout, ignores gradients.
Tensor forward_eval(const MultitaskModel& m, int task, const Tensor& x);

/// Current materialized scaling of a soft model.
ScalingTensor current_scaling(const MultitaskModel& m);

/// Checkpoint container (JSON, versioned by a magic string).
void save_checkpoint(const MultitaskModel& m, uint64_t seed, const std::string& path);
MultitaskModel load_checkpoint(const std::string& path, uint64_t* seed = nullptr);

} // namespace softorder
