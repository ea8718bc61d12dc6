#include "softorder/model.hpp"

#include <cmath>
#include <unordered_set>

namespace softorder {

namespace {

Tensor uniform_init(std::vector<Index> shape, Index fan_in, Index fan_out, Rng& rng) {
  const Scalar limit = std::sqrt(Scalar(6) / Scalar(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

Encoder build_encoder(const ModelConfig& cfg, Index input_dim, Rng& rng) {
  Encoder e;
  e.kind = cfg.encoder_kind;
  if (e.kind == EncoderKind::Identity) return e;
  const bool trainable = e.kind != EncoderKind::FrozenRandomDense;
  e.W = leaf(uniform_init({cfg.units, input_dim}, input_dim, cfg.units, rng), trainable);
  e.b = leaf(Tensor({cfg.units}), trainable);
  return e;
}

Decoder build_decoder(const ModelConfig& cfg, Index out, Index feature_dim, Rng& rng) {
  Decoder d;
  d.kind = cfg.decoder_kind;
  d.out = out;
  if (d.kind == DecoderKind::GlobalAveragePool) {
    d.out = 1;
    return d;
  }
  d.W = leaf(uniform_init({out, feature_dim}, feature_dim, out, rng), true);
  d.b = leaf(Tensor({out}), true);
  return d;
}

Index decoder_feature_dim(const ModelConfig& cfg) {
  if (cfg.layer_kind == LayerKind::Dense) return cfg.units;
  Index h = cfg.image_h, w = cfg.image_w;
  for (Index k = 0; k < cfg.depth; ++k) {
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1)
    throw ShapeError("conv model: image too small for " + std::to_string(cfg.depth) + " pooling stages");
  return cfg.units * h * w;
}

// Branch j evaluated at depth position k: phi comes from the depth, weights
// from the branch layer. Conv branches pool after the nonlinearity.
NodePtr core_branch(const MultitaskModel& m, int layer, int depth_pos, const NodePtr& y) {
  const CoreLayer& lj = m.core[static_cast<size_t>(layer)];
  const Activation phi = m.core[static_cast<size_t>(depth_pos)].phi;
  if (lj.kind == LayerKind::Dense) return activation(phi, affine(y, lj.W, lj.b));
  return maxpool(activation(phi, conv2d(y, lj.W, lj.b)));
}

NodePtr apply_encoder(const Encoder& e, const NodePtr& x) {
  switch (e.kind) {
    case EncoderKind::Identity:
      return x;
    case EncoderKind::FrozenRandomDense:
    case EncoderKind::LearnedDense:
      return activation(Activation::Relu, affine(x, e.W, e.b));
    case EncoderKind::LearnedLinear:
      return affine(x, e.W, e.b);
  }
  throw ContractError("apply_encoder: unknown kind");
}

NodePtr apply_decoder(const Decoder& d, NodePtr y) {
  if (d.kind == DecoderKind::GlobalAveragePool) return batch_mean_rest(y);
  if (y->value.rank() > 2)
    y = reshape(y, {y->value.dim(0), y->value.size() / y->value.dim(0)});
  NodePtr z = affine(y, d.W, d.b);
  if (d.kind == DecoderKind::DenseSigmoid) return sigmoid(z);
  return softmax(z, 1);
}

void check_task(const MultitaskModel& m, int task) {
  if (task < 0 || task >= m.task_count)
    throw ContractError("task index " + std::to_string(task) + " out of range [0, " +
                        std::to_string(m.task_count) + ")");
}

// Shared body of the soft forward: scales_node is either the gated logits
// (training path) or a constant override.
NodePtr soft_forward_impl(const MultitaskModel& m, int task, const NodePtr& x,
                          const NodePtr& scales_node, bool train, Rng& rng) {
  check_task(m, task);
  const Index B = m.branch_count(), D = m.depth;
  NodePtr y = apply_encoder(m.encoders[static_cast<size_t>(task)], x);
  for (int k = 0; k < D; ++k) {
    NodePtr acc;
    for (Index j = 0; j < B; ++j) {
      NodePtr branch = (j < D) ? core_branch(m, static_cast<int>(j), k, y) : y;
      branch = dropout(branch, m.dropout_rate, train, rng);
      const Index flat = (task * B + j) * D + k;
      NodePtr term = scale_entry(branch, scales_node, flat);
      acc = acc ? add(acc, term) : term;
    }
    y = acc;
  }
  return apply_decoder(m.decoders[static_cast<size_t>(task)], y);
}

} // namespace

std::vector<NodePtr> MultitaskModel::all_params() const {
  std::vector<NodePtr> out;
  std::unordered_set<Node*> seen;
  auto push = [&](const NodePtr& p) {
    if (p && seen.insert(p.get()).second) out.push_back(p);
  };
  for (const auto& l : core) {
    push(l.W);
    push(l.b);
  }
  for (const auto& e : encoders) {
    push(e.W);
    push(e.b);
  }
  for (const auto& d : decoders) {
    push(d.W);
    push(d.b);
  }
  push(ordering.logits);
  return out;
}

std::vector<NodePtr> MultitaskModel::trainable_params() const {
  std::vector<NodePtr> out;
  for (const auto& p : all_params())
    if (p->requires_grad) out.push_back(p);
  return out;
}

Index MultitaskModel::trainable_scalar_count() const {
  Index n = 0;
  for (const auto& p : trainable_params()) n += p->value.size();
  return n;
}

MultitaskModel build_model(const ModelConfig& cfg, Rng& rng) {
  if (cfg.tasks < 1 || cfg.depth < 1) throw ContractError("build_model: tasks and depth must be >= 1");
  if (cfg.include_identity && cfg.layer_kind == LayerKind::Conv)
    throw ShapeError("identity branch is incompatible with pooling conv layers");
  MultitaskModel m;
  m.task_count = cfg.tasks;
  m.depth = cfg.depth;
  m.dropout_rate = cfg.dropout_rate;

  for (Index k = 0; k < cfg.depth; ++k) {
    CoreLayer l;
    l.kind = cfg.layer_kind;
    l.phi = cfg.phi;
    l.units = cfg.units;
    if (cfg.layer_kind == LayerKind::Dense) {
      l.W = leaf(uniform_init({cfg.units, cfg.units}, cfg.units, cfg.units, rng), true);
      l.b = leaf(Tensor({cfg.units}), true);
    } else {
      l.W = leaf(uniform_init({cfg.units, cfg.units, 3, 3}, cfg.units * 9, cfg.units * 9, rng), true);
      l.b = leaf(Tensor({cfg.units}), true);
    }
    m.core.push_back(std::move(l));
  }

  for (Index i = 0; i < cfg.tasks; ++i) {
    if (cfg.share_encoder && i > 0) {
      m.encoders.push_back(m.encoders[0]);
    } else {
      const Index in = cfg.input_dims.empty()
                           ? cfg.units
                           : cfg.input_dims[static_cast<size_t>(cfg.input_dims.size() == 1 ? 0 : i)];
      m.encoders.push_back(build_encoder(cfg, in, rng));
    }
  }

  const Index fdim = decoder_feature_dim(cfg);
  for (Index i = 0; i < cfg.tasks; ++i) {
    if (cfg.share_decoder && i > 0) {
      m.decoders.push_back(m.decoders[0]);
    } else {
      const Index out = cfg.output_dims.empty()
                            ? 1
                            : cfg.output_dims[static_cast<size_t>(cfg.output_dims.size() == 1 ? 0 : i)];
      m.decoders.push_back(build_decoder(cfg, out, fdim, rng));
    }
  }

  m.ordering.mode = cfg.mode;
  m.ordering.gate = cfg.gate;
  m.ordering.include_identity = cfg.include_identity;
  if (cfg.mode == OrderingMode::Permuted) {
    // Cyclic shifts: task i applies layer (k + i) mod D at depth k. Distinct per
    // task for T <= D, and the layout the cyclic trace products are built from.
    for (Index i = 0; i < cfg.tasks; ++i) {
      std::vector<int> perm(static_cast<size_t>(cfg.depth));
      for (Index k = 0; k < cfg.depth; ++k)
        perm[static_cast<size_t>(k)] = static_cast<int>((k + i) % cfg.depth);
      m.ordering.perms.push_back(std::move(perm));
    }
  }
  if (cfg.mode == OrderingMode::Soft) {
    // Zero logits: equal scales at every (task, depth) under the softmax gate.
    m.ordering.logits = leaf(Tensor({cfg.tasks, m.branch_count(), cfg.depth}), true);
  }
  return m;
}

ScalingTensor scaling_from_logits(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("scaling logits must be [T x B x D], got " + logits.shape_str());
  return ScalingTensor{softmax_axis(logits, 1), logits.dim(0), logits.dim(1), logits.dim(2)};
}

ScalingTensor sigmoid_scaling(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("scaling logits must be [T x B x D], got " + logits.shape_str());
  return ScalingTensor{activate(Activation::Sigmoid, logits), logits.dim(0), logits.dim(1),
                       logits.dim(2)};
}

ScalingTensor one_hot_scaling(const std::vector<std::vector<int>>& perms) {
  if (perms.empty()) throw ContractError("one_hot_scaling: no permutations");
  const Index T = static_cast<Index>(perms.size());
  const Index D = static_cast<Index>(perms[0].size());
  ScalingTensor s{Tensor({T, D, D}), T, D, D};
  for (Index i = 0; i < T; ++i) {
    const auto& p = perms[static_cast<size_t>(i)];
    if (static_cast<Index>(p.size()) != D) throw ContractError("one_hot_scaling: ragged permutation list");
    std::unordered_set<int> seen;
    for (int v : p)
      if (v < 0 || v >= D || !seen.insert(v).second)
        throw ContractError("one_hot_scaling: input is not a permutation of {0..D-1}");
    for (Index k = 0; k < D; ++k) s.scales[(i * D + p[static_cast<size_t>(k)]) * D + k] = 1;
  }
  return s;
}

NodePtr forward_parallel(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng) {
  check_task(m, task);
  NodePtr y = apply_encoder(m.encoders[static_cast<size_t>(task)], x);
  for (int k = 0; k < m.depth; ++k)
    y = dropout(core_branch(m, k, k, y), m.dropout_rate, train, rng);
  return apply_decoder(m.decoders[static_cast<size_t>(task)], y);
}

NodePtr forward_permuted(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng) {
  check_task(m, task);
  if (m.ordering.perms.size() != static_cast<size_t>(m.task_count))
    throw ContractError("forward_permuted: permutations not set for every task");
  const auto& perm = m.ordering.perms[static_cast<size_t>(task)];
  NodePtr y = apply_encoder(m.encoders[static_cast<size_t>(task)], x);
  for (int k = 0; k < m.depth; ++k)
    y = dropout(core_branch(m, perm[static_cast<size_t>(k)], k, y), m.dropout_rate, train, rng);
  return apply_decoder(m.decoders[static_cast<size_t>(task)], y);
}

NodePtr forward_soft(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng) {
  if (!m.ordering.logits) throw ContractError("forward_soft: model has no scaling logits");
  NodePtr scales = m.ordering.gate == GateKind::Softmax ? softmax(m.ordering.logits, 1)
                                                        : sigmoid(m.ordering.logits);
  return soft_forward_impl(m, task, x, scales, train, rng);
}

NodePtr forward_soft_scaled(const MultitaskModel& m, int task, const NodePtr& x,
                            const ScalingTensor& s) {
  if (s.tasks != m.task_count || s.branches != m.branch_count() || s.depth != m.depth)
    throw ShapeError("forward_soft_scaled: scaling tensor " + s.scales.shape_str() +
                     " does not match model");
  Rng dummy(0);
  return soft_forward_impl(m, task, x, leaf(s.scales, false), false, dummy);
}

NodePtr forward(const MultitaskModel& m, int task, const NodePtr& x, bool train, Rng& rng) {
  switch (m.ordering.mode) {
    case OrderingMode::Parallel:
      return forward_parallel(m, task, x, train, rng);
    case OrderingMode::Permuted:
      return forward_permuted(m, task, x, train, rng);
    case OrderingMode::Soft:
      return forward_soft(m, task, x, train, rng);
  }
  throw ContractError("forward: unknown ordering mode");
}

Tensor forward_eval(const MultitaskModel& m, int task, const Tensor& x) {
  Rng dummy(0);
  return forward(m, task, leaf(x, false), false, dummy)->value;
}

ScalingTensor current_scaling(const MultitaskModel& m) {
  if (!m.ordering.logits) throw ContractError("current_scaling: model has no scaling logits");
  return m.ordering.gate == GateKind::Softmax ? scaling_from_logits(m.ordering.logits->value)
                                              : sigmoid_scaling(m.ordering.logits->value);
}

} // namespace softorder
