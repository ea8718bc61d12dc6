#include "softorder/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace softorder {

Tensor stack_inputs(const std::vector<Sample>& samples, const std::vector<Index>& indices) {
  if (indices.empty()) throw ContractError("stack_inputs: empty batch");
  const Tensor& first = samples[static_cast<size_t>(indices[0])].input;
  std::vector<Index> shape{static_cast<Index>(indices.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(std::move(shape));
  const Index stride = first.size();
  for (size_t r = 0; r < indices.size(); ++r) {
    const Tensor& in = samples[static_cast<size_t>(indices[r])].input;
    require_same_shape(first, in, "stack_inputs");
    out.array().segment(static_cast<Index>(r) * stride, stride) = in.array();
  }
  return out;
}

Tensor stack_targets(const std::vector<Sample>& samples, const std::vector<Index>& indices) {
  if (indices.empty()) throw ContractError("stack_targets: empty batch");
  const Index stride = samples[static_cast<size_t>(indices[0])].target.size();
  Tensor out({static_cast<Index>(indices.size()), stride});
  for (size_t r = 0; r < indices.size(); ++r)
    out.array().segment(static_cast<Index>(r) * stride, stride) =
        samples[static_cast<size_t>(indices[r])].target.array();
  return out;
}

std::vector<Index> all_indices(size_t n) {
  std::vector<Index> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<Index>(i);
  return idx;
}

Adam::Adam(std::vector<NodePtr> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  const Scalar bc1 = Scalar(1) - std::pow(cfg_.beta1, Scalar(step_));
  const Scalar bc2 = Scalar(1) - std::pow(cfg_.beta2, Scalar(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    const ArrayXs& g = p.grad.array();
    m_[i].array() = cfg_.beta1 * m_[i].array() + (Scalar(1) - cfg_.beta1) * g;
    v_[i].array() = cfg_.beta2 * v_[i].array() + (Scalar(1) - cfg_.beta2) * g.square();
    p.value.array() -=
        cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

NodePtr loss_node(LossKind kind, const NodePtr& prediction, const Tensor& target) {
  switch (kind) {
    case LossKind::Bce: return bce_loss(prediction, target);
    case LossKind::Ce: return ce_loss(prediction, target);
    case LossKind::Mse: return mse_loss(prediction, target);
  }
  throw ContractError("loss_node: unknown kind");
}

Scalar compute_loss(LossKind kind, const Tensor& prediction, const Tensor& target) {
  return loss_node(kind, leaf(prediction, false), target)->value[0];
}

namespace {

std::vector<Index> draw_batch(size_t n, Index batch_size, bool full_batch, Rng& rng) {
  if (n == 0) throw ContractError("empty training split");
  if (full_batch) return all_indices(n);
  std::vector<Index> idx(static_cast<size_t>(batch_size));
  for (auto& i : idx) i = rng.uniform_index(static_cast<Index>(n)); // with replacement
  return idx;
}

Scalar split_accuracy(LossKind kind, const Tensor& pred, const Tensor& targets) {
  const Index batch = pred.dim(0);
  switch (kind) {
    case LossKind::Bce: {
      Index hit = 0;
      for (Index i = 0; i < batch; ++i)
        if ((pred[i] > Scalar(0.5)) == (targets[i] > Scalar(0.5))) ++hit;
      return Scalar(hit) / Scalar(batch);
    }
    case LossKind::Ce: {
      const Index classes = pred.dim(1);
      Index hit = 0;
      for (Index i = 0; i < batch; ++i) {
        Index best = 0;
        for (Index c = 1; c < classes; ++c)
          if (pred[i * classes + c] > pred[i * classes + best]) best = c;
        if (best == static_cast<Index>(targets[i])) ++hit;
      }
      return Scalar(hit) / Scalar(batch);
    }
    case LossKind::Mse:
      return std::numeric_limits<Scalar>::quiet_NaN();
  }
  throw ContractError("split_accuracy: unknown kind");
}

} // namespace

std::vector<Scalar> multitask_step(MultitaskModel& model, const std::vector<TaskDataset>& tasks,
                                   Adam& opt, const TrainConfig& cfg, Rng& rng) {
  if (tasks.size() != static_cast<size_t>(model.task_count))
    throw ContractError("multitask_step: dataset count does not match model task count");

  std::vector<std::vector<Index>> batches(tasks.size());
  if (cfg.synchronized_batches) {
    const size_t n = tasks[0].train.size();
    for (const auto& t : tasks)
      if (t.train.size() != n)
        throw ContractError("synchronized batches require equal training split sizes");
    auto idx = draw_batch(n, cfg.batch_size, cfg.full_batch, rng);
    for (auto& b : batches) b = idx;
  } else {
    for (size_t t = 0; t < tasks.size(); ++t)
      batches[t] = draw_batch(tasks[t].train.size(), cfg.batch_size, cfg.full_batch, rng);
  }

  std::vector<NodePtr> losses;
  std::vector<Scalar> values;
  for (size_t t = 0; t < tasks.size(); ++t) {
    NodePtr x = leaf(stack_inputs(tasks[t].train, batches[t]), false);
    NodePtr pred = forward(model, static_cast<int>(t), x, /*train=*/true, rng);
    NodePtr l = loss_node(tasks[t].loss, pred, stack_targets(tasks[t].train, batches[t]));
    values.push_back(l->value[0]);
    losses.push_back(std::move(l));
  }
  NodePtr loss = total(losses); // fixed ascending task order
  if (cfg.loss_scale != Scalar(1)) loss = scale_const(loss, cfg.loss_scale);

  opt.zero_grad();
  backward(loss);
  opt.step();
  return values;
}

EvalReport evaluate(const MultitaskModel& model, const std::vector<TaskDataset>& tasks, Split split) {
  EvalReport r;
  for (size_t t = 0; t < tasks.size(); ++t) {
    const auto& samples = tasks[t].split(split);
    if (samples.empty())
      throw ContractError("evaluate: empty split for task '" + tasks[t].name + "'");
    auto idx = all_indices(samples.size());
    Tensor pred = forward_eval(model, static_cast<int>(t), stack_inputs(samples, idx));
    Tensor targets = stack_targets(samples, idx);
    r.loss.push_back(compute_loss(tasks[t].loss, pred, targets));
    r.accuracy.push_back(split_accuracy(tasks[t].loss, pred, targets));
    r.overall_loss += r.loss.back();
  }
  return r;
}

RunRecord train(MultitaskModel& model, const std::vector<TaskDataset>& tasks, const TrainConfig& cfg) {
  if (cfg.iterations < 1) throw ContractError("train: iterations must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.seed = cfg.seed;
  Rng rng(cfg.seed);
  Adam opt(model.trainable_params(), cfg.adam);

  const bool soft = model.ordering.mode == OrderingMode::Soft;
  auto record_eval = [&](long iter) {
    rec.evals.push_back({iter, evaluate(model, tasks, cfg.eval_split)});
    if (soft) rec.scaling_snapshots.emplace_back(iter, current_scaling(model).scales);
  };

  if (soft) rec.scaling_snapshots.emplace_back(0, current_scaling(model).scales);
  for (long it = 1; it <= cfg.iterations; ++it) {
    rec.train_loss.push_back(multitask_step(model, tasks, opt, cfg, rng));
    if (cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations)) record_eval(it);
  }
  if (soft && (rec.scaling_snapshots.empty() || rec.scaling_snapshots.back().first != cfg.iterations))
    rec.scaling_snapshots.emplace_back(cfg.iterations, current_scaling(model).scales);

  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

} // namespace softorder
