#pragma once

#include "softorder/dataset.hpp"
#include "softorder/model.hpp"

#include <utility>
#include <vector>

namespace softorder {

struct AdamConfig {
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
public:
  explicit Adam(std::vector<NodePtr> params, AdamConfig cfg = {});

  void zero_grad();
  void step();
  long step_count() const { return step_; }
  const std::vector<NodePtr>& params() const { return params_; }

private:
  std::vector<NodePtr> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  long step_ = 0;
};

/// Batch-mean loss. bce expects probabilities in [0,1] and 0/1 targets;
/// ce expects row-normalized probabilities and class-index targets.
Scalar compute_loss(LossKind kind, const Tensor& prediction, const Tensor& target);
NodePtr loss_node(LossKind kind, const NodePtr& prediction, const Tensor& target);

struct TrainConfig {
  long iterations = 1;
  Index batch_size = 64;
  AdamConfig adam;
  long eval_every = 100;
  uint64_t seed = 0;
  bool full_batch = false;           // use the whole training split every step
  bool synchronized_batches = false; // same sample indices for every task
  Scalar loss_scale = 1;             // multiplies the summed loss
  Split eval_split = Split::Validation;
};

struct EvalReport {
  std::vector<Scalar> loss;     // per task
  std::vector<Scalar> accuracy; // per task; NaN for regression tasks
  Scalar overall_loss = 0;      // sum over tasks
};

struct EvalPoint {
  long iteration = 0;
  EvalReport report;
};

struct RunRecord {
  std::vector<std::vector<Scalar>> train_loss; // [iteration][task]
  std::vector<EvalPoint> evals;
  std::vector<std::pair<long, Tensor>> scaling_snapshots; // soft mode only
  uint64_t seed = 0;
  double wall_seconds = 0;
};

/// One joint update: a batch per task, summed loss, single backward pass,
/// single optimizer step. Returns the per-task batch losses.
std::vector<Scalar> multitask_step(MultitaskModel& model, const std::vector<TaskDataset>& tasks,
                                   Adam& opt, const TrainConfig& cfg, Rng& rng);

EvalReport evaluate(const MultitaskModel& model, const std::vector<TaskDataset>& tasks, Split split);

RunRecord train(MultitaskModel& model, const std::vector<TaskDataset>& tasks, const TrainConfig& cfg);

} // namespace softorder
