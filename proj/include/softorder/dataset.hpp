#pragma once

#include "softorder/tensor.hpp"

#include <string>
#include <vector>

namespace softorder {

enum class LossKind { Bce, Ce, Mse };
enum class Split { Train, Validation, Test };

struct Sample {
  Tensor input;
  Tensor target; // class index ([1]) for ce, 0/1 ([1]) for bce, values for mse
};

struct TaskDataset {
  std::string name;
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  LossKind loss = LossKind::Ce;
  std::vector<Index> input_shape;
  std::vector<Index> output_shape;

  const std::vector<Sample>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Validation: return validation;
      case Split::Test: return test;
    }
    throw ContractError("unknown split");
  }
};

/// Stack the selected samples' inputs into a [n x input_shape...] batch.
Tensor stack_inputs(const std::vector<Sample>& samples, const std::vector<Index>& indices);
/// Stack targets into [n x target_size].
Tensor stack_targets(const std::vector<Sample>& samples, const std::vector<Index>& indices);

std::vector<Index> all_indices(size_t n);

} // namespace softorder
