#pragma once

#include "softorder/dataset.hpp"
#include "softorder/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace softorder {

/// Raised on malformed input files (IDX, CSV, PGM); names the offending field.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RandomTaskSpec {
  Index m = 16;          // input dimension
  Index n = 64;          // samples per task
  Index tasks = 2;
  bool relu = false;     // generation metadata only; the model picks phi
  uint64_t seed = 0;
};

/// T memorization tasks: n i.i.d. uniform inputs in [0,1]^m with uniform
/// binary labels. Train split only; fit accuracy on it is the metric.
std::vector<TaskDataset> gen_random_tasks(const RandomTaskSpec& spec);

struct IdxData {
  Tensor images; // [N x h x w], values scaled to [0,1]
  std::vector<int> labels;
};

/// Big-endian IDX pair (magic 2051 images / 2049 labels, matching counts).
IdxData load_idx(const std::string& images_path, const std::string& labels_path);

struct MnistPairTasks {
  std::vector<TaskDataset> tasks;
  std::vector<uint64_t> encoder_seeds;          // per-task frozen encoder seed
  std::vector<std::pair<int, int>> digit_pairs; // (negative digit, positive digit)
};

/// k binary digit-pair tasks: digits drawn without replacement within a task,
/// with replacement across tasks. Inputs are flattened 28x28 vectors; the
/// restricted test set doubles as the validation split.
MnistPairTasks make_mnist_pair_tasks(const IdxData& train, const IdxData& test, int k,
                                     uint64_t seed);

/// Header + trailing-label CSV; features min-max scaled to [0,1] with
/// training-split statistics, 80-20 train/validation split fixed by seed.
TaskDataset load_csv_task(const std::string& path, uint64_t seed);

/// One regression task per grayscale image: every pixel becomes a sample
/// (x, y) -> v with coordinates normalized to [0,1]^2. All pixels train.
std::vector<TaskDataset> make_pixel_tasks(const std::vector<Tensor>& images);

struct GlyphSpec {
  int tasks = 2;
  int classes = 4;
  Index image_size = 16;
  Index channels = 1;      // conv filter count; image in channel 0, rest zero
  int train_per_class = 32;
  int validation_per_class = 8;
  int test_per_class = 8;
  uint64_t seed = 0;
};

/// Synthetic classification tasks composed from a shared stroke library;
/// class templates are distinct stroke subsets, samples add shift and
/// intensity jitter.
std::vector<TaskDataset> gen_synthetic_glyph_tasks(const GlyphSpec& spec);

/// Replace each sample's input with its flat vector (conv -> dense reuse).
TaskDataset flatten_dataset(const TaskDataset& d);

} // namespace softorder
