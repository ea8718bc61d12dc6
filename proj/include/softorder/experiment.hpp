#pragma once

#include "softorder/model.hpp"
#include "softorder/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace softorder {

/// Raised on invalid experiment configs; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { RandomTasks, MnistPairs, Tabular, Glyphs, PixelViz, TraceCheck };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from(const std::string& s);

struct ArchitectureConfig {
  Index depth = 4;
  LayerKind layer_kind = LayerKind::Dense;
  Index units = 64;
  Activation phi = Activation::Relu;
  std::vector<OrderingMode> modes;
  GateKind gate = GateKind::Softmax;
  bool include_identity = false;
  Scalar dropout = 0;
  EncoderKind encoder = EncoderKind::Identity;
  DecoderKind decoder = DecoderKind::DenseSigmoid;
  bool share_encoder = false;
  bool share_decoder = false;
};

struct TrainingSection {
  long iterations = 1000;
  Index batch_size = 64;
  long eval_every = 100;
  AdamConfig adam;
  bool full_batch = false;
  bool synchronized_batches = false;
};

struct DataSection {
  Index m = 16;                    // random-tasks / trace-check
  std::vector<Index> n_values;     // random-tasks sample counts
  Index tasks = 2;
  int classes = 4;                 // glyphs
  Index image_size = 16;           // glyphs / pixel-viz
  int train_per_class = 32;
  int validation_per_class = 8;
  int test_per_class = 8;
  std::string train_images, train_labels, test_images, test_labels; // mnist-pairs
  std::vector<std::string> csv;    // tabular
  std::vector<std::string> images; // pixel-viz PGM paths (synthetic when absent)
  bool with_scalars = false;       // trace-check
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::RandomTasks;
  std::string output_dir;
  uint64_t seed = 1;
  int trials = 1;
  int workers = 1;
  ArchitectureConfig arch;
  TrainingSection training;
  DataSection data;
};

/// Strict JSON parse: unknown keys are errors, referenced paths must exist.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& source_name);
ExperimentConfig load_experiment_config(const std::string& path);

/// Full round-trip serialization (re-parses to an identical config).
std::string echo_config(const ExperimentConfig& cfg);

/// Core of `run`; throws on failure (the CLI maps exceptions to exit codes).
void run_experiment(const ExperimentConfig& cfg);

/// CLI entry points; return process exit codes
/// (0 ok, 1 runtime, 2 config, 3 data format, 4 trace singularity).
int cmd_run(const std::string& config_path, const std::optional<std::string>& out_override,
            const std::optional<uint64_t>& seed_override, std::optional<int> workers_override);
int cmd_analyze(const std::string& run_dir, const std::optional<std::string>& out_override);
int cmd_sweep(const std::string& run_dir, int task, int layer, int depth, int steps,
              const std::optional<std::string>& out_override);
int cmd_tracecheck(Index tasks, Index m, uint64_t seed, bool with_scalars, bool json_output);

} // namespace softorder
