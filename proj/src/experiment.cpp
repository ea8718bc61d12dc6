#include "softorder/experiment.hpp"

#include "softorder/analysis.hpp"
#include "softorder/io.hpp"
#include "softorder/names.hpp"
#include "softorder/taskgen.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace softorder {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::RandomTasks: return "random-tasks";
    case ExperimentKind::MnistPairs: return "mnist-pairs";
    case ExperimentKind::Tabular: return "tabular";
    case ExperimentKind::Glyphs: return "glyphs";
    case ExperimentKind::PixelViz: return "pixel-viz";
    case ExperimentKind::TraceCheck: return "trace-check";
  }
  return "?";
}

ExperimentKind experiment_kind_from(const std::string& s) {
  if (s == "random-tasks") return ExperimentKind::RandomTasks;
  if (s == "mnist-pairs") return ExperimentKind::MnistPairs;
  if (s == "tabular") return ExperimentKind::Tabular;
  if (s == "glyphs") return ExperimentKind::Glyphs;
  if (s == "pixel-viz") return ExperimentKind::PixelViz;
  if (s == "trace-check") return ExperimentKind::TraceCheck;
  throw ConfigError("unknown experiment kind: '" + s + "'");
}

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

void check_path(const std::string& p, const std::string& field) {
  if (!fs::exists(p)) throw ConfigError("config field '" + field + "': path does not exist: " + p);
}

// Per-kind defaults; an explicit architecture/training block overrides them.
void apply_kind_defaults(ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::RandomTasks:
      c.arch = {.depth = 2,
                .units = c.data.m,
                .phi = Activation::Identity,
                .modes = {OrderingMode::Parallel, OrderingMode::Permuted},
                .encoder = EncoderKind::Identity,
                .decoder = DecoderKind::DenseSigmoid,
                .share_decoder = true};
      c.training.full_batch = true;
      c.training.eval_every = 200;
      break;
    case ExperimentKind::MnistPairs:
      c.arch = {.depth = 4,
                .units = 64,
                .phi = Activation::Relu,
                .modes = {OrderingMode::Parallel, OrderingMode::Permuted, OrderingMode::Soft},
                .dropout = Scalar(0.5),
                .encoder = EncoderKind::FrozenRandomDense,
                .decoder = DecoderKind::DenseSigmoid};
      break;
    case ExperimentKind::Tabular:
      c.arch = {.depth = 4,
                .units = 32,
                .phi = Activation::Relu,
                .modes = {OrderingMode::Parallel, OrderingMode::Permuted, OrderingMode::Soft},
                .dropout = Scalar(0.8),
                .encoder = EncoderKind::LearnedDense,
                .decoder = DecoderKind::DenseSoftmax};
      break;
    case ExperimentKind::Glyphs:
      c.arch = {.depth = 4,
                .layer_kind = LayerKind::Conv,
                .units = 8,
                .phi = Activation::Relu,
                .modes = {OrderingMode::Parallel, OrderingMode::Permuted, OrderingMode::Soft},
                .dropout = Scalar(0.5),
                .encoder = EncoderKind::Identity,
                .decoder = DecoderKind::DenseSoftmax};
      break;
    case ExperimentKind::PixelViz:
      c.arch = {.depth = 4,
                .units = 100,
                .phi = Activation::Relu,
                .modes = {OrderingMode::Soft},
                .gate = GateKind::Sigmoid,
                .encoder = EncoderKind::LearnedLinear,
                .decoder = DecoderKind::GlobalAveragePool,
                .share_encoder = true};
      c.training.synchronized_batches = true;
      c.data.image_size = 28;
      break;
    case ExperimentKind::TraceCheck:
      c.data.m = 4;
      c.data.tasks = 3;
      break;
  }
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& source_name) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ": JSON parse error: " + e.what());
  }
  check_keys(j, {"experiment", "output_dir", "seed", "trials", "workers", "architecture",
                 "training", "data"},
             source_name);
  if (!j.contains("experiment")) throw ConfigError(source_name + ": missing 'experiment'");
  if (!j.contains("output_dir")) throw ConfigError(source_name + ": missing 'output_dir'");

  ExperimentConfig c;
  try {
    c.kind = experiment_kind_from(j.at("experiment").get<std::string>());
    c.output_dir = j.at("output_dir").get<std::string>();
    c.seed = j.value("seed", uint64_t(1));
    c.trials = j.value("trials", 1);
    c.workers = j.value("workers", 1);
    if (c.trials < 1) throw ConfigError(source_name + ": trials must be >= 1");
    if (c.workers < 1) throw ConfigError(source_name + ": workers must be >= 1");

    // Data first: kind defaults may depend on it (random-tasks layer width).
    const json d = j.value("data", json::object());
    switch (c.kind) {
      case ExperimentKind::RandomTasks:
        check_keys(d, {"m", "n", "tasks"}, source_name + ".data");
        c.data.m = d.value("m", Index(16));
        c.data.tasks = d.value("tasks", Index(2));
        if (d.contains("n")) {
          if (d.at("n").is_array())
            c.data.n_values = d.at("n").get<std::vector<Index>>();
          else
            c.data.n_values = {d.at("n").get<Index>()};
        } else {
          c.data.n_values = {64};
        }
        break;
      case ExperimentKind::MnistPairs:
        check_keys(d, {"train_images", "train_labels", "test_images", "test_labels", "tasks"},
                   source_name + ".data");
        c.data.train_images = d.value("train_images", "");
        c.data.train_labels = d.value("train_labels", "");
        c.data.test_images = d.value("test_images", "");
        c.data.test_labels = d.value("test_labels", "");
        c.data.tasks = d.value("tasks", Index(2));
        {
          const std::pair<const char*, const std::string*> paths[] = {
              {"train_images", &c.data.train_images},
              {"train_labels", &c.data.train_labels},
              {"test_images", &c.data.test_images},
              {"test_labels", &c.data.test_labels}};
          for (const auto& [field, p] : paths) {
            if (p->empty()) throw ConfigError(source_name + ".data: missing '" + field + "'");
            check_path(*p, field);
          }
        }
        break;
      case ExperimentKind::Tabular:
        check_keys(d, {"csv"}, source_name + ".data");
        if (!d.contains("csv")) throw ConfigError(source_name + ".data: missing 'csv'");
        c.data.csv = d.at("csv").get<std::vector<std::string>>();
        if (c.data.csv.empty()) throw ConfigError(source_name + ".data: empty 'csv' list");
        for (const auto& p : c.data.csv) check_path(p, "csv");
        break;
      case ExperimentKind::Glyphs:
        check_keys(d,
                   {"tasks", "classes", "image_size", "train_per_class", "validation_per_class",
                    "test_per_class"},
                   source_name + ".data");
        c.data.tasks = d.value("tasks", Index(2));
        c.data.classes = d.value("classes", 4);
        c.data.image_size = d.value("image_size", Index(16));
        c.data.train_per_class = d.value("train_per_class", 32);
        c.data.validation_per_class = d.value("validation_per_class", 8);
        c.data.test_per_class = d.value("test_per_class", 8);
        break;
      case ExperimentKind::PixelViz:
        check_keys(d, {"images", "tasks", "image_size"}, source_name + ".data");
        c.data.tasks = d.value("tasks", Index(2));
        c.data.image_size = d.value("image_size", Index(28));
        if (d.contains("images")) {
          c.data.images = d.at("images").get<std::vector<std::string>>();
          for (const auto& p : c.data.images) check_path(p, "images");
        }
        break;
      case ExperimentKind::TraceCheck:
        check_keys(d, {"tasks", "m", "with_scalars"}, source_name + ".data");
        c.data.tasks = d.value("tasks", Index(3));
        c.data.m = d.value("m", Index(4));
        c.data.with_scalars = d.value("with_scalars", false);
        break;
    }

    apply_kind_defaults(c);

    if (j.contains("architecture")) {
      const json& a = j.at("architecture");
      check_keys(a,
                 {"depth", "layer_kind", "units", "activation", "modes", "gate",
                  "include_identity", "dropout", "encoder", "decoder", "share_encoder",
                  "share_decoder"},
                 source_name + ".architecture");
      c.arch.depth = a.value("depth", c.arch.depth);
      if (a.contains("layer_kind")) c.arch.layer_kind = layer_kind_from(a.at("layer_kind").get<std::string>());
      c.arch.units = a.value("units", c.arch.units);
      if (a.contains("activation")) c.arch.phi = activation_from(a.at("activation").get<std::string>());
      if (a.contains("modes")) {
        c.arch.modes.clear();
        for (const auto& m : a.at("modes")) c.arch.modes.push_back(ordering_mode_from(m.get<std::string>()));
        if (c.arch.modes.empty()) throw ConfigError(source_name + ": empty 'modes'");
      }
      if (a.contains("gate")) c.arch.gate = gate_kind_from(a.at("gate").get<std::string>());
      c.arch.include_identity = a.value("include_identity", c.arch.include_identity);
      c.arch.dropout = a.value("dropout", c.arch.dropout);
      if (a.contains("encoder")) c.arch.encoder = encoder_kind_from(a.at("encoder").get<std::string>());
      if (a.contains("decoder")) c.arch.decoder = decoder_kind_from(a.at("decoder").get<std::string>());
      c.arch.share_encoder = a.value("share_encoder", c.arch.share_encoder);
      c.arch.share_decoder = a.value("share_decoder", c.arch.share_decoder);
    }
    if (c.arch.gate == GateKind::Sigmoid && c.kind != ExperimentKind::PixelViz)
      throw ConfigError(source_name + ": sigmoid gate is restricted to pixel-viz sweeps");
    if (c.arch.dropout < 0 || c.arch.dropout >= 1)
      throw ConfigError(source_name + ": dropout must be in [0, 1)");

    if (j.contains("training")) {
      const json& t = j.at("training");
      check_keys(t,
                 {"iterations", "batch_size", "eval_every", "lr", "beta1", "beta2", "eps",
                  "full_batch", "synchronized_batches"},
                 source_name + ".training");
      c.training.iterations = t.value("iterations", c.training.iterations);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.eval_every = t.value("eval_every", c.training.eval_every);
      c.training.adam.lr = t.value("lr", c.training.adam.lr);
      c.training.adam.beta1 = t.value("beta1", c.training.adam.beta1);
      c.training.adam.beta2 = t.value("beta2", c.training.adam.beta2);
      c.training.adam.eps = t.value("eps", c.training.adam.eps);
      c.training.full_batch = t.value("full_batch", c.training.full_batch);
      c.training.synchronized_batches =
          t.value("synchronized_batches", c.training.synchronized_batches);
      if (c.training.iterations < 1) throw ConfigError(source_name + ": iterations must be >= 1");
      if (c.training.batch_size < 1) throw ConfigError(source_name + ": batch_size must be >= 1");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

std::string echo_config(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.kind);
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["workers"] = c.workers;
  json a;
  a["depth"] = c.arch.depth;
  a["layer_kind"] = to_string(c.arch.layer_kind);
  a["units"] = c.arch.units;
  a["activation"] = to_string(c.arch.phi);
  json modes = json::array();
  for (auto m : c.arch.modes) modes.push_back(to_string(m));
  a["modes"] = modes;
  a["gate"] = to_string(c.arch.gate);
  a["include_identity"] = c.arch.include_identity;
  a["dropout"] = c.arch.dropout;
  a["encoder"] = to_string(c.arch.encoder);
  a["decoder"] = to_string(c.arch.decoder);
  a["share_encoder"] = c.arch.share_encoder;
  a["share_decoder"] = c.arch.share_decoder;
  j["architecture"] = a;
  json t;
  t["iterations"] = c.training.iterations;
  t["batch_size"] = c.training.batch_size;
  t["eval_every"] = c.training.eval_every;
  t["lr"] = c.training.adam.lr;
  t["beta1"] = c.training.adam.beta1;
  t["beta2"] = c.training.adam.beta2;
  t["eps"] = c.training.adam.eps;
  t["full_batch"] = c.training.full_batch;
  t["synchronized_batches"] = c.training.synchronized_batches;
  j["training"] = t;
  json d;
  switch (c.kind) {
    case ExperimentKind::RandomTasks:
      d["m"] = c.data.m;
      d["n"] = c.data.n_values;
      d["tasks"] = c.data.tasks;
      break;
    case ExperimentKind::MnistPairs:
      d["train_images"] = c.data.train_images;
      d["train_labels"] = c.data.train_labels;
      d["test_images"] = c.data.test_images;
      d["test_labels"] = c.data.test_labels;
      d["tasks"] = c.data.tasks;
      break;
    case ExperimentKind::Tabular:
      d["csv"] = c.data.csv;
      break;
    case ExperimentKind::Glyphs:
      d["tasks"] = c.data.tasks;
      d["classes"] = c.data.classes;
      d["image_size"] = c.data.image_size;
      d["train_per_class"] = c.data.train_per_class;
      d["validation_per_class"] = c.data.validation_per_class;
      d["test_per_class"] = c.data.test_per_class;
      break;
    case ExperimentKind::PixelViz:
      if (!c.data.images.empty()) d["images"] = c.data.images;
      d["tasks"] = c.data.tasks;
      d["image_size"] = c.data.image_size;
      break;
    case ExperimentKind::TraceCheck:
      d["tasks"] = c.data.tasks;
      d["m"] = c.data.m;
      d["with_scalars"] = c.data.with_scalars;
      break;
  }
  j["data"] = d;
  return j.dump(1);
}

namespace {

struct Cell {
  OrderingMode mode;
  Index n = 0; // random-tasks sample count, 0 elsewhere
  int trial = 0;
  uint64_t seed = 0;
  RunRecord rec;
  Scalar final_loss = 0, final_accuracy = 0;
  std::string metrics_csv, scalings_csv;
  Index scaling_tasks = 0, scaling_branches = 0, scaling_depth = 0;
};

std::string cell_stem(const ExperimentConfig& cfg, const Cell& c) {
  std::string s = to_string(c.mode);
  if (cfg.kind == ExperimentKind::RandomTasks) s += "_n" + std::to_string(c.n);
  s += "_trial" + std::to_string(c.trial);
  return s;
}

// Task construction per experiment kind; `seed` is the per-trial seed.
std::vector<TaskDataset> build_tasks(const ExperimentConfig& cfg, Index n, uint64_t seed) {
  Rng base(seed);
  switch (cfg.kind) {
    case ExperimentKind::RandomTasks: {
      RandomTaskSpec spec;
      spec.m = cfg.data.m;
      spec.n = n;
      spec.tasks = cfg.data.tasks;
      spec.relu = cfg.arch.phi == Activation::Relu;
      spec.seed = base.derive(100).seed();
      return gen_random_tasks(spec);
    }
    case ExperimentKind::MnistPairs: {
      IdxData train = load_idx(cfg.data.train_images, cfg.data.train_labels);
      IdxData test = load_idx(cfg.data.test_images, cfg.data.test_labels);
      return make_mnist_pair_tasks(train, test, static_cast<int>(cfg.data.tasks),
                                   base.derive(100).seed())
          .tasks;
    }
    case ExperimentKind::Tabular: {
      std::vector<TaskDataset> tasks;
      // The 80-20 split is fixed across trials (derived from the base seed).
      Rng split_rng(cfg.seed);
      for (const auto& p : cfg.data.csv) tasks.push_back(load_csv_task(p, split_rng.derive(101).seed()));
      return tasks;
    }
    case ExperimentKind::Glyphs: {
      GlyphSpec spec;
      spec.tasks = static_cast<int>(cfg.data.tasks);
      spec.classes = cfg.data.classes;
      spec.image_size = cfg.data.image_size;
      spec.channels = cfg.arch.layer_kind == LayerKind::Conv ? cfg.arch.units : 1;
      spec.train_per_class = cfg.data.train_per_class;
      spec.validation_per_class = cfg.data.validation_per_class;
      spec.test_per_class = cfg.data.test_per_class;
      spec.seed = base.derive(100).seed();
      auto tasks = gen_synthetic_glyph_tasks(spec);
      if (cfg.arch.layer_kind == LayerKind::Dense) {
        for (auto& t : tasks) t = flatten_dataset(t);
      }
      return tasks;
    }
    case ExperimentKind::PixelViz: {
      std::vector<Tensor> images;
      if (!cfg.data.images.empty()) {
        for (const auto& p : cfg.data.images) images.push_back(read_pgm(p));
      } else {
        // Synthetic target images: one distinct glyph per task.
        GlyphSpec spec;
        spec.tasks = static_cast<int>(cfg.data.tasks);
        spec.classes = 2;
        spec.image_size = cfg.data.image_size;
        spec.channels = 1;
        spec.train_per_class = 1;
        spec.validation_per_class = 0;
        spec.test_per_class = 0;
        spec.seed = cfg.seed; // shared across trials: the tasks are fixed
        auto glyphs = gen_synthetic_glyph_tasks(spec);
        for (auto& g : glyphs)
          images.push_back(g.train.front().input.reshaped({cfg.data.image_size, cfg.data.image_size}));
      }
      return make_pixel_tasks(images);
    }
    case ExperimentKind::TraceCheck:
      throw ConfigError("trace-check has no datasets");
  }
  throw ConfigError("unknown experiment kind");
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const std::vector<TaskDataset>& tasks,
                             OrderingMode mode) {
  ModelConfig mc;
  mc.tasks = static_cast<Index>(tasks.size());
  mc.depth = cfg.arch.depth;
  mc.layer_kind = cfg.arch.layer_kind;
  mc.units = cfg.arch.units;
  mc.phi = cfg.arch.phi;
  mc.encoder_kind = cfg.arch.encoder;
  mc.decoder_kind = cfg.arch.decoder;
  mc.share_encoder = cfg.arch.share_encoder;
  mc.share_decoder = cfg.arch.share_decoder;
  mc.mode = mode;
  mc.gate = cfg.arch.gate;
  mc.include_identity = cfg.arch.include_identity;
  mc.dropout_rate = cfg.arch.dropout;
  for (const auto& t : tasks) {
    Index in = 1;
    for (Index d : t.input_shape) in *= d;
    mc.input_dims.push_back(in);
    Index out = 1;
    for (Index d : t.output_shape) out *= d;
    mc.output_dims.push_back(out);
  }
  if (cfg.arch.layer_kind == LayerKind::Conv) {
    mc.image_h = tasks[0].input_shape.size() == 3 ? tasks[0].input_shape[1] : 0;
    mc.image_w = tasks[0].input_shape.size() == 3 ? tasks[0].input_shape[2] : 0;
  }
  return mc;
}

Split eval_split_for(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::RandomTasks:
    case ExperimentKind::PixelViz:
      return Split::Train; // memorization experiments: fit is the metric
    case ExperimentKind::MnistPairs:
      return Split::Test;
    default:
      return Split::Validation;
  }
}

void run_cell(const ExperimentConfig& cfg, Cell& cell, MultitaskModel* keep_model) {
  auto tasks = build_tasks(cfg, cell.n, cell.seed);
  Rng model_rng = Rng(cell.seed).derive(200);
  MultitaskModel model = build_model(model_config_for(cfg, tasks, cell.mode), model_rng);

  TrainConfig tc;
  tc.iterations = cfg.training.iterations;
  tc.batch_size = cfg.training.batch_size;
  tc.adam = cfg.training.adam;
  tc.eval_every = cfg.training.eval_every;
  tc.seed = Rng(cell.seed).derive(300).seed();
  tc.full_batch = cfg.training.full_batch;
  tc.synchronized_batches = cfg.training.synchronized_batches;
  tc.eval_split = eval_split_for(cfg.kind);

  cell.rec = train(model, tasks, tc);
  const EvalReport& fin = cell.rec.evals.back().report;
  cell.final_loss = fin.overall_loss;
  Scalar acc = 0;
  int acc_n = 0;
  for (Scalar a : fin.accuracy)
    if (!std::isnan(a)) {
      acc += a;
      ++acc_n;
    }
  cell.final_accuracy = acc_n ? acc / Scalar(acc_n) : std::numeric_limits<Scalar>::quiet_NaN();
  if (model.ordering.mode == OrderingMode::Soft) {
    cell.scaling_tasks = model.task_count;
    cell.scaling_branches = model.branch_count();
    cell.scaling_depth = model.depth;
  }
  if (keep_model) *keep_model = model;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

void run_tracecheck_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const int rc =
      cmd_tracecheck(cfg.data.tasks, cfg.data.m, cfg.seed, cfg.data.with_scalars, false);
  if (rc != 0) throw std::runtime_error("trace check failed with code " + std::to_string(rc));
}

} // namespace

void run_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind == ExperimentKind::TraceCheck) {
    run_tracecheck_experiment(cfg);
    return;
  }
  fs::create_directories(cfg.output_dir);

  std::vector<Index> n_values =
      cfg.kind == ExperimentKind::RandomTasks ? cfg.data.n_values : std::vector<Index>{0};

  std::vector<Cell> cells;
  for (OrderingMode mode : cfg.arch.modes)
    for (Index n : n_values)
      for (int trial = 0; trial < cfg.trials; ++trial) {
        Cell c;
        c.mode = mode;
        c.n = n;
        c.trial = trial;
        c.seed = cfg.seed + static_cast<uint64_t>(trial); // trial seeding contract
        cells.push_back(std::move(c));
      }

  // pixel-viz keeps the trial-0 trained model for checkpointing and sweeps.
  MultitaskModel kept_model;
  const bool keep_first = cfg.kind == ExperimentKind::PixelViz;

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      run_cell(cfg, cells[i], keep_first && cells[i].trial == 0 ? &kept_model : nullptr);
    }
  };
  const int workers = std::min<int>(cfg.workers, static_cast<int>(cells.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const std::string eval_name = split_name(eval_split_for(cfg.kind));
  for (auto& c : cells) {
    c.metrics_csv = "metrics_" + cell_stem(cfg, c) + ".csv";
    write_metrics_csv(c.rec, eval_name, (fs::path(cfg.output_dir) / c.metrics_csv).string());
    if (c.mode == OrderingMode::Soft) {
      c.scalings_csv = "scalings_" + cell_stem(cfg, c) + ".csv";
      write_scalings_csv(c.rec, c.scaling_tasks, c.scaling_branches, c.scaling_depth,
                         (fs::path(cfg.output_dir) / c.scalings_csv).string());
    }
  }

  // Aggregate per (mode, n): mean and sample standard deviation across trials.
  json results = json::array();
  std::vector<Series> acc_series;
  for (OrderingMode mode : cfg.arch.modes) {
    Series s;
    s.label = to_string(mode);
    for (Index n : n_values) {
      std::vector<const Cell*> group;
      for (const auto& c : cells)
        if (c.mode == mode && c.n == n) group.push_back(&c);
      Scalar mean_acc = 0, mean_loss = 0;
      for (const Cell* c : group) {
        mean_acc += c->final_accuracy;
        mean_loss += c->final_loss;
      }
      mean_acc /= Scalar(group.size());
      mean_loss /= Scalar(group.size());
      Scalar var_acc = 0, var_loss = 0;
      if (group.size() > 1) {
        for (const Cell* c : group) {
          var_acc += (c->final_accuracy - mean_acc) * (c->final_accuracy - mean_acc);
          var_loss += (c->final_loss - mean_loss) * (c->final_loss - mean_loss);
        }
        var_acc /= Scalar(group.size() - 1);
        var_loss /= Scalar(group.size() - 1);
      }
      json r;
      r["mode"] = to_string(mode);
      if (cfg.kind == ExperimentKind::RandomTasks) r["n"] = n;
      r["mean_accuracy"] = mean_acc;
      r["std_accuracy"] = std::sqrt(var_acc);
      r["mean_loss"] = mean_loss;
      r["std_loss"] = std::sqrt(var_loss);
      json per_trial = json::array();
      for (const Cell* c : group) {
        json t;
        t["trial"] = c->trial;
        t["seed"] = c->seed;
        t["final_accuracy"] = c->final_accuracy;
        t["final_loss"] = c->final_loss;
        t["metrics_csv"] = c->metrics_csv;
        if (!c->scalings_csv.empty()) t["scalings_csv"] = c->scalings_csv;
        per_trial.push_back(t);
      }
      r["per_trial"] = per_trial;
      results.push_back(r);
      if (cfg.kind == ExperimentKind::RandomTasks) {
        s.x.push_back(Scalar(n));
        s.y.push_back(mean_acc);
      }
    }
    if (cfg.kind == ExperimentKind::RandomTasks) acc_series.push_back(std::move(s));
  }

  json summary;
  summary["magic"] = "softorder-summary";
  summary["version"] = 1;
  summary["experiment"] = to_string(cfg.kind);
  summary["config"] = json::parse(echo_config(cfg));
  summary["results"] = results;
  // Final scaling snapshot of the first soft cell, if any.
  for (const auto& c : cells)
    if (c.mode == OrderingMode::Soft && !c.rec.scaling_snapshots.empty()) {
      const Tensor& s = c.rec.scaling_snapshots.back().second;
      summary["final_scaling"] = {
          {"tasks", c.scaling_tasks},
          {"branches", c.scaling_branches},
          {"depth", c.scaling_depth},
          {"values", std::vector<Scalar>(s.array().data(), s.array().data() + s.size())}};
      break;
    }
  atomic_write((fs::path(cfg.output_dir) / "summary.json").string(),
               [&](std::ostream& out) { out << summary.dump(1); });

  // Plots.
  if (cfg.kind == ExperimentKind::RandomTasks) {
    write_line_chart_svg(acc_series, "training fit accuracy vs samples per task", "n", "accuracy",
                         (fs::path(cfg.output_dir) / "accuracy_vs_n.svg").string());
    atomic_write((fs::path(cfg.output_dir) / "accuracy_vs_n.csv").string(), [&](std::ostream& out) {
      out << "mode,n,mean_accuracy\n";
      for (const auto& s : acc_series)
        for (size_t i = 0; i < s.x.size(); ++i)
          out << s.label << "," << static_cast<long>(s.x[i]) << "," << format_scalar(s.y[i]) << "\n";
    });
  } else {
    std::vector<Series> loss_series;
    for (OrderingMode mode : cfg.arch.modes) {
      for (const auto& c : cells)
        if (c.mode == mode && c.trial == 0) {
          Series s;
          s.label = to_string(mode);
          for (const auto& e : c.rec.evals) {
            s.x.push_back(Scalar(e.iteration));
            s.y.push_back(e.report.overall_loss);
          }
          loss_series.push_back(std::move(s));
          break;
        }
    }
    write_line_chart_svg(loss_series, "overall " + eval_name + " loss", "iteration", "loss",
                         (fs::path(cfg.output_dir) / "loss_curves.svg").string());
  }

  if (cfg.kind == ExperimentKind::PixelViz) {
    save_checkpoint(kept_model, cfg.seed, (fs::path(cfg.output_dir) / "checkpoint.json").string());
    for (Index t = 0; t < kept_model.task_count; ++t) {
      Tensor img = render_pixel_task(kept_model, static_cast<int>(t), cfg.data.image_size,
                                     cfg.data.image_size);
      write_pgm(img, (fs::path(cfg.output_dir) / ("prediction_t" + std::to_string(t) + ".pgm")).string());
    }
  }
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_override,
            const std::optional<uint64_t>& seed_override, std::optional<int> workers_override) {
  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (out_override) cfg.output_dir = *out_override;
    if (seed_override) cfg.seed = *seed_override;
    if (workers_override) cfg.workers = *workers_override;
    run_experiment(cfg);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const SingularTraceError& e) {
    std::cerr << "singular trace: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_analyze(const std::string& run_dir, const std::optional<std::string>& out_override) {
  try {
    const fs::path dir(run_dir);
    const fs::path out_dir(out_override ? *out_override : run_dir);
    fs::create_directories(out_dir);
    std::ifstream in(dir / "summary.json");
    if (!in) {
      std::cerr << "analyze: no summary.json in " << run_dir << "\n";
      return 3;
    }
    json summary = json::parse(in);

    std::vector<std::string> scalings_files;
    for (const auto& r : summary.at("results"))
      for (const auto& t : r.at("per_trial"))
        if (t.contains("scalings_csv")) scalings_files.push_back(t.at("scalings_csv"));
    if (scalings_files.empty()) {
      std::cerr << "analyze: run has no scaling snapshots (no soft-ordering cells); "
                   "nothing to analyze\n";
      return 3;
    }

    for (const auto& file : scalings_files) {
      ScalingSeries series = read_scalings_csv((dir / file).string());
      const std::string stem = fs::path(file).stem().string();

      // Final usage distribution.
      ScalingTensor fin{series.scales.back(), series.tasks, series.branches, series.depth};
      UsageDistribution usage = layer_usage(fin);
      atomic_write((out_dir / (stem + "_usage.csv")).string(), [&](std::ostream& out) {
        out << "branch,depth,mean_scale\n";
        for (Index j = 0; j < series.branches; ++j)
          for (Index k = 0; k < series.depth; ++k)
            out << j << "," << k << "," << format_scalar(usage.usage[j * series.depth + k]) << "\n";
      });
      write_heatmap_svg(usage.usage, "layer usage by depth",
                        (out_dir / (stem + "_usage.svg")).string());

      // Hardness and pairwise divergence time series.
      atomic_write((out_dir / (stem + "_hardness.csv")).string(), [&](std::ostream& out) {
        out << "iteration,hardness\n";
        for (size_t i = 0; i < series.iterations.size(); ++i) {
          ScalingTensor s{series.scales[i], series.tasks, series.branches, series.depth};
          out << series.iterations[i] << "," << format_scalar(ordering_hardness(s)) << "\n";
        }
      });
      atomic_write((out_dir / (stem + "_divergence.csv")).string(), [&](std::ostream& out) {
        out << "iteration,depth,mean_pairwise_distance\n";
        for (size_t i = 0; i < series.iterations.size(); ++i) {
          ScalingTensor s{series.scales[i], series.tasks, series.branches, series.depth};
          std::vector<Scalar> mean(static_cast<size_t>(series.depth), 0);
          int pairs = 0;
          for (int a = 0; a < series.tasks; ++a)
            for (int b = a + 1; b < series.tasks; ++b) {
              auto d = scaling_distance(s, a, b);
              for (size_t k = 0; k < d.size(); ++k) mean[k] += d[k];
              ++pairs;
            }
          for (Index k = 0; k < series.depth; ++k)
            out << series.iterations[i] << "," << k << ","
                << format_scalar(pairs ? mean[static_cast<size_t>(k)] / Scalar(pairs) : 0) << "\n";
        }
      });
      write_strongest_path_svg(series.scales.back(), series.tasks, series.branches, series.depth,
                               (out_dir / (stem + "_strongest_path.svg")).string());
    }
    return 0;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_sweep(const std::string& run_dir, int task, int layer, int depth, int steps,
              const std::optional<std::string>& out_override) {
  try {
    const fs::path dir(run_dir);
    const fs::path out_dir(out_override ? *out_override : run_dir);
    std::ifstream in(dir / "summary.json");
    if (!in) {
      std::cerr << "sweep: no summary.json in " << run_dir << "\n";
      return 3;
    }
    json summary = json::parse(in);
    if (summary.at("experiment").get<std::string>() != "pixel-viz") {
      std::cerr << "sweep: run is a '" << summary.at("experiment").get<std::string>()
                << "' experiment; sweeps need a pixel-viz run with a sigmoid gate\n";
      return 2;
    }
    MultitaskModel model = load_checkpoint((dir / "checkpoint.json").string());
    if (model.ordering.gate != GateKind::Sigmoid) {
      std::cerr << "sweep: checkpoint does not use the sigmoid gate\n";
      return 2;
    }
    if (steps < 1) {
      std::cerr << "sweep: steps must be >= 1\n";
      return 2;
    }
    const Index img = summary.at("config").at("data").at("image_size").get<Index>();
    fs::create_directories(out_dir);

    std::vector<int> depths;
    if (depth <= 0) {
      for (int d = 1; d <= model.depth; ++d) depths.push_back(d);
    } else {
      depths.push_back(depth);
    }

    ScalingTensor trained = current_scaling(model);
    std::vector<std::vector<Tensor>> sheet_rows;
    std::vector<std::string> row_labels;
    for (int d : depths) {
      std::vector<Scalar> grid;
      if (steps == 1) {
        grid.push_back(trained.scales[(Index(task) * trained.branches + layer) * trained.depth +
                                      (d - 1)]);
      } else {
        for (int i = 0; i < steps; ++i) grid.push_back(Scalar(i) / Scalar(steps - 1));
      }
      auto frames = layer_sweep(model, task, layer, d, grid, img, img);
      for (size_t f = 0; f < frames.size(); ++f) {
        const std::string name = "sweep_t" + std::to_string(task) + "_l" + std::to_string(layer) +
                                 "_d" + std::to_string(d) + "_s" + std::to_string(f) + ".pgm";
        write_pgm(frames[f], (out_dir / name).string());
      }
      sheet_rows.push_back(std::move(frames));
      row_labels.push_back("depth " + std::to_string(d));
    }
    write_contact_sheet_svg(sheet_rows, row_labels,
                            "task " + std::to_string(task) + ", layer " + std::to_string(layer) +
                                ": inactive to active",
                            (out_dir / ("sweep_t" + std::to_string(task) + "_l" +
                                        std::to_string(layer) + ".svg"))
                                .string());
    return 0;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_tracecheck(Index tasks, Index m, uint64_t seed, bool with_scalars, bool json_output) {
  try {
    if (tasks < 2 || m < 1) {
      std::cerr << "tracecheck: need tasks >= 2 and m >= 1\n";
      return 2;
    }
    Rng rng(seed);
    std::vector<Tensor> G;
    for (Index i = 0; i < tasks; ++i) {
      Tensor g({m, m});
      for (Index p = 0; p < g.size(); ++p) g[p] = rng.uniform(Scalar(-1), Scalar(1));
      G.push_back(std::move(g));
    }
    auto F = cyclic_products(G);
    const Scalar residual = trace_residual(F);

    json out;
    out["tasks"] = tasks;
    out["m"] = m;
    out["seed"] = seed;
    std::vector<Scalar> traces;
    for (const auto& f : F) traces.push_back(trace(f));
    out["traces"] = traces;
    out["trace_residual"] = residual;

    if (with_scalars) {
      auto s = scaled_trace_chain(F);
      Scalar norm_residual = 0;
      for (size_t i = 0; i < F.size(); ++i)
        norm_residual = std::max(norm_residual,
                                 std::abs(traces[i] / s[i] - traces[0] / s[0]));
      out["scalars"] = s;
      out["normalized_trace_residual"] = norm_residual;
    }

    if (json_output) {
      std::cout << out.dump(1) << "\n";
    } else {
      std::cout << "cyclic products of " << tasks << " random " << m << "x" << m << " matrices\n";
      std::cout << "trace residual (should be ~0): " << format_scalar(residual) << "\n";
      if (with_scalars) {
        std::cout << "task scalars:";
        for (Scalar v : out["scalars"].get<std::vector<Scalar>>())
          std::cout << " " << format_scalar(v);
        std::cout << "\nnormalized trace residual: "
                  << format_scalar(out["normalized_trace_residual"].get<Scalar>()) << "\n";
      }
    }
    return 0;
  } catch (const SingularTraceError& e) {
    std::cerr << "singular trace at index " << e.index << ": " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

} // namespace softorder
