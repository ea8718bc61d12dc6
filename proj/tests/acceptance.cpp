// End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
// process exits with the number of failures. Checks that need external MNIST
// IDX files look for them in $SOFTORDER_MNIST_DIR and report SKIP when absent.
#include "softorder/analysis.hpp"
#include "softorder/experiment.hpp"
#include "softorder/io.hpp"
#include "softorder/taskgen.hpp"
#include "softorder/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace softorder;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  bool skipped = false;
  std::string detail;
};

Outcome pass(std::string detail) { return {true, false, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, false, std::move(detail)}; }
Outcome skip(std::string detail) { return {true, true, std::move(detail)}; }

std::string fmt(Scalar v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random_tensor(std::vector<Index> shape, Rng& rng, Scalar lo = -1, Scalar hi = 1) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void parallel_for(int n, const std::function<void(int)>& body) {
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      body(i);
    }
  };
  const unsigned hw = std::max(2u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------
// 1. reverse-mode gradients vs central finite differences
// ------------------------------------------------------------------

Scalar graph_max_rel_error(const std::function<NodePtr(const NodePtr&)>& build, const Tensor& x0) {
  NodePtr x = leaf(x0, true);
  backward(sum_all(build(x)));
  auto f = [&](const Tensor& t) { return sum_all(build(leaf(t)))->value[0]; };
  Tensor fd = finite_difference_grad(f, x0);
  Scalar worst = 0;
  for (Index i = 0; i < x0.size(); ++i) {
    const Scalar denom = std::max<Scalar>(std::abs(fd[i]), 1);
    worst = std::max(worst, std::abs(x->grad[i] - fd[i]) / denom);
  }
  return worst;
}

Outcome check_gradient_oracle() {
  Scalar worst = 0;
  Rng rng(101);

  // each op on its own, inputs kept away from relu/maxpool kinks
  {
    Tensor x0 = random_tensor({2, 4}, rng);
    Tensor W0 = random_tensor({3, 4}, rng), b0 = random_tensor({3}, rng);
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return affine(x, leaf(W0), leaf(b0));
    }, x0));
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) { return sigmoid(x); }, x0));
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) {
      return sigmoid(softmax(x, 1));
    }, x0));
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) {
      return batch_mean_rest(sigmoid(x));
    }, x0));
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) {
      return scale_const(reshape(x, {4, 2}), Scalar(1.5));
    }, x0));

    Tensor far({8});
    for (Index i = 0; i < 8; ++i) far[i] = (i % 2 ? 1 : -1) * (Scalar(i) + Scalar(0.5));
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) {
      return activation(Activation::Relu, x);
    }, far));

    Tensor pool0({1, 1, 4, 4});
    auto order = Rng(7).permutation(16);
    for (Index i = 0; i < 16; ++i) pool0[i] = Scalar(order[static_cast<size_t>(i)]);
    worst = std::max(worst, graph_max_rel_error([](const NodePtr& x) { return maxpool(x); }, pool0));

    Tensor cx = random_tensor({2, 2, 3, 3}, rng);
    Tensor K0 = random_tensor({2, 2, 3, 3}, rng), cb0 = random_tensor({2}, rng);
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return conv2d(x, leaf(K0), leaf(cb0));
    }, cx));

    Tensor s0 = random_tensor({5}, rng);
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return scale_entry(x, leaf(s0), 3);
    }, x0));

    Tensor bt({2, 1});
    bt[0] = 1;
    bt[1] = 0;
    Tensor ct = Tensor::from({2, 1}, {0, 2});
    Tensor mt = random_tensor({2, 4}, rng);
    Tensor probs = random_tensor({2, 3}, rng, Scalar(0.1), Scalar(0.9));
    Tensor preds = random_tensor({2, 1}, rng, Scalar(0.1), Scalar(0.9));
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return bce_loss(x, bt);
    }, preds));
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return ce_loss(x, ct);
    }, probs));
    worst = std::max(worst, graph_max_rel_error([&](const NodePtr& x) {
      return mse_loss(x, mt);
    }, x0));
  }
  if (worst >= 1e-5) return fail("single-op max relative error " + fmt(worst));

  // 100 randomly composed graphs, depth <= 4, dims <= 8
  std::vector<Scalar> worst_per(100, 0);
  parallel_for(100, [&](int trial) {
    Rng r(500 + static_cast<uint64_t>(trial));
    const Index dim = 2 + r.uniform_index(7);
    const int depth = 1 + static_cast<int>(r.uniform_index(4));
    Tensor x0 = random_tensor({2, dim}, r);
    std::vector<Tensor> Ws, bs, scales;
    std::vector<int> kinds;
    for (int d = 0; d < depth; ++d) {
      Ws.push_back(random_tensor({dim, dim}, r));
      bs.push_back(random_tensor({dim}, r));
      scales.push_back(random_tensor({3}, r, Scalar(0.2), Scalar(1)));
      kinds.push_back(static_cast<int>(r.uniform_index(4)));
    }
    auto build = [&](const NodePtr& x) {
      NodePtr y = x;
      for (int d = 0; d < depth; ++d) {
        const size_t i = static_cast<size_t>(d);
        y = affine(y, leaf(Ws[i]), leaf(bs[i]));
        switch (kinds[i]) {
          case 0: y = sigmoid(y); break;
          case 1: y = softmax(y, 1); break;
          case 2: y = add(y, scale_entry(y, leaf(scales[i]), 1)); break;
          default: y = activation(Activation::Identity, y); break;
        }
      }
      return sigmoid(y);
    };
    worst_per[static_cast<size_t>(trial)] = graph_max_rel_error(build, x0);
  });
  for (Scalar w : worst_per) worst = std::max(worst, w);
  if (worst >= 1e-5) return fail("composed-graph max relative error " + fmt(worst));
  return pass("max relative error " + fmt(worst) + " over all ops and 100 random graphs");
}

// ------------------------------------------------------------------
// 2. soft ordering subsumes permuted and parallel orderings
// ------------------------------------------------------------------

Outcome check_subsumption() {
  Scalar worst_hard = 0, worst_id = 0;
  std::vector<Scalar> hard(200, 0), ident(200, 0);
  parallel_for(200, [&](int trial) {
    Rng rng(900 + static_cast<uint64_t>(trial));
    ModelConfig cfg;
    cfg.tasks = 1 + rng.uniform_index(3);
    cfg.depth = 2 + rng.uniform_index(3);
    cfg.units = 3 + rng.uniform_index(4);
    cfg.phi = trial % 2 ? Activation::Relu : Activation::Sigmoid;
    cfg.encoder_kind = EncoderKind::LearnedDense;
    cfg.input_dims = {4};
    cfg.decoder_kind = DecoderKind::DenseSigmoid;
    cfg.output_dims = {1};
    cfg.mode = OrderingMode::Permuted;
    MultitaskModel m = build_model(cfg, rng);
    for (auto& p : m.ordering.perms) p = rng.permutation(static_cast<int>(cfg.depth));
    ScalingTensor one_hot = one_hot_scaling(m.ordering.perms);
    Tensor x = random_tensor({3, 4}, rng);
    Rng eval_rng(0);
    Scalar wh = 0, wi = 0;
    for (int task = 0; task < cfg.tasks; ++task) {
      Tensor perm = forward_permuted(m, task, leaf(x), false, eval_rng)->value;
      Tensor soft = forward_soft_scaled(m, task, leaf(x), one_hot)->value;
      wh = std::max(wh, (perm.array() - soft.array()).abs().maxCoeff());
    }
    std::vector<int> id_perm(static_cast<size_t>(cfg.depth));
    for (Index k = 0; k < cfg.depth; ++k) id_perm[static_cast<size_t>(k)] = static_cast<int>(k);
    m.ordering.perms.assign(static_cast<size_t>(cfg.tasks), id_perm);
    for (int task = 0; task < cfg.tasks; ++task) {
      Tensor perm = forward_permuted(m, task, leaf(x), false, eval_rng)->value;
      Tensor par = forward_parallel(m, task, leaf(x), false, eval_rng)->value;
      wi = std::max(wi, (perm.array() - par.array()).abs().maxCoeff());
    }
    hard[static_cast<size_t>(trial)] = wh;
    ident[static_cast<size_t>(trial)] = wi;
  });
  for (size_t i = 0; i < 200; ++i) {
    worst_hard = std::max(worst_hard, hard[i]);
    worst_id = std::max(worst_id, ident[i]);
  }
  if (worst_hard >= 1e-9) return fail("one-hot mismatch " + fmt(worst_hard));
  if (worst_id >= 1e-12) return fail("identity-permutation mismatch " + fmt(worst_id));
  return pass("200 pairs, one-hot diff " + fmt(worst_hard) + ", identity diff " + fmt(worst_id));
}

// ------------------------------------------------------------------
// 3. uniform initialization anchors
// ------------------------------------------------------------------

Outcome check_init_anchors() {
  Rng rng(7);
  ModelConfig cfg;
  cfg.tasks = 3;
  cfg.depth = 4;
  cfg.units = 6;
  cfg.encoder_kind = EncoderKind::Identity;
  cfg.input_dims = {6};
  cfg.output_dims = {1};
  cfg.mode = OrderingMode::Soft;
  MultitaskModel m = build_model(cfg, rng);
  ScalingTensor s = current_scaling(m);
  Scalar dev = 0;
  for (Index i = 0; i < s.scales.size(); ++i)
    dev = std::max(dev, std::abs(s.scales[i] - Scalar(0.25)));
  if (dev > 1e-15) return fail("scales deviate from 1/D by " + fmt(dev));
  if (std::abs(ordering_hardness(s) - Scalar(0.25)) > 1e-15)
    return fail("hardness is not 1/D at init");
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (Scalar d : scaling_distance(s, a, b))
        if (d != 0) return fail("nonzero scaling distance at init");
  return pass("scales = 1/D, hardness = 1/D, all pairwise distances 0");
}

// ------------------------------------------------------------------
// 4. cyclic matrix product trace identities
// ------------------------------------------------------------------

Outcome check_trace_identities() {
  Rng rng(11);
  Scalar worst_residual = 0, worst_norm = 0;
  for (Index T = 2; T <= 5; ++T)
    for (Index m = 2; m <= 8; ++m) {
      std::vector<Tensor> G;
      for (Index i = 0; i < T; ++i) G.push_back(random_tensor({m, m}, rng));
      auto F = cyclic_products(G);
      worst_residual = std::max(worst_residual, trace_residual(F));

      std::vector<Tensor> scaled = F;
      for (size_t i = 0; i < scaled.size(); ++i)
        scaled[i].array() *= Scalar(0.5) + Scalar(i);
      auto s = scaled_trace_chain(scaled);
      const Scalar ref = trace(scaled[0]) / s[0];
      for (size_t i = 0; i < scaled.size(); ++i)
        worst_norm = std::max(worst_norm,
                              std::abs(trace(scaled[i]) / s[i] - ref) / std::abs(ref));
    }
  if (worst_residual >= 1e-10) return fail("trace residual " + fmt(worst_residual));
  if (worst_norm >= 1e-9) return fail("normalized trace mismatch " + fmt(worst_norm));

  std::vector<Tensor> singular{Tensor::from({2, 2}, {1, 0, 0, 1}),
                               Tensor::from({2, 2}, {0, 1, 1, 0})};
  try {
    scaled_trace_chain(singular);
    return fail("zero-trace fixture did not raise");
  } catch (const SingularTraceError&) {
  }
  return pass("residual " + fmt(worst_residual) + ", normalized mismatch " + fmt(worst_norm) +
              ", singular fixture raises");
}

// ------------------------------------------------------------------
// 5. permuted ordering halves the effective sample capacity
// ------------------------------------------------------------------

// Generates n samples per task and trains on the first n_use of them, so the
// permuted(n) and parallel(n/2) cells see nested draws of the same instances.
Scalar mean_fit_accuracy(OrderingMode mode, Index m, Index n, Index n_use, Activation phi,
                         int seeds, long iterations, Scalar lr) {
  std::vector<Scalar> acc(static_cast<size_t>(seeds), 0);
  parallel_for(seeds, [&](int s) {
    const uint64_t seed = 3000 + static_cast<uint64_t>(s);
    RandomTaskSpec spec;
    spec.m = m;
    spec.n = n;
    spec.tasks = 2;
    spec.relu = phi == Activation::Relu;
    spec.seed = Rng(seed).derive(1).seed();
    auto tasks = gen_random_tasks(spec);
    if (n_use < n)
      for (auto& t : tasks) t.train.resize(static_cast<size_t>(n_use));

    ModelConfig cfg;
    cfg.tasks = 2;
    cfg.depth = 2;
    cfg.units = m;
    cfg.phi = phi;
    cfg.encoder_kind = EncoderKind::Identity;
    cfg.output_dims = {1};
    cfg.share_decoder = true;
    cfg.mode = mode;
    Rng model_rng = Rng(seed).derive(2);
    MultitaskModel model = build_model(cfg, model_rng);

    TrainConfig tc;
    tc.iterations = iterations;
    tc.full_batch = true;
    tc.adam.lr = lr;
    tc.eval_every = iterations / 8;
    tc.seed = Rng(seed).derive(3).seed();
    tc.eval_split = Split::Train;
    RunRecord rec = train(model, tasks, tc);
    // best fit over the run: the saturated logistic objective makes the final
    // iterate wander under Adam's constant-magnitude steps
    Scalar best = 0;
    for (const auto& e : rec.evals) {
      const auto& a = e.report.accuracy;
      best = std::max(best, (a[0] + a[1]) / 2);
    }
    acc[static_cast<size_t>(s)] = best;
  });
  Scalar mean = 0;
  for (Scalar a : acc) mean += a;
  return mean / Scalar(seeds);
}

Outcome check_capacity_halving() {
  const int seeds = 10;
  const long iters = 10000;
  const Scalar lr = Scalar(0.005);

  std::string detail;
  for (Index n : {32, 64, 128, 256}) {
    const Scalar perm = mean_fit_accuracy(OrderingMode::Permuted, 32, n, n, Activation::Identity,
                                          seeds, iters, lr);
    const Scalar par_half = mean_fit_accuracy(OrderingMode::Parallel, 32, n, n / 2,
                                              Activation::Identity, seeds, iters, lr);
    detail += "n=" + std::to_string(n) + ": perm " + fmt(perm) + " vs par(n/2) " + fmt(par_half) +
              "; ";
    if (std::abs(perm - par_half) > Scalar(0.03))
      return fail(detail + "gap exceeds 3 points");
  }
  for (Index n : {64, 128}) {
    const Scalar perm =
        mean_fit_accuracy(OrderingMode::Permuted, 16, n, n, Activation::Relu, seeds, iters, lr);
    const Scalar par =
        mean_fit_accuracy(OrderingMode::Parallel, 16, n, n, Activation::Relu, seeds, iters, lr);
    detail += "relu n=" + std::to_string(n) + ": perm " + fmt(perm) + " vs par " + fmt(par) + "; ";
    if (perm < par - Scalar(0.03)) return fail(detail + "permuted trails parallel");
  }
  return pass(detail);
}

// ------------------------------------------------------------------
// 6. joint two-task training equals pooled single-task training
// ------------------------------------------------------------------

Outcome check_pooled_equivalence() {
  const Index m = 16, n = 32;
  RandomTaskSpec spec;
  spec.m = m;
  spec.n = n;
  spec.tasks = 2;
  spec.seed = 55;
  auto tasks = gen_random_tasks(spec);
  TaskDataset pooled = tasks[0];
  pooled.train.insert(pooled.train.end(), tasks[1].train.begin(), tasks[1].train.end());

  ModelConfig cfg;
  cfg.tasks = 2;
  cfg.depth = 2;
  cfg.units = m;
  cfg.phi = Activation::Identity;
  cfg.encoder_kind = EncoderKind::Identity;
  cfg.output_dims = {1};
  cfg.share_decoder = true;
  cfg.mode = OrderingMode::Parallel;
  Rng r1(77), r2(77);
  MultitaskModel two = build_model(cfg, r1);
  auto cfg1 = cfg;
  cfg1.tasks = 1;
  MultitaskModel one = build_model(cfg1, r2);

  TrainConfig tc;
  tc.iterations = 100;
  tc.full_batch = true;
  tc.eval_every = 0;
  TrainConfig tp = tc;
  tp.loss_scale = 2;
  RunRecord rec2 = train(two, tasks, tc);
  RunRecord rec1 = train(one, {pooled}, tp);

  Scalar worst = 0;
  for (size_t i = 0; i < 100; ++i) {
    const Scalar joint = rec2.train_loss[i][0] + rec2.train_loss[i][1];
    const Scalar single = 2 * rec1.train_loss[i][0];
    worst = std::max(worst, std::abs(joint - single));
  }
  if (worst >= 1e-9) return fail("per-iteration loss gap " + fmt(worst));
  return pass("max per-iteration loss gap " + fmt(worst) + " over 100 iterations");
}

// ------------------------------------------------------------------
// 7. soft ordering drifts away from the uniform initialization
// ------------------------------------------------------------------

struct MnistPaths {
  std::string train_images, train_labels, test_images, test_labels;
  bool found = false;
};

MnistPaths mnist_paths() {
  MnistPaths p;
  const char* dir = std::getenv("SOFTORDER_MNIST_DIR");
  if (!dir) return p;
  p.train_images = std::string(dir) + "/train-images-idx3-ubyte";
  p.train_labels = std::string(dir) + "/train-labels-idx1-ubyte";
  p.test_images = std::string(dir) + "/t10k-images-idx3-ubyte";
  p.test_labels = std::string(dir) + "/t10k-labels-idx1-ubyte";
  p.found = fs::exists(p.train_images) && fs::exists(p.train_labels) &&
            fs::exists(p.test_images) && fs::exists(p.test_labels);
  return p;
}

std::vector<TaskDataset> drift_tasks(uint64_t seed) {
  MnistPaths mp = mnist_paths();
  if (mp.found) {
    IdxData train = load_idx(mp.train_images, mp.train_labels);
    IdxData test = load_idx(mp.test_images, mp.test_labels);
    return make_mnist_pair_tasks(train, test, 2, seed).tasks;
  }
  GlyphSpec spec;
  spec.tasks = 2;
  spec.classes = 4;
  spec.image_size = 12;
  spec.channels = 1;
  spec.train_per_class = 24;
  spec.validation_per_class = 6;
  spec.test_per_class = 6;
  spec.seed = seed;
  auto tasks = gen_synthetic_glyph_tasks(spec);
  for (auto& t : tasks) t = flatten_dataset(t);
  return tasks;
}

Outcome check_soft_drift() {
  const int seeds = 5;
  const long iters = 2000;
  std::vector<Scalar> dist(seeds, 0), hardness(seeds, 0);
  const bool mnist = mnist_paths().found;
  parallel_for(seeds, [&](int s) {
    const uint64_t seed = 4000 + static_cast<uint64_t>(s);
    auto tasks = drift_tasks(Rng(seed).derive(1).seed());

    ModelConfig cfg;
    cfg.tasks = 2;
    cfg.depth = 4;
    cfg.units = 32;
    cfg.phi = Activation::Relu;
    cfg.dropout_rate = Scalar(0.5);
    cfg.encoder_kind = mnist ? EncoderKind::FrozenRandomDense : EncoderKind::LearnedDense;
    for (const auto& t : tasks) cfg.input_dims.push_back(t.input_shape[0]);
    cfg.decoder_kind = mnist ? DecoderKind::DenseSigmoid : DecoderKind::DenseSoftmax;
    for (const auto& t : tasks) {
      Index out = 1;
      for (Index d : t.output_shape) out *= d;
      cfg.output_dims.push_back(out);
    }
    cfg.mode = OrderingMode::Soft;
    Rng model_rng = Rng(seed).derive(2);
    MultitaskModel model = build_model(cfg, model_rng);

    TrainConfig tc;
    tc.iterations = iters;
    tc.batch_size = 32;
    tc.adam.lr = Scalar(1e-2);
    tc.eval_every = iters;
    tc.seed = Rng(seed).derive(3).seed();
    tc.eval_split = Split::Train;
    RunRecord rec = train(model, tasks, tc);

    ScalingTensor fin = current_scaling(model);
    auto d = scaling_distance(fin, 0, 1);
    Scalar mean_d = 0;
    for (Scalar v : d) mean_d += v;
    dist[static_cast<size_t>(s)] = mean_d / Scalar(d.size());
    hardness[static_cast<size_t>(s)] = ordering_hardness(fin);
  });
  Scalar mean_dist = 0, mean_hard = 0;
  for (int s = 0; s < seeds; ++s) {
    mean_dist += dist[static_cast<size_t>(s)];
    mean_hard += hardness[static_cast<size_t>(s)];
  }
  mean_dist /= seeds;
  mean_hard /= seeds;
  std::string detail = std::string(mnist ? "mnist pairs" : "synthetic glyphs") +
                       ": mean per-depth divergence " + fmt(mean_dist) + " (need > 0.05), " +
                       "mean hardness " + fmt(mean_hard) + " (need > 0.3)";
  if (mean_dist <= Scalar(0.05) || mean_hard <= Scalar(0.25) + Scalar(0.05)) return fail(detail);
  return pass(detail);
}

// ------------------------------------------------------------------
// 8. scaled digit-pair comparison across orderings (needs MNIST)
// ------------------------------------------------------------------

Scalar mnist_mode_accuracy(OrderingMode mode, int k, const IdxData& train_data, const IdxData& test_data,
                           int seeds, long iters) {
  std::vector<Scalar> acc(static_cast<size_t>(seeds), 0);
  parallel_for(seeds, [&](int s) {
    const uint64_t seed = 6000 + static_cast<uint64_t>(s);
    auto pairs = make_mnist_pair_tasks(train_data, test_data, k, Rng(seed).derive(1).seed());

    ModelConfig cfg;
    cfg.tasks = k;
    cfg.depth = 4;
    cfg.units = 64;
    cfg.phi = Activation::Relu;
    cfg.encoder_kind = EncoderKind::FrozenRandomDense;
    cfg.input_dims = {28 * 28};
    cfg.decoder_kind = DecoderKind::DenseSigmoid;
    cfg.output_dims = {1};
    cfg.mode = mode;
    cfg.dropout_rate = Scalar(0.5);
    Rng model_rng = Rng(seed).derive(2);
    MultitaskModel model = build_model(cfg, model_rng);

    TrainConfig tc;
    tc.iterations = iters;
    tc.batch_size = 64;
    tc.eval_every = iters;
    tc.seed = Rng(seed).derive(3).seed();
    tc.eval_split = Split::Test;
    RunRecord rec = train(model, pairs.tasks, tc);
    const auto& a = rec.evals.back().report.accuracy;
    Scalar mean = 0;
    for (Scalar v : a) mean += v;
    acc[static_cast<size_t>(s)] = mean / Scalar(a.size());
  });
  Scalar mean = 0;
  for (Scalar a : acc) mean += a;
  return mean / Scalar(seeds);
}

Outcome check_mnist_comparison() {
  MnistPaths mp = mnist_paths();
  if (!mp.found)
    return skip("no IDX files (set SOFTORDER_MNIST_DIR to run the digit-pair comparison)");
  IdxData train = load_idx(mp.train_images, mp.train_labels);
  IdxData test = load_idx(mp.test_images, mp.test_labels);
  const int seeds = 5;
  const long iters = 2000;

  const Scalar soft4 = mnist_mode_accuracy(OrderingMode::Soft, 4, train, test, seeds, iters);
  const Scalar par4 = mnist_mode_accuracy(OrderingMode::Parallel, 4, train, test, seeds, iters);
  const Scalar soft2 = mnist_mode_accuracy(OrderingMode::Soft, 2, train, test, seeds, iters);
  const Scalar par2 = mnist_mode_accuracy(OrderingMode::Parallel, 2, train, test, seeds, iters);
  std::string detail = "k=4 soft " + fmt(soft4) + " vs parallel " + fmt(par4) + "; k=2 soft " +
                       fmt(soft2) + " vs parallel " + fmt(par2);
  if (soft4 < par4 - Scalar(0.005)) return fail(detail + "; soft trails parallel at k=4");
  if ((soft4 - par4) < (soft2 - par2) - Scalar(0.01))
    return fail(detail + "; soft standing degrades from k=2 to k=4");
  return pass(detail);
}

// ------------------------------------------------------------------
// 9. convolutional soft ordering trains and keeps its invariants
// ------------------------------------------------------------------

Outcome check_conv_path() {
  GlyphSpec spec;
  spec.tasks = 2;
  spec.classes = 4;
  spec.image_size = 16;
  spec.channels = 8;
  spec.train_per_class = 16;
  spec.validation_per_class = 4;
  spec.test_per_class = 4;
  spec.seed = 71;
  auto tasks = gen_synthetic_glyph_tasks(spec);

  ModelConfig cfg;
  cfg.tasks = 2;
  cfg.depth = 4;
  cfg.layer_kind = LayerKind::Conv;
  cfg.units = 8;
  cfg.phi = Activation::Relu;
  cfg.encoder_kind = EncoderKind::Identity;
  cfg.decoder_kind = DecoderKind::DenseSoftmax;
  cfg.output_dims = {4};
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.mode = OrderingMode::Soft;
  Rng rng(72);
  MultitaskModel model = build_model(cfg, rng);

  TrainConfig tc;
  tc.iterations = 2000;
  tc.batch_size = 16;
  tc.adam.lr = Scalar(3e-3);
  tc.eval_every = 250;
  tc.seed = 73;
  tc.eval_split = Split::Train;
  RunRecord rec = train(model, tasks, tc);

  // normalization at every recorded snapshot
  for (const auto& [iter, scales] : rec.scaling_snapshots) {
    for (Index i = 0; i < 2; ++i)
      for (Index k = 0; k < 4; ++k) {
        Scalar col = 0;
        for (Index j = 0; j < 4; ++j) col += scales[(i * 4 + j) * 4 + k];
        if (std::abs(col - 1) > 1e-9)
          return fail("scales at iteration " + std::to_string(iter) + " sum to " + fmt(col));
      }
  }

  // subsumption on the trained weights
  MultitaskModel probe = model;
  probe.ordering.perms = {{0, 1, 2, 3}, {3, 2, 1, 0}};
  ScalingTensor hard = one_hot_scaling(probe.ordering.perms);
  Tensor x = stack_inputs(tasks[0].train, {0, 1, 2, 3});
  Rng eval_rng(0);
  for (int task = 0; task < 2; ++task) {
    Tensor perm = forward_permuted(probe, task, leaf(x), false, eval_rng)->value;
    Tensor soft = forward_soft_scaled(probe, task, leaf(x), hard)->value;
    if ((perm.array() - soft.array()).abs().maxCoeff() >= 1e-9)
      return fail("trained-model subsumption violated");
  }

  const auto& acc = rec.evals.back().report.accuracy;
  const Scalar mean_acc = (acc[0] + acc[1]) / 2;
  if (mean_acc <= Scalar(0.9))
    return fail("training accuracy " + fmt(mean_acc) + " (need > 0.9)");
  return pass("training accuracy " + fmt(mean_acc) +
              ", normalization and subsumption hold at all checkpoints");
}

// ------------------------------------------------------------------
// 10. gate sweep around a trained pixel model
// ------------------------------------------------------------------

Outcome check_pixel_sweep() {
  const fs::path dir = fs::temp_directory_path() / "softorder_acceptance_pixel";
  fs::remove_all(dir);

  ExperimentConfig cfg;
  cfg.kind = ExperimentKind::PixelViz;
  cfg.output_dir = dir.string();
  cfg.seed = 12;
  cfg.trials = 1;
  cfg.data.tasks = 2;
  cfg.data.image_size = 16;
  cfg.arch = {};
  cfg.arch.depth = 4;
  cfg.arch.units = 100;
  cfg.arch.phi = Activation::Relu;
  cfg.arch.modes = {OrderingMode::Soft};
  cfg.arch.gate = GateKind::Sigmoid;
  cfg.arch.encoder = EncoderKind::LearnedLinear;
  cfg.arch.decoder = DecoderKind::GlobalAveragePool;
  cfg.arch.share_encoder = true;
  cfg.training.iterations = 800;
  cfg.training.batch_size = 64;
  cfg.training.eval_every = 200;
  cfg.training.synchronized_batches = true;
  run_experiment(cfg);

  // 8-frame strips for depths 1..3: endpoints must differ
  for (int depth = 1; depth <= 3; ++depth) {
    if (cmd_sweep(dir.string(), 0, 1, depth, 8, std::nullopt) != 0)
      return fail("sweep failed at depth " + std::to_string(depth));
    const std::string first =
        slurp((dir / ("sweep_t0_l1_d" + std::to_string(depth) + "_s0.pgm")).string());
    const std::string last =
        slurp((dir / ("sweep_t0_l1_d" + std::to_string(depth) + "_s7.pgm")).string());
    if (first.empty() || first == last)
      return fail("endpoint frames identical at depth " + std::to_string(depth));
  }

  // the trained-gate frame reproduces the model output exactly
  const fs::path probe = dir / "trained_frame";
  if (cmd_sweep(dir.string(), 0, 1, 1, 1, probe.string()) != 0)
    return fail("trained-value sweep failed");
  const std::string frame = slurp((probe / "sweep_t0_l1_d1_s0.pgm").string());
  const std::string pred = slurp((dir / "prediction_t0.pgm").string());
  if (frame.empty() || frame != pred) return fail("trained-gate frame differs from the prediction");
  fs::remove_all(dir);
  return pass("depths 1-3 endpoints differ; trained-gate frame equals the prediction byte for byte");
}

// ------------------------------------------------------------------
// 11. bytewise determinism of a rerun
// ------------------------------------------------------------------

Outcome check_determinism() {
  const fs::path a = fs::temp_directory_path() / "softorder_acceptance_det_a";
  const fs::path b = fs::temp_directory_path() / "softorder_acceptance_det_b";
  fs::remove_all(a);
  fs::remove_all(b);

  auto make_cfg = [&](const fs::path& out) {
    ExperimentConfig cfg;
    cfg.kind = ExperimentKind::Glyphs;
    cfg.output_dir = out.string();
    cfg.seed = 21;
    cfg.trials = 2;
    cfg.arch = {};
    cfg.arch.depth = 2;
    cfg.arch.layer_kind = LayerKind::Conv;
    cfg.arch.units = 4;
    cfg.arch.phi = Activation::Relu;
    cfg.arch.modes = {OrderingMode::Parallel, OrderingMode::Soft};
    cfg.arch.dropout = Scalar(0.5);
    cfg.arch.decoder = DecoderKind::DenseSoftmax;
    cfg.data.tasks = 2;
    cfg.data.classes = 3;
    cfg.data.image_size = 8;
    cfg.data.train_per_class = 4;
    cfg.data.validation_per_class = 2;
    cfg.data.test_per_class = 2;
    cfg.training.iterations = 40;
    cfg.training.batch_size = 8;
    cfg.training.eval_every = 20;
    return cfg;
  };
  auto cfg_a = make_cfg(a);
  cfg_a.workers = 2; // worker parallelism must not affect the bytes
  run_experiment(cfg_a);
  run_experiment(make_cfg(b));

  size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) != 0 && name.rfind("scalings_", 0) != 0) continue;
    ++files;
    if (slurp(entry.path().string()) != slurp((b / name).string()))
      return fail("file " + name + " differs between identical runs");
  }
  fs::remove_all(a);
  fs::remove_all(b);
  if (files == 0) return fail("no metric files produced");
  return pass(std::to_string(files) + " metric/scaling files byte-identical across reruns");
}

} // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient oracle", check_gradient_oracle},
      {"ordering subsumption", check_subsumption},
      {"initialization anchors", check_init_anchors},
      {"cyclic trace identities", check_trace_identities},
      {"capacity halving under permutation", check_capacity_halving},
      {"pooled-task equivalence", check_pooled_equivalence},
      {"soft ordering divergence", check_soft_drift},
      {"digit-pair ordering comparison", check_mnist_comparison},
      {"convolutional soft ordering", check_conv_path},
      {"pixel gate sweep", check_pixel_sweep},
      {"bytewise determinism", check_determinism},
  };

  // optional criterion numbers on the command line restrict the run
  std::vector<size_t> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(static_cast<size_t>(std::atol(argv[a])));

  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), i + 1) == selected.end())
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.skipped ? "SKIP" : (o.pass ? "PASS" : "FAIL");
    std::cout << "criterion " << (i + 1) << " [" << criteria[i].name << "]: " << verdict << " - "
              << o.detail << " (" << static_cast<long>(secs) << "s)" << std::endl;
    if (!o.pass) ++failures;
  }
  if (failures) std::cout << failures << " criterion(s) failed" << std::endl;
  return failures;
}
