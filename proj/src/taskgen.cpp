#include "softorder/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace softorder {

std::vector<TaskDataset> gen_random_tasks(const RandomTaskSpec& spec) {
  if (spec.m < 1 || spec.n < 1 || spec.tasks < 2)
    throw ContractError("gen_random_tasks: need m >= 1, n >= 1, tasks >= 2");
  Rng rng(spec.seed);
  std::vector<TaskDataset> out;
  for (Index t = 0; t < spec.tasks; ++t) {
    TaskDataset d;
    d.name = "random-" + std::to_string(t);
    d.loss = LossKind::Bce;
    d.input_shape = {spec.m};
    d.output_shape = {1};
    for (Index i = 0; i < spec.n; ++i) {
      Sample s;
      s.input = Tensor({spec.m});
      for (Index j = 0; j < spec.m; ++j) s.input[j] = rng.uniform();
      s.target = Tensor::scalar(rng.next() & 1 ? Scalar(1) : Scalar(0));
      d.train.push_back(std::move(s));
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

uint32_t read_be32(std::istream& in, const char* field, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated " + std::string(field) + " in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

} // namespace

IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open IDX image file: " + images_path);
  const uint32_t img_magic = read_be32(img, "magic", images_path);
  if (img_magic != 2051)
    throw FormatError("bad image magic " + std::to_string(img_magic) + " (expected 2051) in " +
                      images_path);
  const uint32_t n = read_be32(img, "count", images_path);
  const uint32_t h = read_be32(img, "rows", images_path);
  const uint32_t w = read_be32(img, "cols", images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open IDX label file: " + labels_path);
  const uint32_t lab_magic = read_be32(lab, "magic", labels_path);
  if (lab_magic != 2049)
    throw FormatError("bad label magic " + std::to_string(lab_magic) + " (expected 2049) in " +
                      labels_path);
  const uint32_t nl = read_be32(lab, "count", labels_path);
  if (n != nl)
    throw FormatError("count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                      " labels");

  IdxData out;
  out.images = Tensor({Index(n), Index(h), Index(w)});
  std::vector<unsigned char> buf(size_t(h) * w);
  for (uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw FormatError("truncated pixel data in " + images_path);
    for (size_t p = 0; p < buf.size(); ++p)
      out.images[Index(i) * Index(h) * Index(w) + Index(p)] = Scalar(buf[p]) / Scalar(255);
  }
  out.labels.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    char c;
    if (!lab.get(c)) throw FormatError("truncated label data in " + labels_path);
    out.labels[i] = static_cast<unsigned char>(c);
  }
  return out;
}

namespace {

void append_digit_pair_samples(const IdxData& data, int d0, int d1, std::vector<Sample>& out) {
  const Index n = data.images.dim(0);
  const Index hw = data.images.dim(1) * data.images.dim(2);
  for (Index i = 0; i < n; ++i) {
    if (data.labels[static_cast<size_t>(i)] != d0 && data.labels[static_cast<size_t>(i)] != d1)
      continue;
    Sample s;
    s.input = Tensor({hw});
    s.input.array() = data.images.array().segment(i * hw, hw);
    s.target = Tensor::scalar(data.labels[static_cast<size_t>(i)] == d1 ? Scalar(1) : Scalar(0));
    out.push_back(std::move(s));
  }
}

} // namespace

MnistPairTasks make_mnist_pair_tasks(const IdxData& train, const IdxData& test, int k,
                                     uint64_t seed) {
  if (k < 1) throw ContractError("make_mnist_pair_tasks: k must be >= 1");
  Rng rng(seed);
  MnistPairTasks out;
  const Index hw = train.images.dim(1) * train.images.dim(2);
  for (int t = 0; t < k; ++t) {
    // Without replacement within a task, with replacement across tasks.
    const int d0 = static_cast<int>(rng.uniform_index(10));
    int d1 = static_cast<int>(rng.uniform_index(9));
    if (d1 >= d0) ++d1;
    out.digit_pairs.emplace_back(d0, d1);
    out.encoder_seeds.push_back(rng.next());

    TaskDataset d;
    d.name = "mnist-" + std::to_string(d0) + "v" + std::to_string(d1);
    d.loss = LossKind::Bce;
    d.input_shape = {hw};
    d.output_shape = {1};
    append_digit_pair_samples(train, d0, d1, d.train);
    append_digit_pair_samples(test, d0, d1, d.test);
    if (d.train.empty())
      throw ContractError("make_mnist_pair_tasks: no samples for digits " + std::to_string(d0) +
                          "/" + std::to_string(d1));
    d.validation = d.test;
    out.tasks.push_back(std::move(d));
  }
  return out;
}

TaskDataset load_csv_task(const std::string& path, uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV file: " + path);

  std::vector<std::vector<Scalar>> features;
  std::vector<std::string> labels;
  size_t n_fields = 0;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < 2)
      throw FormatError(path + ":" + std::to_string(line_no) + ": need at least one feature and a label");
    if (n_fields == 0) n_fields = fields.size();
    if (fields.size() != n_fields)
      throw FormatError(path + ":" + std::to_string(line_no) + ": inconsistent column count");
    std::vector<Scalar> row;
    for (size_t i = 0; i + 1 < fields.size(); ++i) {
      try {
        size_t pos = 0;
        row.push_back(static_cast<Scalar>(std::stod(fields[i], &pos)));
        if (pos != fields[i].size()) throw std::invalid_argument(fields[i]);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": non-numeric feature '" +
                          fields[i] + "'");
      }
    }
    features.push_back(std::move(row));
    labels.push_back(fields.back());
  }
  if (features.empty()) throw FormatError("CSV file has no data rows: " + path);

  // Class labels mapped to indices in order of first appearance.
  std::map<std::string, int> class_index;
  std::vector<int> y;
  for (const auto& l : labels) {
    auto [it, inserted] = class_index.emplace(l, static_cast<int>(class_index.size()));
    y.push_back(it->second);
  }

  const size_t n = features.size();
  const Index m = static_cast<Index>(features[0].size());
  Rng rng(seed);
  std::vector<int> order = rng.permutation(static_cast<int>(n));
  const size_t n_train = (n * 8) / 10;

  // Min-max statistics from the training split only; zero-range features map to 0.
  std::vector<Scalar> lo(static_cast<size_t>(m)), hi(static_cast<size_t>(m));
  for (Index j = 0; j < m; ++j) {
    lo[static_cast<size_t>(j)] = features[static_cast<size_t>(order[0])][static_cast<size_t>(j)];
    hi[static_cast<size_t>(j)] = lo[static_cast<size_t>(j)];
  }
  for (size_t r = 0; r < n_train; ++r)
    for (Index j = 0; j < m; ++j) {
      const Scalar v = features[static_cast<size_t>(order[r])][static_cast<size_t>(j)];
      lo[static_cast<size_t>(j)] = std::min(lo[static_cast<size_t>(j)], v);
      hi[static_cast<size_t>(j)] = std::max(hi[static_cast<size_t>(j)], v);
    }

  TaskDataset d;
  d.name = path;
  d.loss = LossKind::Ce;
  d.input_shape = {m};
  d.output_shape = {static_cast<Index>(class_index.size())};
  for (size_t r = 0; r < n; ++r) {
    const size_t src = static_cast<size_t>(order[r]);
    Sample s;
    s.input = Tensor({m});
    for (Index j = 0; j < m; ++j) {
      const Scalar range = hi[static_cast<size_t>(j)] - lo[static_cast<size_t>(j)];
      const Scalar v = features[src][static_cast<size_t>(j)];
      s.input[j] = range > 0 ? std::clamp((v - lo[static_cast<size_t>(j)]) / range, Scalar(0), Scalar(1))
                             : Scalar(0);
    }
    s.target = Tensor::scalar(Scalar(y[src]));
    (r < n_train ? d.train : d.validation).push_back(std::move(s));
  }
  return d;
}

std::vector<TaskDataset> make_pixel_tasks(const std::vector<Tensor>& images) {
  std::vector<TaskDataset> out;
  for (size_t t = 0; t < images.size(); ++t) {
    const Tensor& img = images[t];
    if (img.rank() != 2) throw ShapeError("make_pixel_tasks: images must be [h x w], got " + img.shape_str());
    const Index h = img.dim(0), w = img.dim(1);
    TaskDataset d;
    d.name = "pixels-" + std::to_string(t);
    d.loss = LossKind::Mse;
    d.input_shape = {2};
    d.output_shape = {1};
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        Sample s;
        s.input = Tensor::from({2}, {w > 1 ? Scalar(j) / Scalar(w - 1) : Scalar(0),
                                     h > 1 ? Scalar(i) / Scalar(h - 1) : Scalar(0)});
        s.target = Tensor::scalar(img[i * w + j]);
        d.train.push_back(std::move(s));
      }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

// Shared stroke library on a normalized grid; each stroke paints a one-pixel
// wide bar or diagonal.
void paint_stroke(Tensor& img, Index n, int stroke, int dx, int dy, Scalar intensity) {
  auto put = [&](Index i, Index j) {
    i += dy;
    j += dx;
    if (i >= 0 && i < n && j >= 0 && j < n) img[i * n + j] = std::max(img[i * n + j], intensity);
  };
  const Index a = n / 4, b = n / 2, c = (3 * n) / 4;
  switch (stroke) {
    case 0: for (Index j = a; j <= c; ++j) put(a, j); break;         // top bar
    case 1: for (Index j = a; j <= c; ++j) put(c, j); break;         // bottom bar
    case 2: for (Index i = a; i <= c; ++i) put(i, a); break;         // left bar
    case 3: for (Index i = a; i <= c; ++i) put(i, c); break;         // right bar
    case 4: for (Index j = a; j <= c; ++j) put(b, j); break;         // middle horizontal
    case 5: for (Index i = a; i <= c; ++i) put(i, b); break;         // middle vertical
    case 6: for (Index i = a; i <= c; ++i) put(i, i); break;         // main diagonal
    case 7: for (Index i = a; i <= c; ++i) put(i, n - 1 - i); break; // anti-diagonal
    default: throw ContractError("unknown stroke id");
  }
}

constexpr int kStrokeCount = 8;

} // namespace

std::vector<TaskDataset> gen_synthetic_glyph_tasks(const GlyphSpec& spec) {
  if (spec.image_size < 8) throw ContractError("gen_synthetic_glyph_tasks: image_size must be >= 8");
  if (spec.classes < 2 || spec.classes > 50) throw ContractError("gen_synthetic_glyph_tasks: bad class count");
  Rng rng(spec.seed);
  const Index n = spec.image_size;
  std::vector<TaskDataset> out;
  for (int t = 0; t < spec.tasks; ++t) {
    // Distinct 3-stroke template per class within a task.
    std::set<std::vector<int>> used;
    std::vector<std::vector<int>> templates;
    for (int cls = 0; cls < spec.classes; ++cls) {
      std::vector<int> tmpl;
      do {
        auto p = rng.permutation(kStrokeCount);
        tmpl.assign(p.begin(), p.begin() + 3);
        std::sort(tmpl.begin(), tmpl.end());
      } while (!used.insert(tmpl).second);
      templates.push_back(tmpl);
    }

    TaskDataset d;
    d.name = "glyph-" + std::to_string(t);
    d.loss = LossKind::Ce;
    d.input_shape = {spec.channels, n, n};
    d.output_shape = {spec.classes};
    auto emit = [&](std::vector<Sample>& split, int count_per_class) {
      for (int cls = 0; cls < spec.classes; ++cls)
        for (int s = 0; s < count_per_class; ++s) {
          Tensor img({n, n});
          for (int stroke : templates[static_cast<size_t>(cls)]) {
            const int dx = static_cast<int>(rng.uniform_index(3)) - 1;
            const int dy = static_cast<int>(rng.uniform_index(3)) - 1;
            paint_stroke(img, n, stroke, dx, dy, rng.uniform(Scalar(0.7), Scalar(1)));
          }
          Sample sample;
          sample.input = Tensor({spec.channels, n, n}); // image in channel 0, rest zero
          sample.input.array().head(n * n) = img.array();
          sample.target = Tensor::scalar(Scalar(cls));
          split.push_back(std::move(sample));
        }
    };
    emit(d.train, spec.train_per_class);
    emit(d.validation, spec.validation_per_class);
    emit(d.test, spec.test_per_class);
    out.push_back(std::move(d));
  }
  return out;
}

TaskDataset flatten_dataset(const TaskDataset& d) {
  TaskDataset out = d;
  Index flat = 1;
  for (Index s : d.input_shape) flat *= s;
  out.input_shape = {flat};
  for (auto* split : {&out.train, &out.validation, &out.test})
    for (auto& s : *split) s.input = s.input.reshaped({flat});
  return out;
}

} // namespace softorder
