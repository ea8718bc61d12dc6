#include "softorder/io.hpp"
#include "softorder/taskgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace softorder {

void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& fill) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    fill(out);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename temp file into place: " + path);
}

std::string format_scalar(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

void write_metrics_csv(const RunRecord& rec, const std::string& split_name,
                       const std::string& path) {
  atomic_write(path, [&](std::ostream& out) {
    out << "iteration,task_id,split,loss,accuracy\n";
    for (size_t it = 0; it < rec.train_loss.size(); ++it)
      for (size_t t = 0; t < rec.train_loss[it].size(); ++t)
        out << (it + 1) << "," << t << ",train," << format_scalar(rec.train_loss[it][t]) << ",nan\n";
    for (const auto& e : rec.evals)
      for (size_t t = 0; t < e.report.loss.size(); ++t)
        out << e.iteration << "," << t << "," << split_name << ","
            << format_scalar(e.report.loss[t]) << "," << format_scalar(e.report.accuracy[t])
            << "\n";
  });
}

void write_scalings_csv(const RunRecord& rec, Index tasks, Index branches, Index depth,
                        const std::string& path) {
  atomic_write(path, [&](std::ostream& out) {
    out << "iteration,task,branch,depth,value\n";
    for (const auto& [iter, s] : rec.scaling_snapshots)
      for (Index i = 0; i < tasks; ++i)
        for (Index j = 0; j < branches; ++j)
          for (Index k = 0; k < depth; ++k)
            out << iter << "," << i << "," << j << "," << k << ","
                << format_scalar(s[(i * branches + j) * depth + k]) << "\n";
  });
}

ScalingSeries read_scalings_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scalings file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("iteration,task,branch,depth,value", 0) != 0)
    throw FormatError("not a scalings CSV: " + path);
  ScalingSeries out;
  struct Row {
    long iter;
    Index i, j, k;
    Scalar v;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    long it, i, j, k;
    double v;
    if (std::sscanf(line.c_str(), "%ld,%ld,%ld,%ld,%lf", &it, &i, &j, &k, &v) != 5)
      throw FormatError("bad scalings row in " + path + ": " + line);
    Row r{it, Index(i), Index(j), Index(k), Scalar(v)};
    rows.push_back(r);
    out.tasks = std::max(out.tasks, r.i + 1);
    out.branches = std::max(out.branches, r.j + 1);
    out.depth = std::max(out.depth, r.k + 1);
  }
  if (rows.empty()) throw FormatError("scalings CSV has no rows: " + path);
  for (const auto& r : rows) {
    if (out.iterations.empty() || out.iterations.back() != r.iter) {
      out.iterations.push_back(r.iter);
      out.scales.emplace_back(std::vector<Index>{out.tasks, out.branches, out.depth});
    }
    out.scales.back()[(r.i * out.branches + r.j) * out.depth + r.k] = r.v;
  }
  return out;
}

void write_pgm(const Tensor& image, const std::string& path) {
  if (image.rank() != 2) throw ShapeError("write_pgm: image must be [h x w], got " + image.shape_str());
  const Index h = image.dim(0), w = image.dim(1);
  atomic_write(path, [&](std::ostream& out) {
    out << "P2\n" << w << " " << h << "\n255\n";
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Scalar v = std::clamp(image[i * w + j], Scalar(0), Scalar(1));
        out << static_cast<int>(std::lround(v * 255)) << (j + 1 < w ? " " : "\n");
      }
    }
  });
}

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open PGM file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2") throw FormatError("unsupported PGM magic '" + magic + "' in " + path);
  auto next_token = [&]() -> long {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return std::stol(tok);
    }
    throw FormatError("truncated PGM file: " + path);
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w < 1 || h < 1 || maxval < 1) throw FormatError("bad PGM header in " + path);
  Tensor img({Index(h), Index(w)});
  for (Index p = 0; p < img.size(); ++p) img[p] = Scalar(next_token()) / Scalar(maxval);
  return img;
}

namespace {

constexpr int kChartW = 640, kChartH = 420, kMargin = 56;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#17becf", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

struct Range {
  Scalar lo = 0, hi = 1;
  Scalar map(Scalar v, Scalar a, Scalar b) const {
    return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : (a + b) / 2;
  }
};

} // namespace

void write_line_chart_svg(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::string& path) {
  Range xr{Scalar(0), Scalar(1)}, yr{Scalar(0), Scalar(1)};
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xr = {s.x[i], s.x[i]};
        yr = {s.y[i], s.y[i]};
        first = false;
      }
      xr.lo = std::min(xr.lo, s.x[i]);
      xr.hi = std::max(xr.hi, s.x[i]);
      yr.lo = std::min(yr.lo, s.y[i]);
      yr.hi = std::max(yr.hi, s.y[i]);
    }
  if (yr.hi == yr.lo) yr.hi = yr.lo + 1;
  atomic_write(path, [&](std::ostream& out) {
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kChartW << "' height='" << kChartH
        << "' font-family='sans-serif' font-size='12'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << kChartW / 2 << "' y='20' text-anchor='middle' font-size='14'>"
        << esc(title) << "</text>\n";
    // axes
    out << "<line x1='" << kMargin << "' y1='" << kChartH - kMargin << "' x2='" << kChartW - 20
        << "' y2='" << kChartH - kMargin << "' stroke='black'/>\n";
    out << "<line x1='" << kMargin << "' y1='30' x2='" << kMargin << "' y2='" << kChartH - kMargin
        << "' stroke='black'/>\n";
    out << "<text x='" << kChartW / 2 << "' y='" << kChartH - 12 << "' text-anchor='middle'>"
        << esc(x_label) << "</text>\n";
    out << "<text x='16' y='" << kChartH / 2 << "' text-anchor='middle' transform='rotate(-90 16 "
        << kChartH / 2 << ")'>" << esc(y_label) << "</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      const Scalar fx = xr.lo + (xr.hi - xr.lo) * tick / 4;
      const Scalar fy = yr.lo + (yr.hi - yr.lo) * tick / 4;
      const Scalar px = xr.map(fx, Scalar(kMargin), Scalar(kChartW - 20));
      const Scalar py = yr.map(fy, Scalar(kChartH - kMargin), Scalar(30));
      out << "<text x='" << px << "' y='" << kChartH - kMargin + 16 << "' text-anchor='middle'>"
          << fx << "</text>\n";
      out << "<text x='" << kMargin - 6 << "' y='" << py + 4 << "' text-anchor='end'>" << fy
          << "</text>\n";
    }
    for (size_t si = 0; si < series.size(); ++si) {
      const auto& s = series[si];
      const char* color = kPalette[si % (sizeof kPalette / sizeof *kPalette)];
      out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
      for (size_t i = 0; i < s.x.size(); ++i)
        out << xr.map(s.x[i], Scalar(kMargin), Scalar(kChartW - 20)) << ","
            << yr.map(s.y[i], Scalar(kChartH - kMargin), Scalar(30)) << " ";
      out << "'/>\n";
      out << "<text x='" << kChartW - 170 << "' y='" << 40 + 16 * si << "' fill='" << color << "'>"
          << esc(s.label) << "</text>\n";
    }
    out << "</svg>\n";
  });
}

void write_heatmap_svg(const Tensor& values, const std::string& title, const std::string& path) {
  if (values.rank() != 2) throw ShapeError("write_heatmap_svg: need a matrix, got " + values.shape_str());
  const Index rows = values.dim(0), cols = values.dim(1);
  const int cell = 48, left = 80, top = 48;
  Scalar lo = values[0], hi = values[0];
  for (Index i = 0; i < values.size(); ++i) {
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  atomic_write(path, [&](std::ostream& out) {
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << left + cols * cell + 24
        << "' height='" << top + rows * cell + 24 << "' font-family='sans-serif' font-size='11'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << left << "' y='20' font-size='14'>" << esc(title) << "</text>\n";
    for (Index i = 0; i < rows; ++i) {
      out << "<text x='" << left - 8 << "' y='" << top + i * cell + cell / 2 + 4
          << "' text-anchor='end'>layer " << i + 1 << "</text>\n";
      for (Index j = 0; j < cols; ++j) {
        const Scalar v = values[i * cols + j];
        const Scalar f = hi > lo ? (v - lo) / (hi - lo) : Scalar(0.5);
        const int shade = static_cast<int>(std::lround((1 - f) * 255));
        out << "<rect x='" << left + j * cell << "' y='" << top + i * cell << "' width='" << cell
            << "' height='" << cell << "' fill='rgb(" << shade << "," << shade << ",255)'"
            << " stroke='white'/>\n";
        out << "<text x='" << left + j * cell + cell / 2 << "' y='" << top + i * cell + cell / 2 + 4
            << "' text-anchor='middle'>"
            << static_cast<int>(std::lround(v * 100)) / 100.0 << "</text>\n";
      }
    }
    for (Index j = 0; j < cols; ++j)
      out << "<text x='" << left + j * cell + cell / 2 << "' y='" << top - 8
          << "' text-anchor='middle'>depth " << j + 1 << "</text>\n";
    out << "</svg>\n";
  });
}

namespace {

void emit_image_cells(std::ostream& out, const Tensor& img, int x0, int y0, int scale) {
  const Index h = img.dim(0), w = img.dim(1);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      const Scalar v = std::clamp(img[i * w + j], Scalar(0), Scalar(1));
      const int g = static_cast<int>(std::lround(v * 255));
      out << "<rect x='" << x0 + j * scale << "' y='" << y0 + i * scale << "' width='" << scale
          << "' height='" << scale << "' fill='rgb(" << g << "," << g << "," << g << ")'/>\n";
    }
}

} // namespace

void write_contact_sheet_svg(const std::vector<std::vector<Tensor>>& rows,
                             const std::vector<std::string>& row_labels, const std::string& title,
                             const std::string& path) {
  if (rows.empty() || rows[0].empty()) throw ContractError("write_contact_sheet_svg: no images");
  const Index h = rows[0][0].dim(0), w = rows[0][0].dim(1);
  const int scale = std::max<int>(1, static_cast<int>(96 / std::max(h, w)));
  const int cw = static_cast<int>(w) * scale + 8, ch = static_cast<int>(h) * scale + 8;
  const int left = 90, top = 40;
  size_t max_cols = 0;
  for (const auto& r : rows) max_cols = std::max(max_cols, r.size());
  atomic_write(path, [&](std::ostream& out) {
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << left + int(max_cols) * cw + 16
        << "' height='" << top + int(rows.size()) * ch + 16
        << "' font-family='sans-serif' font-size='12'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << left << "' y='22' font-size='14'>" << esc(title) << "</text>\n";
    for (size_t r = 0; r < rows.size(); ++r) {
      if (r < row_labels.size())
        out << "<text x='" << left - 8 << "' y='" << top + int(r) * ch + ch / 2
            << "' text-anchor='end'>" << esc(row_labels[r]) << "</text>\n";
      for (size_t c = 0; c < rows[r].size(); ++c)
        emit_image_cells(out, rows[r][c], left + int(c) * cw, top + int(r) * ch, scale);
    }
    out << "</svg>\n";
  });
}

void write_strongest_path_svg(const Tensor& scales, Index tasks, Index branches, Index depth,
                              const std::string& path) {
  const int cell = 56, left = 90, top = 48;
  atomic_write(path, [&](std::ostream& out) {
    const int width = left + static_cast<int>(depth + 1) * cell + 40;
    const int height = top + static_cast<int>(branches) * cell * static_cast<int>(tasks) +
                       40 * static_cast<int>(tasks);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' font-family='sans-serif' font-size='11'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    for (Index t = 0; t < tasks; ++t) {
      const int oy = top + static_cast<int>(t) * (static_cast<int>(branches) * cell + 40);
      out << "<text x='" << left << "' y='" << oy - 12 << "' font-size='13'>task " << t
          << "</text>\n";
      // shaded usage squares, strongest path overlaid
      std::vector<Index> best(static_cast<size_t>(depth), 0);
      for (Index k = 0; k < depth; ++k) {
        for (Index j = 0; j < branches; ++j) {
          const Scalar v = scales[(t * branches + j) * depth + k];
          if (v > scales[(t * branches + best[static_cast<size_t>(k)]) * depth + k])
            best[static_cast<size_t>(k)] = j;
          const int shade = static_cast<int>(std::lround((1 - v) * 255));
          out << "<rect x='" << left + static_cast<int>(k) * cell << "' y='"
              << oy + static_cast<int>(j) * cell << "' width='" << cell - 4 << "' height='"
              << cell - 4 << "' fill='rgb(" << shade << "," << shade << ",255)'/>\n";
        }
      }
      out << "<polyline fill='none' stroke='#d62728' stroke-width='3' points='";
      for (Index k = 0; k < depth; ++k)
        out << left + static_cast<int>(k) * cell + cell / 2 << ","
            << oy + static_cast<int>(best[static_cast<size_t>(k)]) * cell + cell / 2 << " ";
      out << "'/>\n";
    }
    out << "</svg>\n";
  });
}

void export_jsonl(const TaskDataset& d, const std::string& path) {
  using nlohmann::json;
  atomic_write(path, [&](std::ostream& out) {
    auto dump_split = [&](const std::vector<Sample>& split, const char* name) {
      for (const auto& s : split) {
        json j;
        j["task"] = d.name;
        j["split"] = name;
        j["input"] = std::vector<Scalar>(s.input.array().data(), s.input.array().data() + s.input.size());
        j["target"] =
            std::vector<Scalar>(s.target.array().data(), s.target.array().data() + s.target.size());
        out << j.dump() << "\n";
      }
    };
    dump_split(d.train, "train");
    dump_split(d.validation, "validation");
    dump_split(d.test, "test");
  });
}

} // namespace softorder
