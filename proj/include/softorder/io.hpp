#pragma once

#include "softorder/dataset.hpp"
#include "softorder/trainer.hpp"

#include <string>
#include <vector>

namespace softorder {

/// Write-temp-then-rename; contents produced by the callback's stream.
void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& fill);

/// Full-precision decimal formatting (round-trips doubles exactly).
std::string format_scalar(Scalar v);

/// Metrics CSV: iteration,task_id,split,loss,accuracy. Train rows carry the
/// per-step batch loss; eval rows the split loss/accuracy.
void write_metrics_csv(const RunRecord& rec, const std::string& split_name,
                       const std::string& path);

/// Scaling snapshots CSV: iteration,task,branch,depth,value.
void write_scalings_csv(const RunRecord& rec, Index tasks, Index branches, Index depth,
                        const std::string& path);

struct ScalingSeries {
  std::vector<long> iterations;
  std::vector<Tensor> scales; // each [tasks x branches x depth]
  Index tasks = 0, branches = 0, depth = 0;
};

ScalingSeries read_scalings_csv(const std::string& path);

/// Plain-text PGM (P2), values clamped to [0,1] and quantized to maxval 255.
void write_pgm(const Tensor& image, const std::string& path);
Tensor read_pgm(const std::string& path);

/// Minimal native SVG emitters (no plotting dependency).
struct Series {
  std::string label;
  std::vector<Scalar> x, y;
};

void write_line_chart_svg(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::string& path);

void write_heatmap_svg(const Tensor& values, const std::string& title,
                       const std::string& path);

/// Rows of images laid out on one sheet; row/column labels optional.
void write_contact_sheet_svg(const std::vector<std::vector<Tensor>>& rows,
                             const std::vector<std::string>& row_labels, const std::string& title,
                             const std::string& path);

/// Fig-style strongest-path figure: per task, the argmax branch at each depth.
void write_strongest_path_svg(const Tensor& scales, Index tasks, Index branches, Index depth,
                              const std::string& path);

/// Debug JSON-lines export: one {"task","split","input","target"} object per line.
void export_jsonl(const TaskDataset& d, const std::string& path);

} // namespace softorder
