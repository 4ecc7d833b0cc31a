#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "udaforge/toyscenes.hpp"
#include "udaforge/trainer.hpp"

namespace udaforge {

// Rows index ground truth, columns index predictions; void pixels are never
// counted, so the total equals the number of evaluated pixels.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // flattened C x C

  explicit ConfusionMatrix(int c);
  std::int64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::int64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::int64_t total() const;
};

// cm[gt(p)][pred(p)] += 1 for every pixel whose ground truth is not void.
// Predictions must be valid class ids; ground truth may also be void (255).
void confusion_accumulate(const LabelGrid& pred, const LabelGrid& gt, ConfusionMatrix& cm);

// IoU_c = cm[c][c] / (row_c + col_c - cm[c][c]). Classes whose denominator is
// zero (never predicted, never present) get no value and are excluded from
// the mean; a matrix with no defined class yields mean 0.
struct MiouResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

MiouResult miou(const ConfusionMatrix& cm);

struct Metrics {
  std::string checkpoint;
  std::string dataset;
  std::vector<std::optional<double>> per_class;
  double miou = 0.0;
  std::int64_t pixels_evaluated = 0;
};

// Runs the generator from the checkpoint over every sample in the dataset and
// scores predictions against the stored labels.
Metrics evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset_dir);

// {checkpoint, dataset, per_class: [{class, iou|null}], miou,
// pixels_evaluated}, two-space indent.
void write_metrics_json(const Metrics& m, const std::string& path);
Metrics read_metrics_json(const std::string& path);

// "class,iou" table; undefined classes get an empty iou cell.
std::string per_class_csv(const Metrics& m);

TrainLog read_train_log_jsonl(const std::string& path);

// Writes metrics.json, per_class.csv, loss_curves.svg and mask_fraction.svg.
// Pure function of its inputs: regenerating into the same directory is
// byte-identical.
void emit_report(const TrainLog& log, const Metrics& metrics, const std::string& out_dir);

}  // namespace udaforge
