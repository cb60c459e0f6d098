#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cnapwp {

/// Outcome of one test-then-train step.
struct PredictionRecord {
  std::size_t index = 0;
  std::string case_id;
  std::string y;      // true activity label
  std::string y_hat;  // predicted label, empty when nothing could be predicted
  bool correct = false;
  int task_id = 0;    // engine-assigned task (0 when the strategy has none)
  std::string label;  // ground-truth task label, empty when unknown
  int occurrence = 0; // filled by assign_occurrences
  bool buffering = false;
  std::int64_t latency_ns = 0;
};

enum class SegmentSource { GroundTruth, Engine };

/// Numbers occurrences per task: 1 at a task's first appearance, +1 each
/// time it becomes active again. Uses ground-truth labels when every record
/// has one, engine task ids otherwise. Returns the source used.
SegmentSource assign_occurrences(std::span<PredictionRecord> records);

/// Task key of a record under the given segmentation source.
std::string task_key(const PredictionRecord& r, SegmentSource source);

/// Mean correctness over records with index in [max(0, i - w), i]; the
/// divisor is the number of records actually in range. Records must be
/// sorted by index.
double accuracy_at_index(std::span<const PredictionRecord> records, std::size_t i, std::size_t w);

/// accuracy_at_index for every record, computed with a running sum.
std::vector<std::pair<std::size_t, double>> accuracy_curve(std::span<const PredictionRecord> records,
                                                           std::size_t w);

/// Fraction of correct predictions. Throws std::invalid_argument when empty.
double average_accuracy(std::span<const PredictionRecord> records, bool include_buffering = true);

/// Accuracy R over records of task `task` in occurrence `occurrence`.
/// Requires assigned occurrences; throws std::out_of_range when absent.
double occurrence_accuracy(std::span<const PredictionRecord> records, const std::string& task,
                           int occurrence, SegmentSource source);

struct ForgettingCell {
  std::string task;
  int occurrence = 0;  // >= 2
  double delta = 0.0;  // R(first) - R(this); positive = forgetting
  double accuracy_first = 0.0;
  double accuracy_this = 0.0;
};

struct ForgettingMatrix {
  SegmentSource source = SegmentSource::GroundTruth;
  /// Tasks in order of first appearance.
  std::vector<std::string> tasks;
  /// (task, occurrence) -> R, for every occurrence including the first.
  std::map<std::pair<std::string, int>, double> accuracy;
  /// (task, occurrence) -> record count.
  std::map<std::pair<std::string, int>, std::size_t> count;
  std::vector<ForgettingCell> cells;
};

/// Requires assigned occurrences (see assign_occurrences).
ForgettingMatrix forgetting_matrix(std::span<const PredictionRecord> records, SegmentSource source);

struct LatencyStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;  // population
};

LatencyStats time_per_event(std::span<const PredictionRecord> records);

}  // namespace cnapwp
