#include "cnapwp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cnapwp {

std::string task_key(const PredictionRecord& r, SegmentSource source) {
  return source == SegmentSource::GroundTruth ? r.label : std::to_string(r.task_id);
}

SegmentSource assign_occurrences(std::span<PredictionRecord> records) {
  const bool labelled = !records.empty() && std::all_of(records.begin(), records.end(),
                                                        [](const auto& r) { return !r.label.empty(); });
  const SegmentSource source = labelled ? SegmentSource::GroundTruth : SegmentSource::Engine;
  std::map<std::string, int> seen;
  std::string previous;
  bool first = true;
  int current = 0;
  for (auto& r : records) {
    std::string key = task_key(r, source);
    if (first || key != previous) {
      current = ++seen[key];
      previous = std::move(key);
      first = false;
    }
    r.occurrence = current;
  }
  return source;
}

namespace {

std::size_t lower_index(std::span<const PredictionRecord> records, std::size_t index) {
  return static_cast<std::size_t>(
      std::lower_bound(records.begin(), records.end(), index,
                       [](const PredictionRecord& r, std::size_t v) { return r.index < v; }) -
      records.begin());
}

}  // namespace

double accuracy_at_index(std::span<const PredictionRecord> records, std::size_t i, std::size_t w) {
  const std::size_t lo = i >= w ? i - w : 0;
  const std::size_t begin = lower_index(records, lo);
  const std::size_t end = lower_index(records, i + 1);
  if (begin >= end) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = begin; j < end; ++j) hits += records[j].correct ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(end - begin);
}

std::vector<std::pair<std::size_t, double>> accuracy_curve(std::span<const PredictionRecord> records,
                                                           std::size_t w) {
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(records.size());
  std::size_t begin = 0, hits = 0;
  for (std::size_t j = 0; j < records.size(); ++j) {
    hits += records[j].correct ? 1 : 0;
    const std::size_t i = records[j].index;
    const std::size_t lo = i >= w ? i - w : 0;
    while (records[begin].index < lo) hits -= records[begin++].correct ? 1 : 0;
    out.emplace_back(i, static_cast<double>(hits) / static_cast<double>(j + 1 - begin));
  }
  return out;
}

double average_accuracy(std::span<const PredictionRecord> records, bool include_buffering) {
  std::size_t n = 0, hits = 0;
  for (const auto& r : records) {
    if (!include_buffering && r.buffering) continue;
    ++n;
    hits += r.correct ? 1 : 0;
  }
  if (n == 0) throw std::invalid_argument("average_accuracy: no records");
  return static_cast<double>(hits) / static_cast<double>(n);
}

double occurrence_accuracy(std::span<const PredictionRecord> records, const std::string& task,
                           int occurrence, SegmentSource source) {
  std::size_t n = 0, hits = 0;
  for (const auto& r : records) {
    if (r.occurrence != occurrence || task_key(r, source) != task) continue;
    ++n;
    hits += r.correct ? 1 : 0;
  }
  if (n == 0)
    throw std::out_of_range("no records for task " + task + " occurrence " + std::to_string(occurrence));
  return static_cast<double>(hits) / static_cast<double>(n);
}

ForgettingMatrix forgetting_matrix(std::span<const PredictionRecord> records, SegmentSource source) {
  ForgettingMatrix fm;
  fm.source = source;
  std::map<std::pair<std::string, int>, std::size_t> hits;
  for (const auto& r : records) {
    auto key = std::make_pair(task_key(r, source), r.occurrence);
    if (std::find(fm.tasks.begin(), fm.tasks.end(), key.first) == fm.tasks.end())
      fm.tasks.push_back(key.first);
    ++fm.count[key];
    hits[key] += r.correct ? 1 : 0;
  }
  for (const auto& [key, n] : fm.count)
    fm.accuracy[key] = static_cast<double>(hits[key]) / static_cast<double>(n);

  for (const auto& task : fm.tasks) {
    auto first = fm.accuracy.find({task, 1});
    if (first == fm.accuracy.end()) continue;
    for (auto it = std::next(first); it != fm.accuracy.end() && it->first.first == task; ++it) {
      fm.cells.push_back(ForgettingCell{task, it->first.second, first->second - it->second,
                                        first->second, it->second});
    }
  }
  return fm;
}

LatencyStats time_per_event(std::span<const PredictionRecord> records) {
  LatencyStats s;
  if (records.empty()) return s;
  double sum = 0.0;
  for (const auto& r : records) sum += static_cast<double>(r.latency_ns) * 1e-6;
  s.mean_ms = sum / static_cast<double>(records.size());
  double var = 0.0;
  for (const auto& r : records) {
    const double dev = static_cast<double>(r.latency_ns) * 1e-6 - s.mean_ms;
    var += dev * dev;
  }
  s.stddev_ms = std::sqrt(var / static_cast<double>(records.size()));
  return s;
}

}  // namespace cnapwp
