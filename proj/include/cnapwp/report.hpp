#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnapwp/engine.hpp"
#include "cnapwp/metrics.hpp"

namespace cnapwp {

/// `index,case_id,y,y_hat,correct,task_id,label,occurrence,buffering`.
/// Latency is kept out so that identical runs give identical files.
void write_records_csv(std::ostream& out, std::span<const PredictionRecord> records);

/// Reads a file written by write_records_csv. Throws ParseError on a
/// header or field mismatch and std::invalid_argument when it holds no
/// records.
std::vector<PredictionRecord> read_records_csv(std::istream& in);

/// `index,latency_ns`.
void write_latency_csv(std::ostream& out, std::span<const PredictionRecord> records);

/// `task,occurrence,delta,accuracy_first,accuracy_this`.
void write_forgetting_csv(std::ostream& out, const ForgettingMatrix& fm);

/// `index,accuracy`.
void write_accuracy_curve_csv(std::ostream& out,
                              std::span<const std::pair<std::size_t, double>> curve);

nlohmann::json summary_json(const RunReport& report);

/// Writes every report file of one run into `dir` (created if missing).
void write_run_report(const std::filesystem::path& dir, const RunReport& report,
                      std::size_t curve_window);

struct CurveSeries {
  std::string name;
  std::vector<std::pair<std::size_t, double>> points;
};

/// Overlay of accuracy curves with optional vertical drift markers.
std::string accuracy_curve_svg(std::span<const CurveSeries> series,
                               std::span<const std::size_t> drift_indices = {});

/// Task x occurrence grid. The first column shows R of the first
/// occurrence; later cells show the accuracy change against it in
/// percentage points (negative = forgetting, drawn blue; gains are red).
std::string forgetting_heatmap_svg(const ForgettingMatrix& fm, const std::string& title);

}  // namespace cnapwp
