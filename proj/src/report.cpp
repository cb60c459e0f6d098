#include "cnapwp/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cnapwp/errors.hpp"
#include "csv.hpp"

namespace cnapwp {

namespace {

const std::vector<std::string> kRecordHeader{"index", "case_id", "y", "y_hat", "correct",
                                             "task_id", "label", "occurrence", "buffering"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

long long parse_int(const std::string& s, std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("bad integer in column ") + field + ": '" + s + "'", line);
  }
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

void write_records_csv(std::ostream& out, std::span<const PredictionRecord> records) {
  csv::write_row(out, kRecordHeader);
  for (const auto& r : records) {
    csv::write_row(out, {std::to_string(r.index), r.case_id, r.y, r.y_hat, r.correct ? "1" : "0",
                         std::to_string(r.task_id), r.label, std::to_string(r.occurrence),
                         r.buffering ? "1" : "0"});
  }
}

std::vector<PredictionRecord> read_records_csv(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw std::invalid_argument("records file is empty");
  if (*header != kRecordHeader) throw ParseError("unexpected records header", 1);
  std::vector<PredictionRecord> out;
  while (auto row = reader.next()) {
    if (row->size() == 1 && (*row)[0].empty()) continue;
    if (row->size() != kRecordHeader.size())
      throw ParseError("expected " + std::to_string(kRecordHeader.size()) + " fields", reader.line());
    const auto& f = *row;
    PredictionRecord r;
    r.index = static_cast<std::size_t>(parse_int(f[0], reader.line(), "index"));
    r.case_id = f[1];
    r.y = f[2];
    r.y_hat = f[3];
    r.correct = parse_int(f[4], reader.line(), "correct") != 0;
    r.task_id = static_cast<int>(parse_int(f[5], reader.line(), "task_id"));
    r.label = f[6];
    r.occurrence = static_cast<int>(parse_int(f[7], reader.line(), "occurrence"));
    r.buffering = parse_int(f[8], reader.line(), "buffering") != 0;
    if (!out.empty() && r.index <= out.back().index)
      throw ParseError("indices must be strictly increasing", reader.line());
    out.push_back(std::move(r));
  }
  if (out.empty()) throw std::invalid_argument("records file holds no records");
  return out;
}

void write_latency_csv(std::ostream& out, std::span<const PredictionRecord> records) {
  out << "index,latency_ns\n";
  for (const auto& r : records) out << r.index << ',' << r.latency_ns << '\n';
}

void write_forgetting_csv(std::ostream& out, const ForgettingMatrix& fm) {
  out << "task,occurrence,delta,accuracy_first,accuracy_this\n";
  for (const auto& c : fm.cells)
    csv::write_row(out, {c.task, std::to_string(c.occurrence), num(c.delta), num(c.accuracy_first),
                         num(c.accuracy_this)});
}

void write_accuracy_curve_csv(std::ostream& out,
                              std::span<const std::pair<std::size_t, double>> curve) {
  out << "index,accuracy\n";
  for (const auto& [i, a] : curve) out << i << ',' << num(a) << '\n';
}

nlohmann::json summary_json(const RunReport& report) {
  nlohmann::json j;
  j["strategy"] = to_string(report.variant);
  j["events"] = report.records.size();
  j["average_accuracy"] = report.average_accuracy;
  j["time_per_event_ms"] = {{"mean", report.latency.mean_ms}, {"std", report.latency.stddev_ms}};
  j["total_seconds"] = report.total_seconds;
  j["segmentation"] = report.source == SegmentSource::GroundTruth ? "ground_truth" : "engine";
  double sum = 0.0;
  for (const auto& c : report.forgetting.cells) sum += c.delta;
  j["forgetting"] = {{"cells", report.forgetting.cells.size()},
                     {"mean_delta", report.forgetting.cells.empty()
                                        ? 0.0
                                        : sum / static_cast<double>(report.forgetting.cells.size())}};
  j["bucket_boundaries"] = report.buckets.boundaries;
  auto& tasks = j["task_events"] = nlohmann::json::array();
  for (const auto& t : report.task_events)
    tasks.push_back({{"stage", t.stage}, {"index", t.index}, {"matched", t.matched},
                     {"task_id", t.task_id}, {"dissimilarity", t.dissimilarity}});
  j["warnings"] = report.warnings;
  return j;
}

void write_run_report(const std::filesystem::path& dir, const RunReport& report,
                      std::size_t curve_window) {
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir / "records.csv");
    write_records_csv(f, report.records);
  }
  {
    auto f = open_out(dir / "latency.csv");
    write_latency_csv(f, report.records);
  }
  {
    auto f = open_out(dir / "forgetting.csv");
    write_forgetting_csv(f, report.forgetting);
  }
  {
    auto f = open_out(dir / "accuracy_curve.csv");
    write_accuracy_curve_csv(f, accuracy_curve(report.records, curve_window));
  }
  {
    auto f = open_out(dir / "summary.json");
    f << summary_json(report).dump(2) << '\n';
  }
  {
    auto f = open_out(dir / "task_store.json");
    f << report.task_store.dump(2) << '\n';
  }
}

std::string accuracy_curve_svg(std::span<const CurveSeries> series,
                               std::span<const std::size_t> drift_indices) {
  const double w = 900, h = 360, ml = 55, mr = 20, mt = 20, mb = 45;
  std::size_t max_index = 1;
  for (const auto& s : series)
    for (const auto& p : s.points) max_index = std::max(max_index, p.first);
  const auto sx = [&](double i) { return ml + (w - ml - mr) * i / static_cast<double>(max_index); };
  const auto sy = [&](double a) { return mt + (h - mt - mb) * (1.0 - a); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double a = t / 4.0;
    o << "<line x1=\"" << ml << "\" x2=\"" << w - mr << "\" y1=\"" << sy(a) << "\" y2=\"" << sy(a)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << sy(a) + 4 << "\" text-anchor=\"end\">" << fixed(a, 2)
      << "</text>\n";
  }
  for (std::size_t d : drift_indices)
    o << "<line x1=\"" << sx(static_cast<double>(d)) << "\" x2=\"" << sx(static_cast<double>(d))
      << "\" y1=\"" << mt << "\" y2=\"" << h - mb << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 10
    << "\" text-anchor=\"middle\">event index</text>\n";
  o << "<text x=\"" << w - mr << "\" y=\"" << h - mb + 15 << "\" text-anchor=\"end\">" << max_index
    << "</text>\n";

  std::size_t k = 0;
  for (const auto& s : series) {
    const char* color = kPalette[k % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    // Thin out long series; one point per pixel column is plenty.
    const std::size_t step = std::max<std::size_t>(1, s.points.size() / 1600);
    for (std::size_t i = 0; i < s.points.size(); i += step)
      o << fixed(sx(static_cast<double>(s.points[i].first)), 1) << ','
        << fixed(sy(s.points[i].second), 1) << ' ';
    o << "\"/>\n";
    const double ly = mt + 14.0 * static_cast<double>(k) + 10;
    o << "<rect x=\"" << ml + 10 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"3\" fill=\"" << color
      << "\"/>\n";
    o << "<text x=\"" << ml + 28 << "\" y=\"" << ly - 3 << "\">" << xml_escape(s.name) << "</text>\n";
    ++k;
  }
  o << "</svg>\n";
  return o.str();
}

std::string forgetting_heatmap_svg(const ForgettingMatrix& fm, const std::string& title) {
  int max_occ = 1;
  for (const auto& [key, acc] : fm.accuracy) max_occ = std::max(max_occ, key.second);
  const double cw = 80, ch = 32, ml = 110, mt = 50;
  const double w = ml + cw * max_occ + 20, h = mt + ch * static_cast<double>(fm.tasks.size()) + 20;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"10\" y=\"18\">" << xml_escape(title) << "</text>\n";
  for (int a = 1; a <= max_occ; ++a)
    o << "<text x=\"" << ml + cw * (a - 1) + cw / 2 << "\" y=\"" << mt - 8
      << "\" text-anchor=\"middle\">occ " << a << "</text>\n";

  std::map<std::pair<std::string, int>, double> delta;
  for (const auto& c : fm.cells) delta[{c.task, c.occurrence}] = c.delta;
  for (std::size_t t = 0; t < fm.tasks.size(); ++t) {
    const double y = mt + ch * static_cast<double>(t);
    o << "<text x=\"" << ml - 8 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"end\">task "
      << xml_escape(fm.tasks[t]) << "</text>\n";
    for (int a = 1; a <= max_occ; ++a) {
      const double x = ml + cw * (a - 1);
      auto it = delta.find({fm.tasks[t], a});
      std::string fill = "#f0f0f0", label;
      if (a == 1 && fm.accuracy.count({fm.tasks[t], 1})) {
        fill = "#ffffff";
        label = "R " + fixed(100.0 * fm.accuracy.at({fm.tasks[t], 1}), 1);
      } else if (it != delta.end()) {
        // Cells show the accuracy change R(a) - R(1): forgetting is negative and cold.
        const double v = std::clamp(it->second / 0.5, -1.0, 1.0);
        const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
        char buf[16];
        if (v >= 0)
          std::snprintf(buf, sizeof buf, "#%02x%02xff", fade, fade);
        else
          std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
        fill = buf;
        label = fixed(-100.0 * it->second, 2);
      }
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw - 2 << "\" height=\"" << ch - 2
        << "\" fill=\"" << fill << "\" stroke=\"#bbb\"/>\n";
      if (!label.empty())
        o << "<text x=\"" << x + cw / 2 - 1 << "\" y=\"" << y + ch / 2 + 3
          << "\" text-anchor=\"middle\">" << label << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace cnapwp
