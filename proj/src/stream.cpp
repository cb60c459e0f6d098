#include "cnapwp/stream.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "cnapwp/errors.hpp"
#include "csv.hpp"

namespace cnapwp {

std::size_t EventStream::segment_of(std::size_t index) const {
  return static_cast<std::size_t>(
      std::upper_bound(drift_indices.begin(), drift_indices.end(), index) - drift_indices.begin());
}

std::string EventStream::label_at(std::size_t index) const {
  if (task_labels.empty()) return {};
  return task_labels.at(segment_of(index));
}

void EventStream::validate() const {
  for (std::size_t i = 0; i < drift_indices.size(); ++i) {
    if (drift_indices[i] == 0 || drift_indices[i] >= events.size())
      throw ConfigError("drift index " + std::to_string(drift_indices[i]) + " out of bounds");
    if (i > 0 && drift_indices[i] <= drift_indices[i - 1])
      throw ConfigError("drift indices must be strictly increasing");
  }
  if (!task_labels.empty() && task_labels.size() != segment_count())
    throw ConfigError("expected " + std::to_string(segment_count()) + " task labels, got " +
                      std::to_string(task_labels.size()));
}

namespace {

bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_fixed(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  long long v = 0;
  parse_int(s.substr(pos, len), v);
  out = static_cast<int>(v);
  return true;
}

// Integer ticks, or ISO-8601 `YYYY-MM-DD[(T| )HH:MM[:SS[.fff]]][Z|+HH:MM|-HHMM]`
// converted to microseconds since the epoch.
std::optional<long long> parse_timestamp(std::string_view s) {
  long long ticks = 0;
  if (parse_int(s, ticks)) return ticks;

  using namespace std::chrono;
  int y, mo, d;
  if (!parse_fixed(s, 0, 4, y) || s.size() < 10 || s[4] != '-' || !parse_fixed(s, 5, 2, mo) ||
      s[7] != '-' || !parse_fixed(s, 8, 2, d))
    return std::nullopt;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  long long micros = duration_cast<microseconds>(sys_days{ymd}.time_since_epoch()).count();

  std::size_t pos = 10;
  if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
    int hh, mm, ss = 0;
    if (!parse_fixed(s, pos + 1, 2, hh) || pos + 3 >= s.size() || s[pos + 3] != ':' ||
        !parse_fixed(s, pos + 4, 2, mm))
      return std::nullopt;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      if (!parse_fixed(s, pos + 1, 2, ss)) return std::nullopt;
      pos += 3;
    }
    micros += ((hh * 60LL + mm) * 60LL + ss) * 1'000'000LL;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      long long frac = 0;
      int digits = 0;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        if (digits < 6) {
          frac = frac * 10 + (s[pos] - '0');
          ++digits;
        }
        ++pos;
      }
      while (digits++ < 6) frac *= 10;
      micros += frac;
    }
  }
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) return micros;
    if (s[pos] != '+' && s[pos] != '-') return std::nullopt;
    const int sign = s[pos] == '+' ? 1 : -1;
    int oh, om = 0;
    if (!parse_fixed(s, pos + 1, 2, oh)) return std::nullopt;
    std::size_t rest = pos + 3;
    if (rest < s.size() && s[rest] == ':') ++rest;
    if (rest < s.size()) {
      if (!parse_fixed(s, rest, 2, om) || rest + 2 != s.size()) return std::nullopt;
    }
    micros -= sign * (oh * 60LL + om) * 60'000'000LL;
  }
  return micros;
}

bool truthy(std::string_view s) { return s == "1" || s == "true" || s == "True" || s == "TRUE"; }

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

EventStream parse_event_log(std::istream& source, const LogSchema& schema) {
  csv::Reader reader(source);
  auto header = reader.next();
  if (!header) throw ParseError("missing header row", 1);

  const auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header->begin(), header->end(), name);
    if (it == header->end()) return std::nullopt;
    return static_cast<std::size_t>(it - header->begin());
  };
  const auto require_column = [&](const std::string& name) {
    auto col = find_column(name);
    if (!col) throw ConfigError("schema column '" + name + "' not found in header");
    return *col;
  };
  const std::size_t case_col = require_column(schema.case_column);
  const std::size_t activity_col = require_column(schema.activity_column);
  const std::size_t time_col = require_column(schema.timestamp_column);
  const auto resource_col = find_column(schema.resource_column);
  const auto drift_col = find_column(schema.drift_column);
  std::vector<std::pair<std::string, std::size_t>> keep;
  for (const auto& name : schema.keep_columns) keep.emplace_back(name, require_column(name));

  struct Row {
    Event event;
    long long time = 0;
    bool drift = false;
  };
  std::vector<Row> rows;
  std::set<std::string> excluded;

  while (auto fields = reader.next()) {
    if (fields->size() != header->size())
      throw ParseError("expected " + std::to_string(header->size()) + " fields, got " +
                           std::to_string(fields->size()),
                       reader.line());
    Row row;
    row.event.case_id = (*fields)[case_col];
    row.event.activity = (*fields)[activity_col];
    const std::string& ts = (*fields)[time_col];
    if (row.event.case_id.empty()) continue;  // no case to attribute the row to
    if (row.event.activity.empty() || ts.empty()) {
      excluded.insert(row.event.case_id);
      continue;
    }
    auto parsed = parse_timestamp(ts);
    if (!parsed) throw ParseError("unparseable timestamp '" + ts + "'", reader.line());
    row.time = *parsed;
    if (resource_col && !(*fields)[*resource_col].empty())
      row.event.resource = (*fields)[*resource_col];
    if (drift_col) row.drift = truthy((*fields)[*drift_col]);
    for (const auto& [name, col] : keep) row.event.extra_attrs[name] = (*fields)[col];
    rows.push_back(std::move(row));
  }

  std::erase_if(rows, [&](const Row& r) { return excluded.count(r.event.case_id) > 0; });
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.time < b.time; });

  EventStream stream;
  stream.events.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].drift && i > 0) stream.drift_indices.push_back(i);
    stream.events.push_back(std::move(rows[i].event));
  }
  return stream;
}

void write_event_log(std::ostream& out, const EventStream& stream) {
  std::set<std::string> extra;
  for (const auto& e : stream.events)
    for (const auto& [k, v] : e.extra_attrs) extra.insert(k);

  std::vector<std::string> header{"case_id", "activity", "timestamp", "resource", "drift"};
  header.insert(header.end(), extra.begin(), extra.end());
  csv::write_row(out, header);

  std::size_t next_drift = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    bool drift = false;
    if (next_drift < stream.drift_indices.size() && stream.drift_indices[next_drift] == i) {
      drift = true;
      ++next_drift;
    }
    std::vector<std::string> row{e.case_id, e.activity, std::to_string(i),
                                 e.resource.value_or(""), drift ? "1" : "0"};
    for (const auto& k : extra) {
      auto it = e.extra_attrs.find(k);
      row.push_back(it == e.extra_attrs.end() ? "" : it->second);
    }
    csv::write_row(out, row);
  }
}

std::vector<std::size_t> parse_drift_sidecar(std::istream& in) {
  std::vector<std::size_t> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    long long v = 0;
    if (!parse_int(line, v) || v < 0) throw ParseError("expected a non-negative integer", lineno);
    out.push_back(static_cast<std::size_t>(v));
  }
  // Index 0 is the implicit start of the first segment.
  std::erase(out, std::size_t{0});
  return out;
}

void write_drift_sidecar(std::ostream& out, const std::vector<std::size_t>& drifts) {
  for (auto d : drifts) out << d << '\n';
}

std::vector<std::string> parse_label_sidecar(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_label_sidecar(std::ostream& out, const std::vector<std::string>& labels) {
  for (const auto& l : labels) out << l << '\n';
}

TracePool traces_of(const EventStream& stream) {
  TracePool pool;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& e : stream.events) {
    auto [it, inserted] = slot.try_emplace(e.case_id, pool.size());
    if (inserted) pool.emplace_back();
    pool[it->second].push_back(e.activity);
  }
  return pool;
}

GeneratedStream generate_drift_stream(const std::vector<ConceptPool>& pools,
                                      const DriftSchedule& schedule, std::uint64_t seed,
                                      std::size_t concurrency) {
  if (schedule.segment_length < 1) throw ConfigError("segment_length must be >= 1");
  if (schedule.concept_order.empty()) throw ConfigError("concept_order must be non-empty");
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");

  std::map<std::string, std::vector<const Trace*>> usable;
  for (const auto& pool : pools) {
    auto& list = usable[pool.name];
    for (const auto& t : pool.traces)
      if (!t.empty()) list.push_back(&t);
  }
  for (const auto& name : schedule.concept_order) {
    auto it = usable.find(name);
    if (it == usable.end()) throw ConfigError("no pool for concept '" + name + "'");
    if (it->second.empty()) throw ConfigError("pool for concept '" + name + "' is empty");
  }

  std::mt19937_64 rng(seed);
  GeneratedStream out;
  EventStream& stream = out.stream;
  stream.events.reserve(schedule.segment_length * schedule.concept_order.size());
  std::size_t next_case = 0;

  struct Slot {
    std::string case_id;
    const Trace* trace;
    std::size_t pos;
  };

  for (std::size_t s = 0; s < schedule.concept_order.size(); ++s) {
    const auto& traces = usable.at(schedule.concept_order[s]);
    std::uniform_int_distribution<std::size_t> pick_trace(0, traces.size() - 1);
    const auto fresh = [&] {
      return Slot{"c" + std::to_string(++next_case), traces[pick_trace(rng)], 0};
    };
    if (s > 0) stream.drift_indices.push_back(stream.events.size());
    stream.task_labels.push_back(schedule.concept_order[s]);

    std::vector<Slot> slots;
    for (std::size_t i = 0; i < concurrency; ++i) slots.push_back(fresh());
    std::uniform_int_distribution<std::size_t> pick_slot(0, concurrency - 1);
    for (std::size_t emitted = 0; emitted < schedule.segment_length; ++emitted) {
      Slot& slot = slots[pick_slot(rng)];
      stream.events.push_back(Event{slot.case_id, (*slot.trace)[slot.pos], std::nullopt, {}});
      if (++slot.pos == slot.trace->size()) slot = fresh();
    }
    for (const auto& slot : slots)
      if (slot.pos > 0) out.truncated_cases.push_back(slot.case_id);
  }
  return out;
}

std::pair<EventStream, EventStream> split_validation(const EventStream& stream, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw PreconditionError("validation fraction must lie in (0, 1)");
  const std::size_t n = stream.size();
  const auto cut = static_cast<std::size_t>(fraction * static_cast<double>(n));

  EventStream validation, evaluation;
  validation.events.assign(stream.events.begin(), stream.events.begin() + cut);
  evaluation.events.assign(stream.events.begin() + cut, stream.events.end());
  for (auto d : stream.drift_indices) {
    if (d < cut)
      validation.drift_indices.push_back(d);
    else if (d > cut)
      evaluation.drift_indices.push_back(d - cut);
  }
  if (!stream.task_labels.empty()) {
    if (cut > 0) {
      const std::size_t last = stream.segment_of(cut - 1);
      validation.task_labels.assign(stream.task_labels.begin(),
                                    stream.task_labels.begin() + last + 1);
    }
    if (cut < n) {
      const std::size_t first = stream.segment_of(cut);
      evaluation.task_labels.assign(stream.task_labels.begin() + first, stream.task_labels.end());
    }
  }
  return {std::move(validation), std::move(evaluation)};
}

TracePool simulate_process(const ProcessModel& model, std::size_t n_traces, std::uint64_t seed) {
  if (model.start.empty()) throw ConfigError("process model '" + model.name + "' has no start");
  std::mt19937_64 rng(seed);
  const auto choose = [&](const std::vector<ProcessModel::Transition>& options) {
    std::vector<double> weights;
    for (const auto& t : options) weights.push_back(t.weight);
    std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
    return options[dist(rng)].next;
  };

  TracePool pool;
  pool.reserve(n_traces);
  for (std::size_t i = 0; i < n_traces; ++i) {
    Trace trace;
    std::string current = choose(model.start);
    while (!current.empty() && trace.size() < model.max_trace_length) {
      trace.push_back(current);
      auto it = model.transitions.find(current);
      if (it == model.transitions.end() || it->second.empty()) break;
      current = choose(it->second);
    }
    pool.push_back(std::move(trace));
  }
  return pool;
}

ProcessModel builtin_process(int id) {
  using T = ProcessModel::Transition;
  ProcessModel m;
  m.name = "process" + std::to_string(id);
  switch (id) {
    case 1:
      m.start = {T{"register"}};
      m.transitions = {
          {"register", {T{"check"}}},
          {"check", {T{"review"}}},
          {"review", {T{"approve", 0.7}, T{"reject", 0.3}}},
          {"approve", {T{"pay"}}},
          {"pay", {T{"notify"}}},
          {"reject", {T{"notify"}}},
          {"notify", {T{"close", 0.6}, T{"archive", 0.4}}},
          {"archive", {T{"close"}}},
          {"close", {T{""}}},
      };
      break;
    case 2:
      m.start = {T{"register"}};
      m.transitions = {
          {"register", {T{"review"}}},
          {"review", {T{"escalate", 0.5}, T{"approve", 0.5}}},
          {"escalate", {T{"audit"}}},
          {"audit", {T{"approve", 0.6}, T{"reject", 0.4}}},
          {"approve", {T{"notify"}}},
          {"reject", {T{"archive"}}},
          {"notify", {T{"pay"}}},
          {"pay", {T{"close"}}},
          {"archive", {T{""}}},
          {"close", {T{""}}},
      };
      break;
    case 3:
      m.start = {T{"contact"}};
      m.transitions = {
          {"contact", {T{"register"}}},
          {"register", {T{"audit"}}},
          {"audit", {T{"check"}}},
          {"check", {T{"escalate", 0.5}, T{"pay", 0.5}}},
          {"escalate", {T{"review"}}},
          {"review", {T{"reject"}}},
          {"reject", {T{"close"}}},
          {"pay", {T{"archive"}}},
          {"archive", {T{"notify"}}},
          {"notify", {T{""}}},
          {"close", {T{""}}},
      };
      break;
    case 4:
      m.start = {T{"register", 0.5}, T{"contact", 0.5}};
      m.transitions = {
          {"register", {T{"pay"}}},
          {"contact", {T{"pay"}}},
          {"pay", {T{"check"}}},
          {"check", {T{"approve", 0.5}, T{"notify", 0.5}}},
          {"approve", {T{"archive"}}},
          {"notify", {T{"review"}}},
          {"review", {T{"close"}}},
          {"archive", {T{"close"}}},
          {"close", {T{""}}},
      };
      break;
    default:
      throw ConfigError("unknown builtin process id " + std::to_string(id));
  }
  return m;
}

}  // namespace cnapwp
