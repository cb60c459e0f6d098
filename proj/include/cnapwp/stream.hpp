#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace cnapwp {

struct Event {
  std::string case_id;
  std::string activity;
  std::optional<std::string> resource;
  std::map<std::string, std::string> extra_attrs;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Events in completion order plus the externally signaled task boundaries.
struct EventStream {
  std::vector<Event> events;
  /// 0-based indices at which a new task segment begins (index 0 implied).
  std::vector<std::size_t> drift_indices;
  /// One label per segment, ground truth for metrics only.
  std::vector<std::string> task_labels;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }

  /// Number of segments implied by drift_indices.
  std::size_t segment_count() const noexcept { return drift_indices.size() + 1; }
  std::size_t segment_of(std::size_t index) const;
  /// Ground-truth label of the event at `index`, empty when labels are absent.
  std::string label_at(std::size_t index) const;

  /// Throws ConfigError unless drift indices are strictly increasing and in
  /// bounds and the label count (if any) matches the segment count.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct DriftSchedule {
  std::size_t segment_length = 1;
  std::vector<std::string> concept_order;
};

/// Column names for the case, activity and timestamp fields. Optional
/// columns are picked up when present in the header.
struct LogSchema {
  std::string case_column = "case_id";
  std::string activity_column = "activity";
  std::string timestamp_column = "timestamp";
  std::string resource_column = "resource";
  std::string drift_column = "drift";
  /// Columns kept verbatim in Event::extra_attrs.
  std::vector<std::string> keep_columns;
};

/// Reads an event-log CSV, drops incomplete cases and orders events by
/// completion time (stable). Timestamps are discarded after ordering.
EventStream parse_event_log(std::istream& source, const LogSchema& schema = {});

/// Writes `case_id,activity,timestamp,resource,drift` with integer ticks.
void write_event_log(std::ostream& out, const EventStream& stream);

std::vector<std::size_t> parse_drift_sidecar(std::istream& in);
void write_drift_sidecar(std::ostream& out, const std::vector<std::size_t>& drifts);
std::vector<std::string> parse_label_sidecar(std::istream& in);
void write_label_sidecar(std::ostream& out, const std::vector<std::string>& labels);

/// A trace is the activity sequence of one case.
using Trace = std::vector<std::string>;
using TracePool = std::vector<Trace>;

/// Groups a parsed stream into per-case traces in first-appearance order.
TracePool traces_of(const EventStream& stream);

struct ConceptPool {
  std::string name;
  TracePool traces;
};

struct GeneratedStream {
  EventStream stream;
  /// Cases cut off by a segment boundary before finishing their trace.
  std::vector<std::string> truncated_cases;
};

/// Builds a sudden-drift stream: one segment of `segment_length` events per
/// entry of `concept_order`. Whole traces are drawn uniformly with
/// replacement from the concept's pool and `concurrency` of them run
/// interleaved. Deterministic given `seed`.
GeneratedStream generate_drift_stream(const std::vector<ConceptPool>& pools,
                                      const DriftSchedule& schedule, std::uint64_t seed,
                                      std::size_t concurrency = 6);

/// First floor(fraction * n) events become the validation stream; drift
/// indices and segment labels are re-based into each half.
std::pair<EventStream, EventStream> split_validation(const EventStream& stream, double fraction);

/// First-order Markov process model used to synthesize concept pools.
struct ProcessModel {
  struct Transition {
    std::string next;  // empty string = end of trace
    double weight = 1.0;
  };
  std::string name;
  std::vector<Transition> start;
  std::map<std::string, std::vector<Transition>> transitions;
  std::size_t max_trace_length = 32;
};

TracePool simulate_process(const ProcessModel& model, std::size_t n_traces, std::uint64_t seed);

/// Built-in process models sharing one activity alphabet but with
/// conflicting control flow. Ids 1..4.
ProcessModel builtin_process(int id);

}  // namespace cnapwp
