#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnapwp/metrics.hpp"
#include "cnapwp/model.hpp"
#include "cnapwp/preprocessing.hpp"
#include "cnapwp/stream.hpp"
#include "cnapwp/task_recognition.hpp"
#include "cnapwp/window.hpp"

namespace cnapwp {

/// Update strategy. CNAPwP and the three prompt ablations share the same
/// windowed training; Landmark and LastDrift are the prompt-free baselines.
enum class Variant { CNAPwP, Landmark, LastDrift, NoPrompt, GOnly, EOnly };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

/// E-Prompt used when training on samples whose task is still being
/// recognized at update time.
enum class PendingTraining { ActiveTask, NoEPrompt, Skip };

/// Which history Landmark retrains on after each re-initialization.
enum class LandmarkScope { SinceStart, Window };

struct EngineConfig {
  std::size_t window_size = 250;      // gamma
  std::size_t buffer_size = 100;      // rho
  double threshold = 0.5;             // epsilon
  std::size_t buckets = 4;            // B
  std::size_t batch_size = 25;
  std::size_t epochs = 10;
  double lr = 0.01;
  double validation_fraction = 0.15;
  std::size_t fingerprint_cap = 500;
  /// NoPrompt: events after which everything but the classifier is frozen.
  std::size_t freeze_after = 500;
  /// LastDrift: maximum retained events (0 = unbounded).
  std::size_t retention_cap = 0;
  LandmarkScope landmark_scope = LandmarkScope::SinceStart;
  PendingTraining pending = PendingTraining::ActiveTask;
  ModelConfig model;

  /// Throws ConfigError on non-positive sizes or out-of-range ratios.
  void validate() const;
};

/// A task-recognition decision taken when a drift buffer filled up.
struct TaskEvent {
  std::size_t index = 0;  // evaluation index (warm-pass events are negative offsets, see stage)
  std::string stage;      // "warm" or "eval"
  bool matched = false;
  int task_id = 0;
  double dissimilarity = 1.0;
};

struct RunReport {
  Variant variant = Variant::CNAPwP;
  std::vector<PredictionRecord> records;
  SegmentSource source = SegmentSource::Engine;
  ForgettingMatrix forgetting;
  LatencyStats latency;
  double average_accuracy = 0.0;
  double total_seconds = 0.0;
  BucketConfig buckets;
  std::vector<TaskEvent> task_events;
  nlohmann::json task_store = nlohmann::json::array();
  std::vector<std::string> warnings;
};

/// Online test-then-train loop over one stream.
class Engine {
public:
  enum class Mode { Normal, Buffering };

  Engine(EngineConfig config, Variant variant);

  /// Seeds the vocabulary, fits buckets, builds the model and runs one warm
  /// pass of the online loop over `validation` (predictions discarded).
  void prepare(const EventStream& validation);

  /// Predicts `event`, then updates task recognition, the window and the
  /// model. `is_drift` marks the first event of a new segment.
  PredictionRecord process_event(const Event& event, std::size_t index, bool is_drift);

  /// process_event over every event of `evaluation`, then metrics.
  RunReport run(const EventStream& evaluation);

  Mode mode() const noexcept { return mode_; }
  int active_task() const noexcept { return active_task_; }
  const std::vector<TaskRecord>& task_store() const noexcept { return store_; }
  const std::vector<TaskEvent>& task_events() const noexcept { return task_events_; }
  const BucketConfig& bucket_config() const noexcept { return buckets_; }
  const ActivityVocabulary& vocabulary() const noexcept { return vocab_; }
  const SlidingWindow& window() const noexcept { return window_; }
  Model& model() { return *model_; }
  GPrompt& gprompt() noexcept { return gprompt_; }
  std::map<int, EPromptSet>& eprompts() noexcept { return eprompts_; }
  std::size_t updates() const noexcept { return updates_; }
  std::size_t last_training_size() const noexcept { return last_training_size_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

private:
  bool uses_g() const;
  bool uses_e() const;
  void resolve_task();
  void train();
  TaskRecord& record_of(int task_id);
  std::vector<EPromptSet*> all_eprompts();

  EngineConfig config_;
  Variant variant_;
  ActivityVocabulary vocab_;
  BucketConfig buckets_;
  SlidingWindow window_;
  std::optional<Model> model_;
  GPrompt gprompt_;
  std::map<int, EPromptSet> eprompts_;
  std::vector<TaskRecord> store_;
  FingerprintGrower grower_;
  Mode mode_ = Mode::Normal;
  std::optional<TaskBuffer> buffer_;
  int active_task_ = 0;
  int next_task_id_ = 1;
  std::deque<WindowEntry> retained_;
  std::size_t processed_ = 0;
  std::size_t updates_ = 0;
  std::size_t last_training_size_ = 0;
  bool frozen_ = false;
  bool warm_ = false;
  std::size_t current_index_ = 0;
  std::vector<TaskEvent> task_events_;
  std::vector<std::string> warnings_;
};

/// Splits off the validation prefix, prepares an engine on it and runs the
/// evaluation remainder.
RunReport run_strategy(const EventStream& stream, const EngineConfig& config, Variant variant);

}  // namespace cnapwp
