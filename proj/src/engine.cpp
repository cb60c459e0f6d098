#include "cnapwp/engine.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "cnapwp/errors.hpp"

namespace cnapwp {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::CNAPwP: return "cnapwp";
    case Variant::Landmark: return "landmark";
    case Variant::LastDrift: return "last_drift";
    case Variant::NoPrompt: return "no_prompt";
    case Variant::GOnly: return "g_only";
    case Variant::EOnly: return "e_only";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::CNAPwP, Variant::Landmark, Variant::LastDrift, Variant::NoPrompt,
                    Variant::GOnly, Variant::EOnly})
    if (to_string(v) == name) return v;
  if (name == "full") return Variant::CNAPwP;
  throw ConfigError("unknown strategy '" + name + "'");
}

void EngineConfig::validate() const {
  if (window_size == 0 || buffer_size == 0 || buckets == 0 || batch_size == 0 || epochs == 0 ||
      fingerprint_cap == 0 || model.max_len == 0 || model.heads == 0 || model.layers == 0)
    throw ConfigError("window, buffer, bucket, batch, epoch, fingerprint and model sizes must be positive");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in (0, 1]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (buckets < 2) throw ConfigError("at least 2 buckets are required");
}

Engine::Engine(EngineConfig config, Variant variant)
    : config_(std::move(config)),
      variant_(variant),
      window_(config_.window_size),
      grower_(config_.fingerprint_cap) {
  config_.validate();
}

bool Engine::uses_g() const { return variant_ == Variant::CNAPwP || variant_ == Variant::GOnly; }
bool Engine::uses_e() const { return variant_ == Variant::CNAPwP || variant_ == Variant::EOnly; }

TaskRecord& Engine::record_of(int task_id) {
  for (auto& r : store_)
    if (r.task_id == task_id) return r;
  throw PreconditionError("unknown task id " + std::to_string(task_id));
}

std::vector<EPromptSet*> Engine::all_eprompts() {
  std::vector<EPromptSet*> out;
  for (auto& [id, e] : eprompts_) out.push_back(&e);
  return out;
}

void Engine::prepare(const EventStream& validation) {
  for (const auto& e : validation.events) vocab_.intern(e.activity);

  std::map<std::size_t, std::size_t> histogram;
  {
    SlidingWindow scratch(config_.window_size);
    for (const auto& e : validation.events) {
      const auto history = scratch.case_history(e.case_id);
      ++histogram[std::min(history.size(), config_.model.max_len)];
      scratch.push(WindowEntry{e, vocab_.find(e.activity), {}, 0});
    }
  }
  if (histogram.empty()) {
    warnings_.push_back("empty validation split; using evenly spaced buckets");
    buckets_.boundaries = {0};
    const std::size_t rest = config_.buckets - 1;
    for (std::size_t b = 1; b <= rest; ++b)
      buckets_.boundaries.push_back(std::max(buckets_.boundaries.back() + 1, b * config_.model.max_len / rest));
    buckets_.boundaries.back() = std::max(buckets_.boundaries.back(), config_.model.max_len);
  } else {
    auto fit = fit_buckets(histogram, config_.buckets, config_.model.max_len);
    buckets_ = fit.config;
    warnings_.insert(warnings_.end(), fit.warnings.begin(), fit.warnings.end());
  }

  model_.emplace(config_.model, vocab_.size());
  if (uses_g()) gprompt_ = model_->init_gprompt();
  if (uses_e()) {
    active_task_ = next_task_id_++;
    store_.push_back(TaskRecord{active_task_, {}});
    eprompts_.emplace(active_task_, model_->init_eprompts(active_task_, buckets_.count()));
  }

  warm_ = true;
  std::size_t next_drift = 0;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    bool drift = false;
    if (next_drift < validation.drift_indices.size() && validation.drift_indices[next_drift] == i) {
      drift = true;
      ++next_drift;
    }
    process_event(validation.events[i], i, drift);
  }
  warm_ = false;
}

PredictionRecord Engine::process_event(const Event& event, std::size_t index, bool is_drift) {
  if (!model_) throw PreconditionError("engine not prepared");
  const auto started = std::chrono::steady_clock::now();
  current_index_ = index;

  // (1) prefix + bucket from the window as it was before this event.
  const Prefix prefix = build_prefix(event, window_, config_.model.max_len);
  EncodedSample sample;
  sample.tokens = prefix.activities;
  sample.effective_len = prefix.effective_len;
  sample.bucket = assign_bucket(prefix.effective_len, buckets_);

  // (2) test: predict before anything learns from this event.
  PredictionRecord rec;
  rec.index = index;
  rec.case_id = event.case_id;
  rec.y = event.activity;
  rec.task_id = active_task_;
  rec.buffering = mode_ == Mode::Buffering;
  int predicted = 0;
  if (model_->vocab() > 0) {
    PromptContext ctx;
    ctx.g = uses_g() ? &gprompt_ : nullptr;
    ctx.e = uses_e() ? &eprompts_.at(active_task_) : nullptr;
    ctx.bucket = sample.bucket;
    predicted = argmax_activity(model_->forward(sample, ctx, false));
  }
  rec.y_hat = predicted > 0 ? vocab_.label(predicted) : std::string();
  rec.correct = predicted > 0 && rec.y_hat == rec.y;

  auto interned = vocab_.intern(event.activity);
  if (interned.grew) {
    auto eps = all_eprompts();
    model_->grow_vocabulary(vocab_.size(), uses_g() ? &gprompt_ : nullptr, eps);
  }
  sample.target = interned.index;

  // (3)-(4) drift handling and task recognition.
  bool buffered = false;
  if (is_drift) {
    if (uses_e()) {
      mode_ = Mode::Buffering;
      buffer_.emplace(config_.buffer_size);
    }
    if (variant_ == Variant::LastDrift) retained_.clear();
  }
  if (mode_ == Mode::Buffering) {
    buffer_->push(event.case_id, interned.index);
    rec.buffering = true;
    buffered = true;
    if (buffer_->full()) resolve_task();
  }

  // (5) train: window push and periodic update.
  WindowEntry entry{event, interned.index, sample, mode_ == Mode::Buffering ? 0 : active_task_};
  if (variant_ == Variant::LastDrift || variant_ == Variant::Landmark) {
    retained_.push_back(entry);
    if (variant_ == Variant::LastDrift && config_.retention_cap > 0 &&
        retained_.size() > config_.retention_cap)
      retained_.pop_front();
  }
  ++processed_;
  if (window_.push(std::move(entry)) == UpdateSignal::WindowFull) train();

  // (6) fingerprint growth of the active task.
  if (uses_e() && mode_ == Mode::Normal && !buffered)
    grower_.add(record_of(active_task_).tree, event.case_id, interned.index);

  rec.latency_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  return rec;
}

void Engine::resolve_task() {
  const PrefixTree fresh = build_from_buffer(*buffer_);
  const MatchResult match = match_task(fresh, store_, config_.threshold);
  if (match.matched) {
    active_task_ = match.task_id;
  } else {
    active_task_ = next_task_id_++;
    store_.push_back(TaskRecord{active_task_, {}});
    eprompts_.emplace(active_task_, model_->init_eprompts(active_task_, buckets_.count()));
  }
  // Buffered events start (or extend) the task's fingerprint.
  grower_.reset();
  TaskRecord& record = record_of(active_task_);
  for (const auto& item : buffer_->items()) grower_.add(record.tree, item.case_id, item.activity);

  for (auto& e : window_.entries())
    if (e.task_id == 0) e.task_id = active_task_;
  task_events_.push_back(
      TaskEvent{current_index_, warm_ ? "warm" : "eval", match.matched, active_task_, match.dissimilarity});
  mode_ = Mode::Normal;
  buffer_.reset();
}

void Engine::train() {
  Model& model = *model_;
  if (variant_ == Variant::NoPrompt && !frozen_ && processed_ > config_.freeze_after) {
    for (Parameter* p : model.backbone().parameters())
      p->trainable = p == &model.backbone().classifier_w || p == &model.backbone().classifier_b;
    frozen_ = true;
  }

  std::vector<const WindowEntry*> entries;
  const bool use_retained =
      variant_ == Variant::LastDrift ||
      (variant_ == Variant::Landmark && config_.landmark_scope == LandmarkScope::SinceStart);
  if (use_retained) {
    for (const auto& e : retained_) entries.push_back(&e);
  } else {
    for (const auto& e : window_.entries()) entries.push_back(&e);
  }
  if (variant_ == Variant::Landmark) model.reinitialize();
  last_training_size_ = entries.size();
  ++updates_;
  if (entries.empty()) return;

  std::vector<TrainGroup> groups;
  for (auto& bb : partition_batches(entries, config_.batch_size)) {
    TrainGroup group{bb.bucket, {}};
    for (const auto& batch : bb.batches) {
      std::vector<TrainItem> items;
      items.reserve(batch.size());
      for (const WindowEntry* e : batch) {
        EPromptSet* ep = nullptr;
        if (uses_e()) {
          if (e->task_id != 0)
            ep = &eprompts_.at(e->task_id);
          else if (config_.pending == PendingTraining::Skip)
            continue;
          else if (config_.pending == PendingTraining::ActiveTask)
            ep = &eprompts_.at(active_task_);
        }
        items.push_back(TrainItem{&e->sample, ep});
      }
      if (!items.empty()) group.batches.push_back(std::move(items));
    }
    groups.push_back(std::move(group));
  }
  train_window(model, uses_g() ? &gprompt_ : nullptr, groups, config_.epochs, config_.lr);
}

RunReport Engine::run(const EventStream& evaluation) {
  RunReport report;
  report.variant = variant_;
  report.records.reserve(evaluation.size());
  const auto started = std::chrono::steady_clock::now();
  window_.restart_cycle();
  std::size_t next_drift = 0;
  for (std::size_t i = 0; i < evaluation.size(); ++i) {
    bool drift = false;
    if (next_drift < evaluation.drift_indices.size()) {
      if (evaluation.drift_indices[next_drift] < i)
        throw ConfigError("drift indices out of order");
      if (evaluation.drift_indices[next_drift] == i) {
        drift = true;
        ++next_drift;
      }
    }
    PredictionRecord rec = process_event(evaluation.events[i], i, drift);
    rec.label = evaluation.label_at(i);
    report.records.push_back(std::move(rec));
  }
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  report.source = assign_occurrences(report.records);
  if (!report.records.empty()) {
    report.forgetting = forgetting_matrix(report.records, report.source);
    report.average_accuracy = average_accuracy(report.records);
    report.latency = time_per_event(report.records);
  }
  report.buckets = buckets_;
  report.task_events = task_events_;
  for (const auto& r : store_)
    report.task_store.push_back({{"task_id", r.task_id}, {"tree", r.tree.to_json(vocab_)}});
  report.warnings = warnings_;
  return report;
}

RunReport run_strategy(const EventStream& stream, const EngineConfig& config, Variant variant) {
  stream.validate();
  auto [validation, evaluation] = split_validation(stream, config.validation_fraction);
  Engine engine(config, variant);
  engine.prepare(validation);
  return engine.run(evaluation);
}

}  // namespace cnapwp
