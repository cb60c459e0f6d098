#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cnapwp/preprocessing.hpp"
#include "cnapwp/stream.hpp"

namespace cnapwp {

/// A window entry: the raw event, its encoded sample and the task whose
/// E-Prompt trains on it (0 while the task is still being recognized).
struct WindowEntry {
  Event event;
  int activity = 0;
  EncodedSample sample;
  int task_id = 0;
};

enum class UpdateSignal { None, WindowFull };

/// Fixed-capacity FIFO over the most recent events. Keeps a per-case index
/// of in-window activities so prefixes are built without scanning.
class SlidingWindow {
public:
  explicit SlidingWindow(std::size_t capacity);

  /// Appends, evicting the oldest entry when over capacity. Returns
  /// WindowFull every `capacity` pushes.
  UpdateSignal push(WindowEntry entry);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return buffer_.size(); }
  bool empty() const noexcept { return buffer_.empty(); }
  std::size_t events_since_update() const noexcept { return since_update_; }
  /// Starts a new update cycle; contents are kept.
  void restart_cycle() noexcept { since_update_ = 0; }

  const std::deque<WindowEntry>& entries() const noexcept { return buffer_; }
  std::deque<WindowEntry>& entries() noexcept { return buffer_; }

  /// In-window activity indices of `case_id`, oldest first.
  std::vector<int> case_history(const std::string& case_id) const;

private:
  std::size_t capacity_;
  std::size_t since_update_ = 0;
  std::deque<WindowEntry> buffer_;
  std::unordered_map<std::string, std::deque<int>> by_case_;
};

/// Prefix for `event` from the case's history in `window`.
Prefix build_prefix(const Event& event, const SlidingWindow& window, std::size_t max_len);

struct BucketBatches {
  int bucket;
  std::vector<std::vector<const WindowEntry*>> batches;
};

/// Groups samples by bucket (ascending id) and chunks each group into
/// batches of at most `batch_size`, preserving arrival order.
std::vector<BucketBatches> partition_batches(std::span<const WindowEntry* const> entries,
                                             std::size_t batch_size);
std::vector<BucketBatches> partition_batches(const SlidingWindow& window, std::size_t batch_size);

}  // namespace cnapwp
