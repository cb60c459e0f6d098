#include "cnapwp/window.hpp"

#include <map>

#include "cnapwp/errors.hpp"

namespace cnapwp {

SlidingWindow::SlidingWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("window capacity must be positive");
}

UpdateSignal SlidingWindow::push(WindowEntry entry) {
  by_case_[entry.event.case_id].push_back(entry.activity);
  buffer_.push_back(std::move(entry));
  if (buffer_.size() > capacity_) {
    const WindowEntry& old = buffer_.front();
    auto it = by_case_.find(old.event.case_id);
    it->second.pop_front();
    if (it->second.empty()) by_case_.erase(it);
    buffer_.pop_front();
  }
  if (++since_update_ == capacity_) {
    since_update_ = 0;
    return UpdateSignal::WindowFull;
  }
  return UpdateSignal::None;
}

std::vector<int> SlidingWindow::case_history(const std::string& case_id) const {
  auto it = by_case_.find(case_id);
  if (it == by_case_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

Prefix build_prefix(const Event& event, const SlidingWindow& window, std::size_t max_len) {
  return build_prefix(event.case_id, window.case_history(event.case_id), max_len);
}

std::vector<BucketBatches> partition_batches(std::span<const WindowEntry* const> entries,
                                             std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::map<int, std::vector<const WindowEntry*>> groups;
  for (const WindowEntry* e : entries) groups[e->sample.bucket].push_back(e);

  std::vector<BucketBatches> out;
  for (auto& [bucket, members] : groups) {
    BucketBatches bb{bucket, {}};
    for (std::size_t i = 0; i < members.size(); i += batch_size) {
      const std::size_t end = std::min(members.size(), i + batch_size);
      bb.batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(i),
                              members.begin() + static_cast<std::ptrdiff_t>(end));
    }
    out.push_back(std::move(bb));
  }
  return out;
}

std::vector<BucketBatches> partition_batches(const SlidingWindow& window, std::size_t batch_size) {
  std::vector<const WindowEntry*> ptrs;
  ptrs.reserve(window.size());
  for (const auto& e : window.entries()) ptrs.push_back(&e);
  return partition_batches(ptrs, batch_size);
}

}  // namespace cnapwp
