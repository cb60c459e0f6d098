#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnapwp/preprocessing.hpp"

namespace cnapwp {

/// Trie over case activity sequences. Node 0 is the root sentinel; every
/// other node counts how many inserted paths passed through it.
class PrefixTree {
public:
  struct Node {
    int activity = 0;
    std::size_t frequency = 0;
    std::map<int, std::size_t> children;
  };

  PrefixTree();

  static constexpr std::size_t kRoot = 0;

  /// Walks/creates the root path labeled by `sequence`, bumping each node.
  void insert_case_path(std::span<const int> sequence);

  /// Extends the path ending at `node` by one activity and returns the
  /// child. Counts as one inserted event.
  std::size_t extend(std::size_t node, int activity);

  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  /// Non-root node count, which equals the number of distinct root paths.
  std::size_t path_count() const noexcept { return nodes_.size() - 1; }
  std::size_t event_count() const noexcept { return event_count_; }
  bool empty() const noexcept { return nodes_.size() == 1; }

  /// Label paths with frequencies, for run reports.
  nlohmann::json to_json(const ActivityVocabulary& vocab) const;

private:
  std::vector<Node> nodes_;
  std::size_t event_count_ = 0;
};

using PathSet = std::set<std::vector<int>>;

/// Every non-empty root path of the tree.
PathSet path_set(const PrefixTree& tree);

/// Fraction of `fresh`'s root paths that do not occur in `stored`.
/// Throws PreconditionError when `fresh` is empty.
double dissimilarity(const PrefixTree& fresh, const PrefixTree& stored);

/// Events collected right after a drift, before the task is resolved.
class TaskBuffer {
public:
  struct Item {
    std::string case_id;
    int activity;
  };

  explicit TaskBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(std::string case_id, int activity);
  bool full() const noexcept { return items_.size() >= capacity_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return items_.size(); }
  const std::vector<Item>& items() const noexcept { return items_; }

private:
  std::size_t capacity_;
  std::vector<Item> items_;
};

/// Inserts each buffered case's activity sequence (arrival order) as one
/// path. Requires a full buffer.
PrefixTree build_from_buffer(const TaskBuffer& buffer);

/// Grows a task fingerprint one event at a time, remembering where each
/// case's path currently ends. Growth stops at `cap` events.
class FingerprintGrower {
public:
  explicit FingerprintGrower(std::size_t cap) : cap_(cap) {}

  /// Returns false once the tree has reached the cap.
  bool add(PrefixTree& tree, const std::string& case_id, int activity);
  void reset() { cursor_.clear(); }
  std::size_t cap() const noexcept { return cap_; }

private:
  std::size_t cap_;
  std::unordered_map<std::string, std::size_t> cursor_;
};

struct TaskRecord {
  int task_id = 0;
  PrefixTree tree;
};

struct MatchResult {
  bool matched = false;
  int task_id = 0;
  /// Minimum dissimilarity found (1.0 when the store is empty).
  double dissimilarity = 1.0;
};

/// Matches when the smallest dissimilarity is strictly below `threshold`;
/// ties resolve to the lowest task id.
MatchResult match_task(const PrefixTree& fresh, std::span<const TaskRecord> store,
                       double threshold);

}  // namespace cnapwp
