#include "cnapwp/task_recognition.hpp"

#include <functional>

#include "cnapwp/errors.hpp"

namespace cnapwp {

PrefixTree::PrefixTree() { nodes_.emplace_back(); }

std::size_t PrefixTree::extend(std::size_t node, int activity) {
  auto it = nodes_[node].children.find(activity);
  std::size_t child;
  if (it == nodes_[node].children.end()) {
    child = nodes_.size();
    nodes_[node].children.emplace(activity, child);
    nodes_.push_back(Node{activity, 0, {}});
  } else {
    child = it->second;
  }
  ++nodes_[child].frequency;
  ++event_count_;
  return child;
}

void PrefixTree::insert_case_path(std::span<const int> sequence) {
  if (sequence.empty()) throw PreconditionError("insert_case_path: empty sequence");
  std::size_t at = kRoot;
  for (int a : sequence) at = extend(at, a);
}

nlohmann::json PrefixTree::to_json(const ActivityVocabulary& vocab) const {
  nlohmann::json paths = nlohmann::json::array();
  std::vector<std::string> path;
  std::function<void(std::size_t)> walk = [&](std::size_t i) {
    for (const auto& [activity, child] : nodes_[i].children) {
      path.push_back(vocab.label(activity));
      paths.push_back({{"path", path}, {"frequency", nodes_[child].frequency}});
      walk(child);
      path.pop_back();
    }
  };
  walk(kRoot);
  return {{"event_count", event_count_}, {"paths", std::move(paths)}};
}

PathSet path_set(const PrefixTree& tree) {
  PathSet out;
  std::vector<int> path;
  std::function<void(std::size_t)> walk = [&](std::size_t i) {
    for (const auto& [activity, child] : tree.node(i).children) {
      path.push_back(activity);
      out.insert(path);
      walk(child);
      path.pop_back();
    }
  };
  walk(PrefixTree::kRoot);
  return out;
}

namespace {

std::size_t subtree_size(const PrefixTree& t, std::size_t i) {
  std::size_t n = 1;
  for (const auto& [a, child] : t.node(i).children) n += subtree_size(t, child);
  return n;
}

// Nodes under `fi` (excluding fi) whose root path has no counterpart under `si`.
std::size_t unmatched_below(const PrefixTree& fresh, std::size_t fi, const PrefixTree& stored,
                            std::size_t si) {
  std::size_t missing = 0;
  const auto& stored_children = stored.node(si).children;
  for (const auto& [activity, child] : fresh.node(fi).children) {
    auto it = stored_children.find(activity);
    if (it == stored_children.end())
      missing += subtree_size(fresh, child);
    else
      missing += unmatched_below(fresh, child, stored, it->second);
  }
  return missing;
}

}  // namespace

double dissimilarity(const PrefixTree& fresh, const PrefixTree& stored) {
  if (fresh.empty()) throw PreconditionError("dissimilarity: new tree is empty");
  const auto missing = unmatched_below(fresh, PrefixTree::kRoot, stored, PrefixTree::kRoot);
  return static_cast<double>(missing) / static_cast<double>(fresh.path_count());
}

void TaskBuffer::push(std::string case_id, int activity) {
  if (full()) throw PreconditionError("task buffer is full");
  items_.push_back(Item{std::move(case_id), activity});
}

PrefixTree build_from_buffer(const TaskBuffer& buffer) {
  if (!buffer.full()) throw PreconditionError("build_from_buffer: buffer not full");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<int>> per_case;
  for (const auto& item : buffer.items()) {
    auto [it, inserted] = per_case.try_emplace(item.case_id);
    if (inserted) order.push_back(item.case_id);
    it->second.push_back(item.activity);
  }
  PrefixTree tree;
  for (const auto& c : order) tree.insert_case_path(per_case.at(c));
  return tree;
}

bool FingerprintGrower::add(PrefixTree& tree, const std::string& case_id, int activity) {
  if (tree.event_count() >= cap_) return false;
  auto [it, inserted] = cursor_.try_emplace(case_id, PrefixTree::kRoot);
  it->second = tree.extend(it->second, activity);
  return true;
}

MatchResult match_task(const PrefixTree& fresh, std::span<const TaskRecord> store,
                       double threshold) {
  MatchResult best;
  bool any = false;
  for (const auto& record : store) {
    const double d = dissimilarity(fresh, record.tree);
    if (!any || d < best.dissimilarity ||
        (d == best.dissimilarity && record.task_id < best.task_id)) {
      best.dissimilarity = d;
      best.task_id = record.task_id;
      any = true;
    }
  }
  best.matched = any && best.dissimilarity < threshold;
  return best;
}

}  // namespace cnapwp
