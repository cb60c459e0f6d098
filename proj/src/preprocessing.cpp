#include "cnapwp/preprocessing.hpp"

#include <algorithm>

#include "cnapwp/errors.hpp"

namespace cnapwp {

ActivityVocabulary::Interned ActivityVocabulary::intern(const std::string& label) {
  if (auto it = index_.find(label); it != index_.end()) return {it->second, false};
  labels_.push_back(label);
  const int idx = static_cast<int>(labels_.size());
  index_.emplace(label, idx);
  return {idx, true};
}

int ActivityVocabulary::find(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? -1 : it->second;
}

const std::string& ActivityVocabulary::label(int index) const {
  static const std::string pad = "None";
  if (index == kPad) return pad;
  return labels_.at(static_cast<std::size_t>(index - 1));
}

Prefix build_prefix(const std::string& case_id, std::span<const int> history, std::size_t max_len) {
  Prefix p;
  p.case_id = case_id;
  p.activities.assign(max_len, ActivityVocabulary::kPad);
  const std::size_t k = std::min(history.size(), max_len);
  p.effective_len = k;
  std::copy(history.end() - static_cast<std::ptrdiff_t>(k), history.end(),
            p.activities.end() - static_cast<std::ptrdiff_t>(k));
  return p;
}

Matrix EncodedSample::one_hot(std::size_t width) const {
  Matrix m(tokens.size(), width);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (static_cast<std::size_t>(tokens[r]) >= width)
      throw ShapeError("one_hot: token index exceeds width");
    m(r, static_cast<std::size_t>(tokens[r])) = 1.0;
  }
  return m;
}

Encoded encode(const Prefix& prefix, const std::string& target_activity,
               ActivityVocabulary& vocab, const BucketConfig* buckets) {
  Encoded out;
  out.sample.tokens = prefix.activities;
  out.sample.effective_len = prefix.effective_len;
  auto [idx, grew] = vocab.intern(target_activity);
  out.sample.target = idx;
  out.vocab_grew = grew;
  if (buckets) out.sample.bucket = assign_bucket(prefix.effective_len, *buckets);
  return out;
}

BucketFit fit_buckets(const std::map<std::size_t, std::size_t>& length_histogram,
                      std::size_t bucket_count, std::size_t max_len) {
  if (length_histogram.empty()) throw PreconditionError("fit_buckets: empty histogram");
  if (bucket_count < 2) throw PreconditionError("fit_buckets: need at least 2 buckets");

  std::vector<std::pair<std::size_t, std::size_t>> lengths;  // k >= 1 with mass
  double mass = 0.0;
  for (const auto& [k, c] : length_histogram) {
    if (k == 0 || c == 0) continue;
    const std::size_t kk = std::min(k, max_len);
    if (!lengths.empty() && lengths.back().first == kk) lengths.back().second += c;
    else lengths.emplace_back(kk, c);
    mass += static_cast<double>(c);
  }

  BucketFit fit;
  if (lengths.empty()) {
    fit.warnings.push_back("only empty prefixes observed; using a single bucket");
    fit.config.boundaries = {max_len};
    return fit;
  }

  std::size_t non_empty = bucket_count - 1;
  if (non_empty > lengths.size()) {
    fit.warnings.push_back("requested " + std::to_string(bucket_count) + " buckets but only " +
                           std::to_string(lengths.size()) +
                           " distinct prefix lengths; collapsing to one bucket per length");
    non_empty = lengths.size();
  }

  fit.config.boundaries.push_back(0);
  const double share = mass / static_cast<double>(non_empty);
  double cumulative = 0.0;
  std::size_t closed = 0;
  for (std::size_t i = 0; i < lengths.size() && closed + 1 < non_empty; ++i) {
    cumulative += static_cast<double>(lengths[i].second);
    const std::size_t lengths_left = lengths.size() - i - 1;
    const std::size_t buckets_left = non_empty - closed - 1;
    if (cumulative >= share * static_cast<double>(closed + 1) || lengths_left == buckets_left) {
      fit.config.boundaries.push_back(lengths[i].first);
      ++closed;
    }
  }
  if (fit.config.boundaries.back() < max_len)
    fit.config.boundaries.push_back(max_len);
  return fit;
}

int assign_bucket(std::size_t k, const BucketConfig& config) {
  const auto& b = config.boundaries;
  auto it = std::lower_bound(b.begin(), b.end(), k);
  if (it == b.end()) return static_cast<int>(b.size());
  return static_cast<int>(it - b.begin()) + 1;
}

}  // namespace cnapwp
