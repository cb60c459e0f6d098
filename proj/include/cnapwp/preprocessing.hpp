#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cnapwp/tensor.hpp"

namespace cnapwp {

/// Insertion-ordered activity labels. Index 0 is the padding token; real
/// activities receive 1, 2, ... and keep their index for the whole run.
class ActivityVocabulary {
public:
  static constexpr int kPad = 0;

  struct Interned {
    int index;
    bool grew;
  };

  Interned intern(const std::string& label);
  /// Index of a known label, or -1.
  int find(const std::string& label) const;
  const std::string& label(int index) const;

  /// Number of real activities |V| (the padding token is not counted).
  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

/// Left-padded activity prefix; the last `effective_len` slots are real.
struct Prefix {
  std::string case_id;
  std::vector<int> activities;
  std::size_t effective_len = 0;
};

/// Prefix of the case's in-window history `history` (oldest first), keeping
/// the most recent `max_len` activities.
Prefix build_prefix(const std::string& case_id, std::span<const int> history, std::size_t max_len);

/// Bucket ids are 1-based; bucket 1 holds exactly the empty prefixes.
struct BucketConfig {
  /// Inclusive upper prefix-length bound per bucket, strictly increasing.
  std::vector<std::size_t> boundaries;

  std::size_t count() const noexcept { return boundaries.size(); }
};

struct EncodedSample {
  /// Activity indices of the padded prefix (length max_len).
  std::vector<int> tokens;
  std::size_t effective_len = 0;
  /// Ordinal target in [1, |V|].
  int target = 0;
  int bucket = 1;

  /// One-hot input of shape [max_len, width]; width >= |V|+1.
  Matrix one_hot(std::size_t width) const;
};

struct Encoded {
  EncodedSample sample;
  /// True when the target label was unseen and got interned.
  bool vocab_grew = false;
};

Encoded encode(const Prefix& prefix, const std::string& target_activity,
               ActivityVocabulary& vocab, const BucketConfig* buckets = nullptr);

struct BucketFit {
  BucketConfig config;
  std::vector<std::string> warnings;
};

/// Bucket 1 = {k = 0}; the remaining buckets cut k >= 1 greedily, closing a
/// bucket as soon as the cumulative mass reaches the next multiple of the
/// ideal per-bucket share. The last bound is always `max_len`.
BucketFit fit_buckets(const std::map<std::size_t, std::size_t>& length_histogram,
                      std::size_t bucket_count, std::size_t max_len);

/// Smallest bucket whose upper bound is >= k; longer prefixes clamp to the
/// last bucket.
int assign_bucket(std::size_t k, const BucketConfig& config);

}  // namespace cnapwp
