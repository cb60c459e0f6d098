#include <gtest/gtest.h>

#include <functional>
#include <limits>
#include <random>

#include "cnapwp/errors.hpp"
#include "cnapwp/preprocessing.hpp"
#include "cnapwp/window.hpp"
#include "support/oracles.hpp"

using namespace cnapwp;

TEST(Vocabulary, InternsInOrder) {
  ActivityVocabulary v;
  EXPECT_EQ(v.intern("A").index, 1);
  EXPECT_TRUE(v.intern("B").grew);
  auto again = v.intern("A");
  EXPECT_EQ(again.index, 1);
  EXPECT_FALSE(again.grew);
  EXPECT_EQ(v.find("B"), 2);
  EXPECT_EQ(v.find("Z"), -1);
  EXPECT_EQ(v.label(2), "B");
  EXPECT_EQ(v.size(), 2u);
}

TEST(Vocabulary, IndicesNeverChange) {
  std::mt19937_64 rng(3);
  std::vector<std::string> seq;
  for (int i = 0; i < 1000; ++i) seq.push_back("act" + std::to_string(rng() % 60));
  ActivityVocabulary v;
  std::vector<int> first, second;
  for (const auto& s : seq) first.push_back(v.intern(s).index);
  for (const auto& s : seq) second.push_back(v.intern(s).index);
  EXPECT_EQ(first, second);
  for (int i : first) EXPECT_GT(i, ActivityVocabulary::kPad);
}

TEST(BuildPrefix, PadsOnTheLeft) {
  std::vector<int> hist{1, 2};
  auto p = build_prefix("c", hist, 4);
  EXPECT_EQ(p.activities, (std::vector<int>{0, 0, 1, 2}));
  EXPECT_EQ(p.effective_len, 2u);

  auto fresh = build_prefix("n", std::vector<int>{}, 4);
  EXPECT_EQ(fresh.activities, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(fresh.effective_len, 0u);

  std::vector<int> six{1, 2, 3, 4, 5, 6};
  auto longp = build_prefix("l", six, 4);
  EXPECT_EQ(longp.activities, (std::vector<int>{3, 4, 5, 6}));
  EXPECT_EQ(longp.effective_len, 4u);
}

TEST(BuildPrefix, MatchesReplayOracle) {
  std::mt19937_64 rng(11);
  for (std::size_t window : {5u, 40u, 250u}) {
    std::vector<std::pair<std::string, int>> events;
    for (int i = 0; i < 2000; ++i)
      events.emplace_back("c" + std::to_string(rng() % 17), static_cast<int>(1 + rng() % 9));
    const std::size_t max_len = 4;
    auto expected = oracle::replay_prefixes(events, window, max_len);

    SlidingWindow w(window);
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event e{events[i].first, "x", {}, {}};
      auto p = build_prefix(e, w, max_len);
      ASSERT_EQ(p.effective_len, expected[i].size()) << "event " << i;
      std::vector<int> tail(p.activities.end() - static_cast<std::ptrdiff_t>(p.effective_len), p.activities.end());
      ASSERT_EQ(tail, expected[i]) << "event " << i;
      for (std::size_t r = 0; r < max_len - p.effective_len; ++r) ASSERT_EQ(p.activities[r], 0);
      WindowEntry entry;
      entry.event = e;
      entry.activity = events[i].second;
      w.push(std::move(entry));
    }
  }
}

TEST(Encode, OneHotRows) {
  ActivityVocabulary v;
  v.intern("A");
  v.intern("B");
  Prefix p{"c", {0, 1}, 1};
  auto enc = encode(p, "B", v);
  EXPECT_EQ(enc.sample.target, 2);
  EXPECT_FALSE(enc.vocab_grew);
  Matrix m = enc.sample.one_hot(3);
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(1, 1), 1.0);
  double total = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double row = 0;
    for (double x : m.row(r)) row += x;
    EXPECT_EQ(row, 1.0);
    total += row;
  }
  EXPECT_EQ(total, 2.0);
}

TEST(Encode, UnseenTargetGrowsVocabulary) {
  ActivityVocabulary v;
  v.intern("A");
  v.intern("B");
  auto enc = encode(Prefix{"c", {0, 0}, 0}, "C", v);
  EXPECT_TRUE(enc.vocab_grew);
  EXPECT_EQ(enc.sample.target, 3);
  EXPECT_EQ(v.size(), 3u);
  Matrix m = enc.sample.one_hot(4);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(m(r, 0), 1.0);
  EXPECT_THROW(enc.sample.one_hot(0), ShapeError);
}

TEST(Encode, AssignsBucket) {
  ActivityVocabulary v;
  BucketConfig b{{0, 3, 6, 8}};
  auto enc = encode(Prefix{"c", {0, 0, 0, 0, 0, 1, 1, 1}, 3}, "A", v, &b);
  EXPECT_EQ(enc.sample.bucket, 2);
}

TEST(AssignBucket, Rules) {
  BucketConfig b{{0, 3, 6, 8}};
  EXPECT_EQ(assign_bucket(0, b), 1);
  EXPECT_EQ(assign_bucket(2, b), 2);
  EXPECT_EQ(assign_bucket(3, b), 2);
  EXPECT_EQ(assign_bucket(4, b), 3);
  EXPECT_EQ(assign_bucket(8, b), 4);
  EXPECT_EQ(assign_bucket(50, b), 4);
}

namespace {

using Histogram = std::map<std::size_t, std::size_t>;

double max_deviation(const Histogram& h, const std::vector<std::size_t>& bounds) {
  // Deviation of each non-empty bucket's mass from the ideal share.
  double mass = 0;
  for (auto [k, c] : h)
    if (k > 0) mass += static_cast<double>(c);
  const double share = mass / static_cast<double>(bounds.size() - 1);
  double worst = 0;
  for (std::size_t b = 1; b < bounds.size(); ++b) {
    double m = 0;
    for (auto [k, c] : h)
      if (k > bounds[b - 1] && k <= bounds[b]) m += static_cast<double>(c);
    worst = std::max(worst, std::abs(m - share));
  }
  return worst;
}

// Every way to cut lengths 1..max_len into `parts` contiguous groups.
double best_deviation(const Histogram& h, std::size_t parts, std::size_t max_len) {
  std::vector<std::size_t> ks;
  for (auto [k, c] : h)
    if (k > 0) ks.push_back(k);
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> cut;
  std::function<void(std::size_t)> rec = [&](std::size_t from) {
    if (cut.size() + 1 == parts) {
      std::vector<std::size_t> bounds{0};
      bounds.insert(bounds.end(), cut.begin(), cut.end());
      bounds.push_back(max_len);
      best = std::min(best, max_deviation(h, bounds));
      return;
    }
    for (std::size_t i = from; i + 1 < ks.size(); ++i) {
      cut.push_back(ks[i]);
      rec(i + 1);
      cut.pop_back();
    }
  };
  rec(0);
  return best;
}

}  // namespace

TEST(FitBuckets, UniformExampleIsOptimal) {
  Histogram h{{0, 10}, {1, 10}, {2, 10}, {3, 10}};
  auto fit = fit_buckets(h, 3, 3);
  EXPECT_TRUE(fit.warnings.empty());
  ASSERT_EQ(fit.config.count(), 3u);
  EXPECT_EQ(fit.config.boundaries.front(), 0u);
  EXPECT_EQ(fit.config.boundaries.back(), 3u);
  EXPECT_EQ(max_deviation(h, fit.config.boundaries), best_deviation(h, 2, 3));
}

TEST(FitBuckets, TwoBucketsSplitEmptyFromRest) {
  auto fit = fit_buckets({{0, 4}, {1, 3}, {5, 9}}, 2, 8);
  EXPECT_EQ(fit.config.boundaries, (std::vector<std::size_t>{0, 8}));
}

TEST(FitBuckets, DegenerateInputs) {
  auto only_empty = fit_buckets({{0, 10}}, 4, 8);
  EXPECT_EQ(only_empty.config.count(), 1u);
  EXPECT_FALSE(only_empty.warnings.empty());

  auto collapsed = fit_buckets({{0, 5}, {2, 5}, {7, 5}}, 6, 8);
  EXPECT_FALSE(collapsed.warnings.empty());
  EXPECT_EQ(collapsed.config.boundaries, (std::vector<std::size_t>{0, 2, 8}));

  EXPECT_THROW(fit_buckets({}, 3, 8), PreconditionError);
  EXPECT_THROW(fit_buckets({{0, 1}}, 1, 8), PreconditionError);
}

TEST(FitBuckets, GreedyStaysNearOptimum) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t max_len = 8;
    Histogram h{{0, 1 + rng() % 50}};
    std::size_t heaviest = 0;
    for (std::size_t k = 1; k <= max_len; ++k)
      if (rng() % 4) {
        h[k] = 1 + rng() % 40;
        heaviest = std::max(heaviest, h[k]);
      }
    if (h.size() < 2) continue;
    const std::size_t buckets = 2 + rng() % 3;
    auto fit = fit_buckets(h, buckets, max_len);
    const auto& b = fit.config.boundaries;
    // Structure: {0} first, strictly increasing, ending at max_len.
    ASSERT_EQ(b.front(), 0u);
    ASSERT_EQ(b.back(), max_len);
    for (std::size_t i = 1; i < b.size(); ++i) ASSERT_LT(b[i - 1], b[i]);
    const std::size_t parts = std::min(buckets - 1, h.size() - 1);
    ASSERT_EQ(b.size(), parts + 1);
    // Greedy cuts at most one bin past the ideal share.
    EXPECT_LE(max_deviation(h, b), best_deviation(h, parts, max_len) + static_cast<double>(heaviest));
    // Total function over [0, max_len].
    for (std::size_t k = 0; k <= max_len; ++k) {
      const int id = assign_bucket(k, fit.config);
      ASSERT_GE(id, 1);
      ASSERT_LE(id, static_cast<int>(b.size()));
      ASSERT_LE(k, b[static_cast<std::size_t>(id - 1)]);
    }
  }
}
