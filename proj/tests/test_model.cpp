#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cnapwp/errors.hpp"
#include "cnapwp/model.hpp"
#include "support/oracles.hpp"

using namespace cnapwp;

namespace {

ModelConfig small_config(std::size_t prompt_len = 2) {
  ModelConfig c;
  c.max_len = 4;
  c.layers = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.prompt_len = prompt_len;
  c.seed = 7;
  return c;
}

EncodedSample random_sample(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab, int buckets = 3) {
  EncodedSample s;
  s.effective_len = rng() % (max_len + 1);
  s.tokens.assign(max_len, 0);
  for (std::size_t r = max_len - s.effective_len; r < max_len; ++r) s.tokens[r] = 1 + static_cast<int>(rng() % vocab);
  s.target = 1 + static_cast<int>(rng() % vocab);
  s.bucket = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(buckets));
  return s;
}

std::vector<Matrix> snapshot(const std::vector<PromptBlock>& blocks) {
  std::vector<Matrix> out;
  for (const auto& b : blocks) {
    out.push_back(b.key.value);
    out.push_back(b.value.value);
  }
  return out;
}

}  // namespace

TEST(CrossEntropy, AnalyticValues) {
  std::vector<double> sure{0.0, 1.0};
  EXPECT_EQ(cross_entropy(sure, 2), 0.0);
  std::vector<double> uniform(4, 0.25);
  EXPECT_NEAR(cross_entropy(uniform, 3), std::log(4.0), 1e-15);
  std::vector<double> tenth{0.1, 0.9};
  EXPECT_NEAR(cross_entropy(tenth, 1), 2.302585092994046, 1e-12);
  std::vector<double> zero{0.0, 1.0};
  EXPECT_NEAR(cross_entropy(zero, 1), -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy(uniform, 5), std::out_of_range);
  EXPECT_THROW(cross_entropy(uniform, 0), std::out_of_range);
}

TEST(Argmax, LowestIndexWinsTies) {
  std::vector<double> p{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax_activity(p), 2);
  EXPECT_EQ(argmax_activity(std::vector<double>{}), 0);
}

TEST(AttachPrefix, Shapes) {
  Matrix keys(8, 4, 1.0), values(8, 4, 2.0);
  auto [k0, v0] = attach_prefix(Matrix(0, 4), Matrix(0, 4), keys, values);
  EXPECT_EQ(k0, keys);
  EXPECT_EQ(v0, values);
  auto [k5, v5] = attach_prefix(Matrix(5, 4, 3.0), Matrix(5, 4, 4.0), keys, values);
  EXPECT_EQ(k5.rows(), 13u);
  EXPECT_EQ(k5(0, 0), 3.0);
  EXPECT_EQ(k5(5, 0), 1.0);
  EXPECT_EQ(v5(12, 3), 2.0);
  EXPECT_THROW(attach_prefix(Matrix(5, 3), Matrix(5, 3), keys, values), ShapeError);
}

TEST(Forward, ValidDistributions) {
  std::mt19937_64 rng(1);
  ModelConfig c = small_config();
  c.max_len = 8;
  Model m(c, 6);
  auto g = m.init_gprompt();
  auto e = m.init_eprompts(1, 3);
  for (int i = 0; i < 10000; ++i) {
    auto s = random_sample(rng, c.max_len, 6);
    auto p = m.forward(s, {&g, &e, s.bucket}, false);
    ASSERT_EQ(p.size(), 6u);
    double sum = 0;
    for (double x : p) {
      ASSERT_GE(x, 0.0);
      sum += x;
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, AllPadPrefixIsFinite) {
  Model m(small_config(), 5);
  EncodedSample s;
  s.tokens.assign(4, 0);
  s.target = 1;
  auto p = m.forward(s, {}, false);
  for (double x : p) EXPECT_TRUE(std::isfinite(x));
}

TEST(Forward, EvalModeIsDeterministic) {
  ModelConfig c = small_config();
  c.dropout = 0.3;
  Model m(c, 5);
  auto g = m.init_gprompt();
  std::mt19937_64 rng(3);
  auto s = random_sample(rng, 4, 5);
  auto a = m.forward(s, {&g, nullptr, 1}, false);
  auto b = m.forward(s, {&g, nullptr, 1}, false);
  EXPECT_EQ(a, b);
  auto t1 = m.forward(s, {&g, nullptr, 1}, true);
  auto t2 = m.forward(s, {&g, nullptr, 1}, true);
  EXPECT_NE(t1, t2);
}

TEST(Forward, OutputLengthMatchesInput) {
  std::mt19937_64 rng(9);
  for (PromptMode mode : {PromptMode::Prefix, PromptMode::Prompt}) {
    for (std::size_t lp : {0u, 1u, 5u, 16u}) {
      ModelConfig c = small_config(lp);
      c.max_len = 8;
      c.mode = mode;
      Model m(c, 5);
      auto g = m.init_gprompt();
      auto e = m.init_eprompts(1, 3);
      auto s = random_sample(rng, 8, 5);
      ForwardCache cache;
      auto with = m.forward(s, {&g, &e, s.bucket}, false, &cache);
      EXPECT_EQ(Model::output_lengths(cache), (std::vector<std::size_t>{8, 8}));
      if (lp == 0) EXPECT_EQ(with, m.forward(s, {}, false));
      else EXPECT_NE(with, m.forward(s, {}, false));
    }
  }
}

TEST(Forward, PromptModesAgreeWithoutPrompts) {
  std::mt19937_64 rng(12);
  ModelConfig c = small_config(0);
  Model prefix(c, 5);
  c.mode = PromptMode::Prompt;
  Model prompt(c, 5);
  for (int i = 0; i < 20; ++i) {
    auto s = random_sample(rng, 4, 5);
    EXPECT_EQ(prefix.forward(s, {}, false), prompt.forward(s, {}, false));
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 6; ++trial) {
    ModelConfig c = small_config(rng() % 3);
    c.layers = 1 + rng() % 2;
    c.max_len = 2 + rng() % 3;
    c.e_layers = {c.layers - 1};
    c.mode = trial % 2 ? PromptMode::Prompt : PromptMode::Prefix;
    c.seed = rng();
    auto r = oracle::finite_difference_check(c, 3 + rng() % 4, rng(), 30);
    EXPECT_GT(r.coordinates, 0u);
    EXPECT_LE(r.worst_relative, 1e-4) << r.worst_parameter;
  }
}

TEST(Backward, InactivePromptsGetNoGradient) {
  std::mt19937_64 rng(5);
  Model m(small_config(), 5);
  auto g = m.init_gprompt();
  auto e1 = m.init_eprompts(1, 3);
  auto e2 = m.init_eprompts(2, 3);
  auto s = random_sample(rng, 4, 5);
  s.bucket = 2;
  ForwardCache cache;
  m.forward(s, {&g, &e1, 2}, false, &cache);
  m.backward(cache, s.target);
  for (int b : {1, 3})
    for (auto& blk : e1.bucket(b)) {
      EXPECT_EQ(blk.key.grad, Matrix(blk.key.grad.rows(), blk.key.grad.cols()));
      EXPECT_EQ(blk.value.grad, Matrix(blk.value.grad.rows(), blk.value.grad.cols()));
    }
  for (auto* p : prompt_parameters(e2)) EXPECT_EQ(p->grad, Matrix(p->grad.rows(), p->grad.cols()));
  double touched = 0;
  for (auto& blk : e1.bucket(2)) touched += std::abs(blk.key.grad.data()[0]) + std::abs(blk.value.grad.data()[0]);
  EXPECT_GT(touched, 0.0);
}

TEST(Backward, ConfidentCorrectPredictionHasVanishingClassifierGradient) {
  Model m(small_config(0), 2);
  auto& bb = m.backbone();
  bb.classifier_w.value.fill(0.0);
  bb.classifier_b.value(0, 0) = 60.0;
  EncodedSample s;
  s.tokens = {0, 0, 1, 2};
  s.effective_len = 2;
  s.target = 1;
  ForwardCache cache;
  m.forward(s, {}, false, &cache);
  m.backward(cache, 1);
  EXPECT_LT(std::abs(bb.classifier_b.grad(0, 0)), 1e-20);
}

TEST(Sgd, Arithmetic) {
  Parameter w("w", Matrix(1, 1, 1.0));
  w.grad(0, 0) = 2.0;
  std::vector<Parameter*> ps{&w};
  sgd_step(ps, 0.01);
  EXPECT_DOUBLE_EQ(w.value(0, 0), 0.98);
  EXPECT_EQ(w.grad(0, 0), 0.0);

  Parameter z("z", Matrix(2, 2, 3.0));
  z.grad.fill(5.0);
  std::vector<Parameter*> zs{&z};
  sgd_step(zs, 0.0);
  EXPECT_EQ(z.value, Matrix(2, 2, 3.0));

  Parameter frozen("f", Matrix(1, 1, 1.0));
  frozen.trainable = false;
  frozen.grad(0, 0) = 1.0;
  std::vector<Parameter*> fs{&frozen};
  sgd_step(fs, 0.5);
  EXPECT_EQ(frozen.value(0, 0), 1.0);
}

TEST(TrainWindow, TrainsOnlyTheBatchBucket) {
  std::mt19937_64 rng(31);
  Model m(small_config(), 5);
  auto g = m.init_gprompt();
  auto e = m.init_eprompts(1, 3);
  auto other = m.init_eprompts(2, 3);
  std::vector<EncodedSample> samples;
  for (int i = 0; i < 10; ++i) {
    samples.push_back(random_sample(rng, 4, 5));
    samples.back().bucket = 2;
  }
  TrainGroup group{2, {{}}};
  for (const auto& s : samples) group.batches[0].push_back({&s, &e});

  const auto b1 = snapshot(e.bucket(1)), b2 = snapshot(e.bucket(2)), b3 = snapshot(e.bucket(3));
  const auto task = snapshot(e.task);
  const auto foreign = snapshot(other.bucket(2));
  const auto gp = snapshot(g.blocks);
  std::vector<TrainGroup> groups{group};
  train_window(m, &g, groups, 1, 0.01);
  EXPECT_EQ(snapshot(e.bucket(1)), b1);
  EXPECT_EQ(snapshot(e.bucket(3)), b3);
  EXPECT_EQ(snapshot(other.bucket(2)), foreign);
  EXPECT_NE(snapshot(e.bucket(2)), b2);
  EXPECT_NE(snapshot(e.task), task);
  EXPECT_NE(snapshot(g.blocks), gp);
}

TEST(TrainWindow, EmptyIsNoOp) {
  Model m(small_config(), 5);
  const auto before = m.backbone().classifier_w.value;
  std::vector<TrainGroup> none;
  EXPECT_EQ(train_window(m, nullptr, none, 10, 0.01), 0.0);
  EXPECT_EQ(m.backbone().classifier_w.value, before);
}

TEST(TrainWindow, LossDecreasesOnToyProblem) {
  ModelConfig c = small_config(0);
  c.layers = 1;
  c.e_layers = {0};
  Model m(c, 2);
  // Two classes decided by the last token.
  std::vector<EncodedSample> samples;
  for (int i = 0; i < 20; ++i) {
    EncodedSample s;
    s.tokens = {0, 0, 1, 1 + i % 2};
    s.effective_len = 2;
    s.target = 1 + i % 2;
    samples.push_back(s);
  }
  const auto loss = [&] {
    double total = 0;
    for (const auto& s : samples) total += cross_entropy(m.forward(s, {}, false), s.target);
    return total / static_cast<double>(samples.size());
  };
  TrainGroup group{1, {{}}};
  for (const auto& s : samples) group.batches[0].push_back({&s, nullptr});
  std::vector<TrainGroup> groups{group};
  double prev = loss();
  for (int step = 0; step < 5; ++step) {
    train_window(m, nullptr, groups, 1, 0.01);
    const double now = loss();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Prompts, InitIsDeterministicPerTask) {
  Model m(small_config(), 5);
  auto a = m.init_eprompts(1, 4);
  auto b = m.init_eprompts(1, 4);
  auto c = m.init_eprompts(2, 4);
  EXPECT_EQ(a.buckets.size(), 4u);
  EXPECT_EQ(a.task.size(), 1u);
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(snapshot(a.bucket(k)), snapshot(b.bucket(k)));
  EXPECT_NE(snapshot(a.task), snapshot(c.task));
  for (auto* p : prompt_parameters(a))
    for (double x : p->value.data()) {
      EXPECT_LE(std::abs(x), 0.1);
    }
  EXPECT_EQ(a.task[0].key.value.rows(), 2u);
  EXPECT_EQ(a.task[0].key.value.cols(), m.width());
}

TEST(Model, ReinitializeIsBitExact) {
  Model m(small_config(), 5);
  const auto fresh = m.backbone().dense_w.value;
  m.backbone().dense_w.value.fill(0.5);
  m.reinitialize();
  EXPECT_EQ(m.backbone().dense_w.value, fresh);
}

TEST(GrowVocabulary, OldOutputsUnchanged) {
  std::mt19937_64 rng(17);
  Model m(small_config(), 5);
  auto g = m.init_gprompt();
  auto e = m.init_eprompts(1, 3);
  std::vector<EncodedSample> samples;
  std::vector<std::vector<double>> before;
  ForwardCache cache;
  for (int i = 0; i < 20; ++i) {
    samples.push_back(random_sample(rng, 4, 5));
    m.forward(samples.back(), {&g, &e, samples.back().bucket}, false, &cache);
    before.push_back(cache.probabilities);
  }
  // Capture logits-equivalent: ratios of old classes survive a zero-logit extension.
  std::vector<EPromptSet*> es{&e};
  m.grow_vocabulary(6, &g, es);
  EXPECT_EQ(m.vocab(), 6u);
  EXPECT_EQ(m.backbone().classifier_b.value(0, 5), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto p = m.forward(samples[i], {&g, &e, samples[i].bucket}, false);
    ASSERT_EQ(p.size(), 6u);
    for (std::size_t k = 1; k < 5; ++k)
      EXPECT_NEAR(p[k] / p[0], before[i][k] / before[i][0], 1e-12 * before[i][k] / before[i][0]);
  }
  EXPECT_THROW(m.grow_vocabulary(4, &g, es), PreconditionError);
}

TEST(GrowVocabulary, StepwiseEqualsDirect) {
  for (std::size_t target : {7u, 9u}) {
    Model a(small_config(), 5), b(small_config(), 5);
    auto ga = a.init_gprompt(), gb = b.init_gprompt();
    auto ea = a.init_eprompts(1, 3), eb = b.init_eprompts(1, 3);
    std::vector<EPromptSet*> sa{&ea}, sb{&eb};
    for (std::size_t v = 6; v <= target; ++v) a.grow_vocabulary(v, &ga, sa);
    b.grow_vocabulary(target, &gb, sb);
    ASSERT_EQ(a.width(), b.width());
    auto pa = a.backbone().parameters();
    auto pb = b.backbone().parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    EXPECT_EQ(snapshot(ga.blocks), snapshot(gb.blocks));
    EXPECT_EQ(snapshot(ea.bucket(2)), snapshot(eb.bucket(2)));
  }
}

TEST(GrowVocabulary, WidthGrowthKeepsOutputs) {
  // 5 -> 8 activities crosses a head-multiple boundary and widens d.
  std::mt19937_64 rng(40);
  Model m(small_config(), 5);
  const std::size_t d0 = m.width();
  auto g = m.init_gprompt();
  auto e = m.init_eprompts(1, 3);
  auto s = random_sample(rng, 4, 5);
  auto before = m.forward(s, {&g, &e, s.bucket}, false);
  std::vector<EPromptSet*> es{&e};
  m.grow_vocabulary(8, &g, es);
  EXPECT_GT(m.width(), d0);
  auto after = m.forward(s, {&g, &e, s.bucket}, false);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_NEAR(after[k] / after[0], before[k] / before[0], 1e-10);
}

TEST(Checkpoint, RoundTrip) {
  Model m(small_config(), 5);
  auto g = m.init_gprompt();
  std::map<int, EPromptSet> es;
  es.emplace(1, m.init_eprompts(1, 2));
  std::stringstream buf;
  save_checkpoint(buf, m, &g, es);
  EXPECT_EQ(buf.str().rfind("CNAPWP1\n", 0), 0u);
  auto ck = load_checkpoint(buf);
  EXPECT_EQ(ck.width, m.width());
  EXPECT_EQ(ck.vocab, 5u);
  EXPECT_EQ(ck.tensors.at("dense.weight"), m.backbone().dense_w.value);
  EXPECT_EQ(ck.tensors.at("g.0.key"), g.blocks[0].key.value);
  EXPECT_EQ(ck.tensors.at("e.1.bucket2.0.value"), es.at(1).bucket(2)[0].value.value);
  std::istringstream bad("CNAPWP0\n");
  EXPECT_THROW(load_checkpoint(bad), ParseError);
}
