#include <gtest/gtest.h>

#include <set>

#include "cnapwp/engine.hpp"
#include "cnapwp/errors.hpp"
#include "support/oracles.hpp"

using namespace cnapwp;

namespace {

EngineConfig tiny_config() {
  EngineConfig c;
  c.window_size = 5;
  c.buffer_size = 3;
  c.threshold = 0.5;
  c.buckets = 3;
  c.batch_size = 4;
  c.epochs = 1;
  c.model.max_len = 4;
  c.model.heads = 2;
  c.model.prompt_len = 1;
  c.model.dropout = 0.0;
  return c;
}

EventStream cycle_stream(std::size_t n, const std::string& prefix, std::size_t cases = 3,
                         std::vector<std::string> acts = {"a", "b", "c", "d"}) {
  EventStream s;
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back(Event{prefix + std::to_string(i % cases), acts[(i / cases) % acts.size()], {}, {}});
  return s;
}

std::vector<Matrix> backbone_values(Model& m) {
  std::vector<Matrix> out;
  for (auto* p : m.backbone().parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : {Variant::CNAPwP, Variant::Landmark, Variant::LastDrift, Variant::NoPrompt, Variant::GOnly,
                    Variant::EOnly})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(parse_variant("full"), Variant::CNAPwP);
  EXPECT_THROW(parse_variant("adam"), ConfigError);
}

TEST(EngineConfig, Validation) {
  EXPECT_NO_THROW(EngineConfig{}.validate());
  auto bad = [](auto mutate) {
    EngineConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](EngineConfig& c) { c.window_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](EngineConfig& c) { c.threshold = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](EngineConfig& c) { c.threshold = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](EngineConfig& c) { c.validation_fraction = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](EngineConfig& c) { c.buckets = 1; }).validate(), ConfigError);
  EXPECT_THROW(Engine(bad([](EngineConfig& c) { c.buffer_size = 0; }), Variant::CNAPwP), ConfigError);
}

TEST(Engine, RequiresPrepare) {
  Engine e(tiny_config(), Variant::CNAPwP);
  EXPECT_THROW(e.process_event(Event{"c", "a", {}, {}}, 0, false), PreconditionError);
}

TEST(Engine, BuffersForRhoEventsAfterDrift) {
  Engine e(tiny_config(), Variant::CNAPwP);
  e.prepare(cycle_stream(12, "v"));
  EXPECT_EQ(e.active_task(), 1);
  auto s = cycle_stream(12, "x");
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto r = e.process_event(s.events[i], i, i == 5);
    const bool inside = i >= 5 && i <= 7;
    EXPECT_EQ(r.buffering, inside) << i;
    EXPECT_EQ(e.mode(), i >= 5 && i < 7 ? Engine::Mode::Buffering : Engine::Mode::Normal) << i;
  }
  ASSERT_EQ(e.task_events().size(), 1u);
  EXPECT_EQ(e.task_events()[0].index, 7u);
  EXPECT_EQ(e.task_events()[0].stage, "eval");
  for (const auto& entry : e.window().entries()) EXPECT_NE(entry.task_id, 0);
}

TEST(Engine, TrainsEveryWindowFromEvaluationStart) {
  // Seven warm events leave the cycle two pushes in; evaluation restarts it,
  // so 13 events give updates at 4 and 9 only.
  Engine e(tiny_config(), Variant::GOnly);
  e.prepare(cycle_stream(7, "v"));
  const auto warm_updates = e.updates();
  EXPECT_EQ(warm_updates, 1u);
  e.run(cycle_stream(13, "x"));
  EXPECT_EQ(e.updates(), warm_updates + 2);
}

TEST(Engine, PredictsBeforeLearningUnseenActivity) {
  Engine e(tiny_config(), Variant::CNAPwP);
  e.prepare(cycle_stream(6, "v", 3, {"a", "b"}));
  auto r = e.process_event(Event{"z", "brand_new", {}, {}}, 0, false);
  EXPECT_FALSE(r.correct);
  EXPECT_NE(r.y_hat, "brand_new");
  EXPECT_EQ(e.vocabulary().find("brand_new"), 3);
  EXPECT_EQ(e.model().vocab(), 3u);
}

TEST(Engine, RecurringTasksKeepDenseIds) {
  auto stream = oracle::recurrent_stream(3, 3, 300, 2);
  auto c = tiny_config();
  c.window_size = 50;
  c.buffer_size = 40;
  c.threshold = 0.6;
  c.epochs = 1;
  auto [val, eval] = split_validation(stream, 0.15);
  Engine e(c, Variant::CNAPwP);
  e.prepare(val);
  auto report = e.run(eval);
  EXPECT_EQ(report.records.size(), eval.size());

  int highest = 1;
  for (const auto& t : e.task_events()) {
    if (!t.matched) {
      EXPECT_EQ(t.task_id, highest + 1);
      highest = t.task_id;
    } else {
      EXPECT_LE(t.task_id, highest);
    }
  }
  EXPECT_EQ(static_cast<int>(e.task_store().size()), highest);
  EXPECT_EQ(e.eprompts().size(), e.task_store().size());
  // Three concepts recurring: at least one drift re-matched an old task.
  EXPECT_TRUE(std::any_of(e.task_events().begin(), e.task_events().end(), [](const TaskEvent& t) { return t.matched; }));
  for (const auto& r : e.task_store()) EXPECT_LE(r.tree.event_count(), c.fingerprint_cap);

  // Mode is back to Normal exactly rho events after every evaluation drift.
  for (std::size_t d : eval.drift_indices) {
    for (std::size_t i = d; i < d + c.buffer_size; ++i) EXPECT_TRUE(report.records[i].buffering) << i;
    EXPECT_FALSE(report.records[d + c.buffer_size].buffering);
  }
}

TEST(Engine, RunIsDeterministic) {
  auto stream = oracle::recurrent_stream(2, 2, 150, 3);
  auto c = tiny_config();
  c.window_size = 40;
  c.buffer_size = 20;
  auto a = run_strategy(stream, c, Variant::CNAPwP);
  auto b = run_strategy(stream, c, Variant::CNAPwP);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].y_hat, b.records[i].y_hat);
    EXPECT_EQ(a.records[i].task_id, b.records[i].task_id);
  }
  c.model.seed = 99;
  auto other = run_strategy(stream, c, Variant::CNAPwP);
  bool differs = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) differs |= a.records[i].y_hat != other.records[i].y_hat;
  EXPECT_TRUE(differs);
}

TEST(Engine, EmptyEvaluationGivesEmptyReport) {
  Engine e(tiny_config(), Variant::CNAPwP);
  e.prepare(cycle_stream(10, "v"));
  auto r = e.run(EventStream{});
  EXPECT_TRUE(r.records.empty());
}

TEST(Engine, OutOfOrderDriftsRejected) {
  Engine e(tiny_config(), Variant::LastDrift);
  e.prepare(cycle_stream(10, "v"));
  auto s = cycle_stream(10, "x");
  s.drift_indices = {5, 3};
  EXPECT_THROW(e.run(s), ConfigError);
}

TEST(Landmark, ResetMatchesFreshInit) {
  auto c = tiny_config();
  c.epochs = 1;
  c.lr = 0.0;  // training leaves the reinitialized weights untouched
  Engine e(c, Variant::Landmark);
  e.prepare(cycle_stream(10, "v"));
  auto s = cycle_stream(10, "x");
  for (std::size_t i = 0; i < s.size(); ++i) e.process_event(s.events[i], i, false);
  Model fresh(c.model, e.vocabulary().size());
  EXPECT_EQ(backbone_values(e.model()), backbone_values(fresh));
}

TEST(Landmark, WindowScopeForgetsOlderData) {
  auto c = tiny_config();
  c.landmark_scope = LandmarkScope::Window;
  const auto val = cycle_stream(10, "v");
  auto first = cycle_stream(10, "p");
  auto second = cycle_stream(10, "q", 3, {"d", "c", "b", "a"});
  auto tail = cycle_stream(5, "t");

  std::vector<std::vector<Matrix>> finals;
  for (const auto* head : {&first, &second}) {
    Engine e(c, Variant::Landmark);
    e.prepare(val);
    std::size_t i = 0;
    for (const auto& ev : head->events) e.process_event(ev, i++, false);
    for (const auto& ev : tail.events) e.process_event(ev, i++, false);
    finals.push_back(backbone_values(e.model()));
  }
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(Landmark, SinceStartScopeGrows) {
  auto c = tiny_config();
  Engine e(c, Variant::Landmark);
  e.prepare(cycle_stream(10, "v"));
  auto s = cycle_stream(10, "x");
  for (std::size_t i = 0; i < s.size(); ++i) e.process_event(s.events[i], i, false);
  EXPECT_EQ(e.last_training_size(), 20u);
}

TEST(LastDrift, TrainsSinceMostRecentDrift) {
  auto c = tiny_config();
  Engine e(c, Variant::LastDrift);
  e.prepare(cycle_stream(10, "v"));
  auto s = cycle_stream(25, "x");
  s.drift_indices = {10};
  e.run(s);
  // Updates at 4, 9, 14, 19, 24; the last one covers events 10..24.
  EXPECT_EQ(e.last_training_size(), 15u);

  Engine no_drift(c, Variant::LastDrift);
  no_drift.prepare(cycle_stream(10, "v"));
  no_drift.run(cycle_stream(25, "x"));
  EXPECT_EQ(no_drift.last_training_size(), 35u);
}

TEST(NoPrompt, FreezesAllButClassifier) {
  auto c = tiny_config();
  c.freeze_after = 12;
  Engine e(c, Variant::NoPrompt);
  e.prepare(cycle_stream(10, "v"));
  auto s = cycle_stream(30, "x");
  std::vector<Matrix> at_freeze;
  Matrix classifier_at_freeze;
  for (std::size_t i = 0; i < s.size(); ++i) {
    e.process_event(s.events[i], i, false);
    if (i == 4) {  // first update after 12 processed events (10 warm + 5)
      at_freeze = backbone_values(e.model());
      classifier_at_freeze = e.model().backbone().classifier_w.value;
    }
  }
  auto now = backbone_values(e.model());
  auto params = e.model().backbone().parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const bool head = params[p] == &e.model().backbone().classifier_w || params[p] == &e.model().backbone().classifier_b;
    if (!head) {
      EXPECT_EQ(now[p], at_freeze[p]) << params[p]->name;
      EXPECT_FALSE(params[p]->trainable);
      for (double g : params[p]->grad.data()) EXPECT_EQ(g, 0.0);
    }
  }
  EXPECT_NE(e.model().backbone().classifier_w.value, classifier_at_freeze);
}

TEST(Ablations, PromptUsagePerVariant) {
  auto c = tiny_config();
  auto val = cycle_stream(10, "v");
  Engine g(c, Variant::GOnly);
  g.prepare(val);
  EXPECT_TRUE(g.eprompts().empty());
  EXPECT_EQ(g.gprompt().blocks.size(), 1u);
  Engine eo(c, Variant::EOnly);
  eo.prepare(val);
  EXPECT_EQ(eo.eprompts().size(), 1u);
  EXPECT_TRUE(eo.gprompt().blocks.empty());
  Engine none(c, Variant::NoPrompt);
  none.prepare(val);
  EXPECT_TRUE(none.eprompts().empty());
  EXPECT_TRUE(none.gprompt().blocks.empty());
  EXPECT_EQ(none.active_task(), 0);
}
