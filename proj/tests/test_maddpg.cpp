#include "doctest.h"

#include <cmath>
#include <random>

#include "signalopt/batch.hpp"
#include "signalopt/error.hpp"
#include "signalopt/maddpg.hpp"
#include "support.hpp"

using namespace signalopt;

namespace {

// Three-intersection chain with step 1 so both 2- and 3-phase agents appear.
struct Fixture {
  Network net;
  SignalPlan base;
  BatchDataset batch;

  explicit Fixture(int eta = 2, std::uint64_t seed = 21)
      : net([&] {
          std::mt19937_64 rng(seed);
          NetworkSpec s;
          do s = testsupport::random_network(rng); while (s.intersections.size() < 2);
          return s;
        }()) {
    std::mt19937_64 rng(seed + 1);
    base = testsupport::random_plan(net.intersections(), 1, rng);
    batch = collect_batch(base, net, {.episodes = 6, .cycles_per_episode = 4, .eta = eta, .seed = seed});
  }
};

MaddpgConfig small_config() {
  MaddpgConfig c;
  c.delta_bound = 2;
  c.hidden = {8, 8};
  c.batch_size = 8;
  c.iterations = 20;
  c.critic_warmup = 5;
  c.log_every = 5;
  c.seed = 4;
  return c;
}

std::vector<int> all_records(const MaddpgTrainer& t) {
  std::vector<int> r(static_cast<std::size_t>(t.num_records()));
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<int>(i);
  return r;
}

}  // namespace

TEST_SUITE("marl-batch") {

TEST_CASE("gamma 0 without SRC or augmentation: targets are the normalized global reward") {
  Fixture f;
  auto cfg = small_config();
  cfg.gamma = 0.0;
  cfg.src = false;
  cfg.batch_augmentation = false;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), cfg);
  CHECK(t.num_derived() == 0);
  const auto pool = all_records(t);
  // Independent scale: mean |r_g| over the batch.
  double scale = 0.0;
  for (const auto& r : f.batch.records) scale += std::abs(r.reward_global);
  scale /= static_cast<double>(f.batch.records.size());
  CHECK(t.reward_scale() == doctest::Approx(scale).epsilon(1e-12));
  for (int k = 0; k < f.net.num_intersections(); ++k) {
    const auto y = t.critic_targets(k, pool);
    for (std::size_t b = 0; b < pool.size(); ++b)
      CHECK(y(static_cast<Eigen::Index>(b)) == doctest::Approx(f.batch.records[b].reward_global / scale).epsilon(1e-12));
  }
}

TEST_CASE("critic overfits a single transition") {
  Fixture f;
  auto cfg = small_config();
  cfg.gamma = 0.0;
  cfg.critic_lr = 1e-2;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), cfg);
  const std::vector<int> one{2};
  double loss = 1.0;
  for (int s = 0; s < 3000 && loss >= 1e-4; ++s) loss = t.critic_update(0, one);
  CHECK(loss < 1e-4);
}

TEST_CASE("exact per-phase rewards reproduce the cycle reward under the base plan") {
  Fixture f(0);
  const auto samples = build_truncated_samples(f.batch.records);
  for (std::size_t r = 0; r < f.batch.records.size(); ++r) {
    const auto& rec = f.batch.records[r];
    for (int j = 0; j < f.net.num_intersections(); ++j) {
      auto exact = [&](int phase) {
        for (const auto& s : samples)
          if (s.record == static_cast<int>(r) && s.intersection == j && s.phase == phase)
            return s.avg_reward_global;
        FAIL("missing sample");
        return 0.0;
      };
      CHECK(truncated_reward_estimate(rec, j, f.base, exact) ==
            doctest::Approx(rec.reward_global).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero critic gives a zero actor gradient") {
  Fixture f;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), small_config());
  const auto recs = all_records(t);
  for (int k = 0; k < f.net.num_intersections(); ++k) {
    t.critic(k) = Mlp::zeros(t.critic(k).sizes(), OutputActivation::Identity);
    const auto g = t.actor_gradient(k, recs);
    for (const auto& l : g.layers) {
      CHECK(l.weights.isZero(0.0));
      CHECK(l.bias.isZero(0.0));
    }
  }
  CHECK_THROWS_AS(t.actor_gradient(0, std::vector<int>{t.num_records()}), ShapeError);
}

TEST_CASE("actor gradient matches central differences of the actor objective") {
  Fixture f;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), small_config());
  const auto recs = all_records(t);
  const double h = 1e-6;
  double worst = 0.0;
  for (int k = 0; k < f.net.num_intersections(); ++k) {
    const auto g = t.actor_gradient(k, recs);
    Mlp& actor = t.actor(k);
    for (std::size_t l = 0; l < actor.layers.size(); ++l) {
      auto& W = actor.layers[l].weights;
      for (Eigen::Index i = 0; i < W.size(); i += 3) {
        const double keep = W.data()[i];
        W.data()[i] = keep + h;
        const double up = t.actor_objective(k, recs);
        W.data()[i] = keep - h;
        const double down = t.actor_objective(k, recs);
        W.data()[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double an = g.layers[l].weights.data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
      }
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("decoded policy actions stay within the delta bound of the base plan") {
  Fixture f;
  auto cfg = small_config();
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), cfg);
  for (int j = 0; j < f.net.num_intersections(); ++j)
    for (auto& l : t.actor(j).layers) l.weights *= 40.0;
  const auto ev = evaluate_policies(t.policy(), f.net, 1, 30, 5);
  for (const auto& p : ev.plans) {
    CHECK(validate_plan(p, f.net.intersections(), 1).ok());
    for (std::size_t j = 0; j < p.lengths.size(); ++j)
      for (std::size_t i = 0; i < p.lengths[j].size(); ++i)
        CHECK(std::abs(p.lengths[j][i] - f.base.lengths[j][i]) <= cfg.delta_bound);
  }
}

TEST_CASE("zero actors reproduce the base plan evaluation") {
  Fixture f;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), small_config());
  for (int j = 0; j < f.net.num_intersections(); ++j)
    t.actor(j) = Mlp::zeros(t.actor(j).sizes(), OutputActivation::Bounded);
  const auto ev = evaluate_policies(t.policy(), f.net, 2, 5, f.net.spec().seed);
  for (const auto& p : ev.plans) CHECK(p == f.base);
  CHECK(ev.waiting == doctest::Approx(-evaluate_plan(f.base, f.net, 2, 5)).epsilon(1e-12));
}

TEST_CASE("train_offline is deterministic and counts evaluator calls") {
  Fixture f;
  auto cfg = small_config();
  cfg.iterations = 22;
  cfg.eval_every = 5;
  int calls = 0;
  PolicyEvaluator ev = [&](const DecentralizedPolicy& p) {
    ++calls;
    return evaluate_policies(p, f.net, 0, 1, 1).waiting;
  };
  const auto a = train_offline(f.batch, f.base, ProblemShape::of(f.net), cfg, ev);
  const auto b = train_offline(f.batch, f.base, ProblemShape::of(f.net), cfg);
  CHECK(calls == 5);  // iterations 5, 10, 15, 20 and the last
  CHECK(a.eval_calls == 5);
  CHECK(b.eval_calls == 0);
  // Evaluation is reporting only: identical weights with or without it.
  for (std::size_t j = 0; j < a.policy.actors.size(); ++j)
    for (std::size_t l = 0; l < a.policy.actors[j].layers.size(); ++l) {
      CHECK(a.policy.actors[j].layers[l].weights == b.policy.actors[j].layers[l].weights);
      CHECK(a.policy.actors[j].layers[l].bias == b.policy.actors[j].layers[l].bias);
    }
  for (std::size_t h = 0; h < b.history.size(); ++h) CHECK(std::isfinite(b.history[h].critic_loss));
}

TEST_CASE("trainer rejects tiny batches and bad configs") {
  Fixture f;
  BatchDataset tiny = f.batch;
  tiny.records.resize(3);
  CHECK_THROWS(MaddpgTrainer(tiny, f.base, ProblemShape::of(f.net), small_config()));
  auto cfg = small_config();
  cfg.delta_bound = 3;
  CHECK_THROWS_AS(cfg.validate(2), ConfigError);
  cfg = small_config();
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(1), ConfigError);
  cfg = small_config();
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(1), ConfigError);
  nlohmann::json j = small_config();
  CHECK(j.get<MaddpgConfig>().hidden == small_config().hidden);
  CHECK(j.get<MaddpgConfig>().delta_bound == 2);
}

TEST_CASE("policy decode rejects non-finite outputs") {
  Fixture f;
  MaddpgTrainer t(f.batch, f.base, ProblemShape::of(f.net), small_config());
  auto p = t.policy();
  std::vector<std::vector<double>> outs;
  for (const auto& s : f.net.intersections()) outs.emplace_back(static_cast<std::size_t>(s.num_phases()), 0.0);
  outs[0][0] = std::nan("");
  CHECK_THROWS_AS(p.assemble(outs), DivergenceError);
}

}  // TEST_SUITE
