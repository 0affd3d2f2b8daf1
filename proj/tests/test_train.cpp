#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "depo/errors.hpp"
#include "depo/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace depo;
using namespace depo::testing;

namespace {

LossAndGradient loss_with_z0(const PolicyParams& theta, const PolicyParams& ref, const std::vector<Trajectory>& d,
                             const std::vector<Trajectory>& u, const TrainConfig& cfg, std::optional<double> z0) {
  std::vector<const Trajectory*> pd, pu;
  std::vector<ReferenceScores> rs;
  for (const auto& t : d) pd.push_back(&t);
  for (const auto& t : u) pu.push_back(&t);
  for (const auto* t : pd) rs.push_back(reference_scores(ref, *t));
  for (const auto* t : pu) rs.push_back(reference_scores(ref, *t));
  std::vector<const ReferenceScores*> rd, ru;
  for (std::size_t i = 0; i < rs.size(); ++i) (i < pd.size() ? rd : ru).push_back(&rs[i]);
  return depo_loss(theta, pd, pu, rd, ru, cfg, z0);
}

PolicyParams zeros(const ModelConfig& cfg) { return PolicyParams{cfg, std::vector<double>(cfg.parameter_count(), 0.0)}; }

}  // namespace

TEST_CASE("efficiency bonus arithmetic") {
  const auto d = sized_trajectory(6, 30, Label::Desirable);
  CHECK(efficiency_bonus(d, 3.0, 3.0) == 0.6);
  CHECK(efficiency_bonus(d, 0.0, 0.0) == 0.0);
  const auto u = sized_trajectory(10, 20, Label::Undesirable, 0.8);
  CHECK(efficiency_bonus(u, 3.0, 3.0) == 0.0);
  CHECK(efficiency_bonus(u, 0.0, 0.0) == 0.0);
  auto unlabeled = d;
  unlabeled.label.reset();
  CHECK_THROWS_AS(efficiency_bonus(unlabeled, 3.0, 3.0), ContractViolation);
}

TEST_CASE("penalty arithmetic") {
  const auto u = sized_trajectory(10, 20, Label::Undesirable, 0.8);
  CHECK(penalty(u, 2.0, 2.0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(penalty(u, 2.0, 2.0) == 2.0 / 20.0 + 2.0 / 10.0);
  CHECK(penalty(sized_trajectory(6, 30, Label::Desirable), 2.0, 2.0) == 0.0);
  auto unlabeled = u;
  unlabeled.label.reset();
  CHECK_THROWS_AS(penalty(unlabeled, 2.0, 2.0), ContractViolation);
}

TEST_CASE("bonus is strictly decreasing in tokens per step and in steps") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const int steps = 1 + static_cast<int>(uniform_below(rng, 10));
    const int tokens = 2 + static_cast<int>(uniform_below(rng, 40));
    const double a1 = 0.1 + uniform01(rng) * 3, a2 = 0.1 + uniform01(rng) * 3;
    const double b = efficiency_bonus(sized_trajectory(steps, tokens, Label::Desirable), a1, a2);
    CHECK(efficiency_bonus(sized_trajectory(steps, tokens + 1, Label::Desirable), a1, a2) < b);
    CHECK(efficiency_bonus(sized_trajectory(steps + 1, tokens, Label::Desirable), a1, a2) < b);
  }
}

TEST_CASE("kto value function") {
  TrainConfig cfg;
  CHECK(kto_value(1.5, 1.5, Label::Desirable, cfg) == 0.5);
  CHECK(kto_value(1.5, 1.5, Label::Undesirable, cfg) == 0.5);
  CHECK(kto_value(1e6, 0.0, Label::Desirable, cfg) == doctest::Approx(1.0));
  CHECK(kto_value(1.0, 0.0, Label::Desirable, cfg) == doctest::Approx(0.5498).epsilon(1e-4 / 0.5498));
  CHECK(kto_value(1.0, 0.0, Label::Desirable, cfg) == doctest::Approx(1.0 / (1.0 + std::exp(-0.2))));
  CHECK_THROWS_AS(kto_value(0.0, 0.0, Label::Discard, cfg), ContractViolation);
}

TEST_CASE("sft loss examples") {
  SUBCASE("uniform policy over 256 tokens") {
    const ModelConfig cfg{256, 64, 8, 1, 2, 8};
    Rng rng(2);
    std::vector<Trajectory> batch{random_trajectory(cfg, rng, 2), random_trajectory(cfg, rng, 3)};
    const auto r = sft_loss(zeros(cfg), batch);
    CHECK(r.report.loss == doctest::Approx(std::log(256.0)).epsilon(1e-14));
    CHECK(std::abs(r.report.loss - 5.545) < 1e-3);
  }
  SUBCASE("token-weighted mean of per-trajectory losses") {
    const auto p = random_policy(mini_config(12, 64), 3);
    Rng rng(5);
    std::vector<Trajectory> batch{random_trajectory(p.config, rng, 2), random_trajectory(p.config, rng, 4),
                                  random_trajectory(p.config, rng, 1)};
    double weighted = 0.0, tokens = 0.0;
    for (const auto& t : batch) {
      const auto n = static_cast<double>(token_stats(t).total_tokens);
      weighted += sft_loss(p, std::vector<Trajectory>{t}).report.loss * n;
      tokens += n;
    }
    CHECK(sft_loss(p, batch).report.loss == doctest::Approx(weighted / tokens).epsilon(1e-13));
  }
  SUBCASE("errors") {
    const auto p = random_policy(mini_config(), 3);
    CHECK_THROWS_AS(sft_loss(p, std::vector<Trajectory>{}), std::invalid_argument);
  }
}

TEST_CASE("sft loss of a point-mass policy is zero") {
  // Layer-free model whose output follows the current token: every agent
  // token is the deterministic successor of the previous one.
  const ModelConfig cfg{12, 32, 12, 0, 2, 4};
  PolicyParams p = zeros(cfg);
  const Layout lay(cfg);
  for (int t = 0; t < 12; ++t) p.values[lay.tok_emb + static_cast<std::size_t>(t * 12 + t)] = 1.0;
  for (int j = 0; j < 12; ++j) p.values[lay.lnf_g + static_cast<std::size_t>(j)] = 1.0;
  const std::pair<int, int> next[] = {{tok::kAgent, 7}, {7, tok::kEot}, {tok::kEot, 8}, {8, tok::kEos}};
  for (auto [a, b] : next) p.values[lay.w_out + static_cast<std::size_t>(a * 12 + b)] = 1000.0;
  Trajectory t;
  t.task.instruction_tokens = {9};
  t.initial_observation = {10};
  for (int i = 0; i < 3; ++i) {
    AgentStep s;
    s.thought_tokens = {7};
    s.action_tokens = {tok::kEot, 8, tok::kEos};
    s.observation_tokens = {11};
    t.steps.push_back(s);
  }
  const auto r = sft_loss(p, std::vector<Trajectory>{t, t});
  CHECK(r.report.loss == 0.0);
}

TEST_CASE("implied reward") {
  const ModelConfig cfg = mini_config(12, 256);
  const auto ref = random_policy(cfg, 1);
  TrainConfig tc;
  tc.alpha1 = tc.alpha2 = 3.0;
  const auto d = sized_trajectory(6, 30, Label::Desirable);
  CHECK(implied_reward(ref, ref, d, tc).value == 0.6);
  const auto u = sized_trajectory(10, 20, Label::Undesirable, 0.8);
  CHECK(implied_reward(ref, ref, u, tc).value == 0.0);
  tc.penalty_enabled = true;
  CHECK(implied_reward(ref, ref, u, tc).value == doctest::Approx(0.45));

  SUBCASE("log-ratio against a step-by-step oracle") {
    const auto theta = random_policy(cfg, 2);
    Rng rng(3);
    for (int k = 0; k < 10; ++k) {
      const auto t = random_trajectory(cfg, rng, 1 + k % 4, Label::Undesirable);
      double sum = 0.0;
      for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto h = step_history(t, i, cfg.context);
        const auto out = t.steps[i].output_tokens();
        sum += oracle::logprob_by_prefix(theta, h, out) - oracle::logprob_by_prefix(ref, h, out);
      }
      CHECK(implied_reward(theta, ref, t, TrainConfig{}).log_ratio ==
            doctest::Approx(sum / static_cast<double>(t.steps.size())).epsilon(1e-11));
    }
  }
}

TEST_CASE("depo loss examples") {
  const ModelConfig cfg = mini_config(12, 256);
  const auto ref = random_policy(cfg, 1);
  TrainConfig tc;
  tc.alpha1 = tc.alpha2 = 0.0;
  Rng rng(9);
  std::vector<Trajectory> d{random_trajectory(cfg, rng, 2, Label::Desirable)};
  std::vector<Trajectory> u{random_trajectory(cfg, rng, 3, Label::Undesirable)};
  const auto r = depo_loss(ref, ref, d, u, tc);
  CHECK(r.report.loss == 0.5);
  CHECK(r.report.z0 == 0.0);

  SUBCASE("shorter desirable trajectory has the lower loss") {
    tc.alpha1 = tc.alpha2 = 3.0;
    const std::vector<Trajectory> short_one{sized_trajectory(4, 10, Label::Desirable)};
    const std::vector<Trajectory> long_one{sized_trajectory(4, 40, Label::Desirable)};
    const auto a = depo_loss(ref, ref, short_one, {}, tc).report.loss;
    const auto b = depo_loss(ref, ref, long_one, {}, tc).report.loss;
    CHECK(a < b);
    CHECK(a == doctest::Approx(1.0 - sigmoid(0.2 * (3.0 / 10 + 3.0 / 4))));
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(depo_loss(ref, ref, {}, {}, tc), std::invalid_argument);
    CHECK_THROWS_AS(depo_loss(ref, ref, u, {}, tc), std::invalid_argument);
  }
}

TEST_CASE("depo loss reduces to vanilla KTO bit for bit") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelConfig cfg = mini_config(12, 24);
    const auto ref = random_policy(cfg, seed);
    const auto theta = random_policy(cfg, seed + 100);
    Rng rng(seed);
    std::vector<Trajectory> d, u;
    for (int i = 0; i < 1 + static_cast<int>(seed % 3); ++i) d.push_back(random_trajectory(cfg, rng, 1 + i, Label::Desirable));
    for (int i = 0; i < static_cast<int>(seed % 4); ++i) u.push_back(random_trajectory(cfg, rng, 2 + i, Label::Undesirable));
    TrainConfig tc = as_kto(TrainConfig{});
    CHECK(depo_loss(theta, ref, d, u, tc).report.loss == oracle::vanilla_kto_loss(theta, ref, d, u, 0.2, 1.0, 1.0));
  }
}

TEST_CASE("per-sample terms lie in (0, 1) and z0 is non-negative") {
  const ModelConfig cfg = mini_config(12, 32);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ref = random_policy(cfg, seed);
    const auto theta = random_policy(cfg, seed + 7, 1.0);
    Rng rng(seed);
    const std::vector<Trajectory> d{random_trajectory(cfg, rng, 2, Label::Desirable)};
    const std::vector<Trajectory> u{random_trajectory(cfg, rng, 2, Label::Undesirable)};
    TrainConfig tc;
    tc.penalty_enabled = seed % 2 == 0;
    const auto ld = depo_loss(theta, ref, d, {}, tc);
    const auto lu = depo_loss(theta, ref, {}, u, tc);
    CHECK(ld.report.loss > 0.0);
    CHECK(ld.report.loss < 1.0);
    CHECK(lu.report.loss > 0.0);
    CHECK(lu.report.loss < 1.0);
    CHECK(depo_loss(theta, ref, d, u, tc).report.z0 >= 0.0);
  }
}

TEST_CASE("depo and sft gradients match central differences") {
  std::size_t failures = 0;
  double worst = 0.0;
  const double alphas[] = {0.0, 2.0, 3.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelConfig cfg = seed % 2 ? mini_config(12, 20) : ModelConfig{10, 20, 6, 2, 2, 4};
    REQUIRE(cfg.parameter_count() <= 1000);
    const auto ref = random_policy(cfg, seed);
    const auto theta = random_policy(cfg, seed + 500);
    Rng rng(seed);
    const std::vector<Trajectory> d{random_trajectory(cfg, rng, 2, Label::Desirable, 2)};
    const std::vector<Trajectory> u{random_trajectory(cfg, rng, 1, Label::Undesirable, 2)};
    TrainConfig tc;
    tc.alpha1 = tc.alpha2 = alphas[seed % 3];
    tc.penalty_enabled = seed % 4 == 1;
    const auto base = loss_with_z0(theta, ref, d, u, tc, std::nullopt);
    // The reference point is detached, so differences hold it fixed.
    const auto numeric = oracle::finite_difference(
        [&](const std::vector<double>& x) {
          return loss_with_z0(PolicyParams{cfg, x}, ref, d, u, tc, base.report.z0).report.loss;
        },
        theta.values, 1e-5);
    auto c = oracle::compare_gradients(base.gradient, numeric, 1e-4);
    failures += c.failures;
    worst = std::max(worst, c.worst_relative);

    const auto sft = sft_loss(theta, d);
    const auto sft_numeric = oracle::finite_difference(
        [&](const std::vector<double>& x) { return sft_loss(PolicyParams{cfg, x}, d).report.loss; }, theta.values,
        1e-5);
    c = oracle::compare_gradients(sft.gradient, sft_numeric, 1e-4);
    failures += c.failures;
    worst = std::max(worst, c.worst_relative);
  }
  INFO("worst relative error " << worst);
  CHECK(failures == 0);
}

TEST_CASE("bonus enters the gradient only through the sigmoid slope") {
  const ModelConfig cfg = mini_config(12, 20);
  const auto ref = random_policy(cfg, 1);
  const auto theta = random_policy(cfg, 2);
  Rng rng(3);
  const std::vector<Trajectory> d{random_trajectory(cfg, rng, 2, Label::Desirable)};
  TrainConfig a, b;
  a.alpha1 = a.alpha2 = 0.0;
  b.alpha1 = b.alpha2 = 3.0;
  const auto ga = depo_loss(theta, ref, d, {}, a);
  const auto gb = depo_loss(theta, ref, d, {}, b);
  const double ra = implied_reward(theta, ref, d[0], a).value - ga.report.z0;
  const double rb = implied_reward(theta, ref, d[0], b).value - gb.report.z0;
  const double sa = sigmoid(0.2 * ra), sb = sigmoid(0.2 * rb);
  const double ratio = (sb * (1 - sb)) / (sa * (1 - sa));
  for (std::size_t j = 0; j < ga.gradient.size(); ++j) {
    const double expect = ga.gradient[j] * ratio;
    CHECK(std::abs(gb.gradient[j] - expect) <= 1e-9 * std::abs(expect) + 1e-15);
  }
}

TEST_CASE("training loop") {
  const ModelConfig cfg = mini_config(12, 64);
  Rng rng(1);
  LabeledDataset data;
  for (int i = 0; i < 5; ++i) data.desirable.push_back(random_trajectory(cfg, rng, 2, Label::Desirable, 2));
  for (int i = 0; i < 3; ++i) data.undesirable.push_back(random_trajectory(cfg, rng, 3, Label::Undesirable, 2));
  const auto init = make_policy(cfg, 4);

  SUBCASE("learning rate zero leaves parameters untouched") {
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.epochs = 2;
    CHECK(train(init, init, data, tc, LossKind::DEPO).params == init);
    CHECK(train(init, init, data, tc, LossKind::SFT).params == init);
  }

  SUBCASE("sft memorizes a toy set") {
    TrainConfig tc;
    tc.learning_rate = 0.001;
    tc.epochs = 200;
    tc.batch_size = 5;
    const ModelConfig wide{12, 64, 32, 2, 4, 32};
    Rng toy_rng(6);
    LabeledDataset toy;
    for (int i = 0; i < 5; ++i) toy.desirable.push_back(random_trajectory(wide, toy_rng, 2, Label::Desirable, 2));
    const auto start = make_policy(wide, 4);
    const auto r = train(start, start, toy, tc, LossKind::SFT);
    REQUIRE(r.epochs.size() == 200);
    for (std::size_t e = 1; e < r.epochs.size(); ++e) CHECK(r.epochs[e].loss <= r.epochs[e - 1].loss);
    CHECK(r.epochs.back().loss < 0.1 * r.epochs.front().loss);
  }

  SUBCASE("identical seeds give identical parameters") {
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 3;
    tc.seed = 77;
    const auto ref = train(init, init, data, tc, LossKind::SFT).params;
    const auto a = train(ref, ref, data, tc, LossKind::DEPO);
    const auto b = train(ref, ref, data, tc, LossKind::DEPO);
    CHECK(a.params == b.params);
    CHECK(a.params != ref);
  }

  SUBCASE("kto ignores the bonus settings") {
    TrainConfig tc;
    tc.epochs = 2;
    tc.alpha1 = 3.0;
    tc.penalty_enabled = true;
    TrainConfig zero = tc;
    zero.alpha1 = zero.alpha2 = 0.0;
    zero.penalty_enabled = false;
    CHECK(train(init, init, data, tc, LossKind::KTO).params == train(init, init, data, zero, LossKind::DEPO).params);
  }

  SUBCASE("non-finite values abort with the batch named") {
    auto broken = init;
    broken.values[Layout(cfg).lnf_g] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.epochs = 1;
    bool thrown = false;
    try {
      (void)train(broken, broken, data, tc, LossKind::SFT);
    } catch (const std::runtime_error& e) {
      thrown = std::string(e.what()).find("epoch 1, batch 1") != std::string::npos;
    }
    CHECK(thrown);
  }

  SUBCASE("empty training sets are rejected") {
    LabeledDataset empty;
    CHECK_THROWS_AS(train(init, init, empty, TrainConfig{}, LossKind::SFT), ConfigError);
    CHECK_THROWS_AS(train(init, init, empty, TrainConfig{}, LossKind::DEPO), ConfigError);
  }

  SUBCASE("per-epoch checkpoints and log") {
    const auto dir = std::filesystem::temp_directory_path() / "depo_test_train";
    std::filesystem::remove_all(dir);
    TrainConfig tc;
    tc.epochs = 2;
    const auto r = train(init, init, data, tc, LossKind::SFT, TrainOutputs{dir / "epochs", dir / "log.jsonl"});
    CHECK(load_checkpoint(dir / "epochs" / "epoch_2.ckpt") == r.params);
    CHECK(std::filesystem::exists(dir / "epochs" / "epoch_1.ckpt"));
    std::ifstream log(dir / "log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 2);
    std::filesystem::remove_all(dir);
  }

  SUBCASE("config validation") {
    TrainConfig tc;
    tc.beta = 0.0;
    CHECK_THROWS_AS(validate(tc), ConfigError);
    tc = TrainConfig{};
    tc.alpha1 = -1.0;
    CHECK_THROWS_AS(validate(tc), ConfigError);
    tc = TrainConfig{};
    tc.batch_size = 0;
    CHECK_THROWS_AS(validate(tc), ConfigError);
  }
}
