#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nav/eval.hpp"
#include "nav/train.hpp"

using namespace nav;

namespace {

constexpr double kDeg = kPi / 180.0;

sim::StepRecord rec(double x, double y, double d, double theta,
                    bool visible = false,
                    sim::Action a = sim::Action::kMoveForward) {
  sim::StepRecord s;
  s.state = {x, y, 0.0};
  s.action = a;
  s.d = d;
  s.theta = theta;
  s.goal_visible = visible;
  return s;
}

/// Crafted trajectory: the last record's action decides stop_called.
sim::TrajectoryRecord traj_of(std::vector<sim::StepRecord> steps,
                              bool stop, int max_steps = 0) {
  sim::TrajectoryRecord t;
  t.episode.max_steps =
      max_steps > 0 ? max_steps : static_cast<int>(steps.size());
  t.initial = rec(0.0, 0.0, steps.empty() ? 1.0 : steps.front().d,
                  steps.empty() ? 0.0 : steps.front().theta);
  t.initial.action = sim::Action::kStop;  // unused by contract
  t.steps = std::move(steps);
  t.stop_called = stop;
  if (stop && !t.steps.empty()) t.steps.back().action = sim::Action::kStop;
  return t;
}

/// Positions spread far apart so the looping rule can never fire.
std::vector<sim::StepRecord> spread_steps(double d_final, double theta_final,
                                          bool visible = false,
                                          double d_seen = 10.0) {
  std::vector<sim::StepRecord> steps;
  for (int i = 0; i < 10; ++i)
    steps.push_back(rec(3.0 * i, 2.5 * i, d_seen, kPi / 2, visible));
  steps.push_back(rec(30.0, 25.0, d_final, theta_final));
  return steps;
}

int count_of(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (std::size_t at = hay.find(needle); at != std::string::npos;
       at = hay.find(needle, at + needle.size()))
    ++n;
  return n;
}

}  // namespace

TEST_CASE("spl hand cases and input validation") {
  using eval::SplSample;
  const std::vector<SplSample> optimal{{true, 4.0, 4.0}};
  CHECK(eval::spl(optimal) == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<SplSample> failed{{false, 4.0, 9.0}};
  CHECK(eval::spl(failed) == 0.0);

  const std::vector<SplSample> detour{{true, 4.0, 5.0}};
  CHECK(eval::spl(detour) == doctest::Approx(0.8).epsilon(1e-15));

  // max(p, l) clamps a measured path shorter than the geodesic.
  const std::vector<SplSample> shortcut{{true, 4.0, 3.0}};
  CHECK(eval::spl(shortcut) == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<SplSample> mixed{
      {true, 4.0, 5.0}, {false, 2.0, 1.0}, {true, 2.0, 2.0}};
  CHECK(eval::spl(mixed) == doctest::Approx(0.6).epsilon(1e-15));

  CHECK_THROWS_AS(eval::spl(std::vector<SplSample>{}), ConfigError);
  CHECK_THROWS_AS(eval::spl(std::vector<SplSample>{{true, 0.0, 1.0}}),
                  ConfigError);
  CHECK_THROWS_AS(eval::spl(std::vector<SplSample>{{true, -2.0, 1.0}}),
                  ConfigError);
  CHECK_THROWS_AS(eval::spl(std::vector<SplSample>{{true, 1.0, -0.1}}),
                  ConfigError);
}

TEST_CASE("path_length sums the walked polyline") {
  auto t = traj_of({rec(3.0, 0.0, 1.0, 0.0), rec(3.0, 4.0, 1.0, 0.0),
                    rec(3.0, 4.0, 1.0, 0.0)},
                   true);
  CHECK(eval::path_length(t) == doctest::Approx(7.0).epsilon(1e-12));
  sim::TrajectoryRecord empty;
  CHECK(eval::path_length(empty) == 0.0);
}

TEST_CASE("failure classifier fixture suite") {
  const reward::RewardConfig cfg;

  // -- Success (x2) --
  CHECK(eval::classify_failure(traj_of({rec(1, 1, 0.5, 1.0)}, true), cfg) ==
        eval::FailureCategory::kSuccess);
  // Caller-supplied predicate wins over record geometry.
  CHECK(eval::classify_failure(traj_of(spread_steps(2.4, kPi / 2), false, 11),
                               cfg, true) == eval::FailureCategory::kSuccess);

  // -- NearlyReached (x2) --
  CHECK(eval::classify_failure(traj_of({rec(1, 1, 1.2, 20 * kDeg)}, true),
                               cfg) ==
        eval::FailureCategory::kNearlyReached);
  CHECK(eval::classify_failure(traj_of({rec(1, 1, 1.5, 44.9 * kDeg)}, true),
                               cfg) ==
        eval::FailureCategory::kNearlyReached);

  // -- SlightlyFar (x2) --
  CHECK(eval::classify_failure(traj_of({rec(1, 1, 2.0, 20 * kDeg)}, true),
                               cfg) == eval::FailureCategory::kSlightlyFar);
  // Priority: the gaze rule fires before the far-stop rule.
  CHECK(eval::classify_failure(traj_of({rec(1, 1, 5.0, 0.0)}, true), cfg) ==
        eval::FailureCategory::kSlightlyFar);

  // -- DidntStop (x2) --
  CHECK(eval::classify_failure(
            traj_of(spread_steps(6.0, kPi / 2, true, 0.8), false, 11), cfg) ==
        eval::FailureCategory::kDidntStop);
  CHECK(eval::classify_failure(
            traj_of(spread_steps(6.0, kPi / 2, true, 1.9), false, 11), cfg) ==
        eval::FailureCategory::kDidntStop);

  // -- ExplorationFailure (x2) --
  std::vector<sim::StepRecord> loop;
  for (int i = 0; i < 12; ++i)
    loop.push_back(
        rec(0.4 * std::cos(i * 0.5), 0.4 * std::sin(i * 0.5), 6.0, kPi / 2));
  CHECK(eval::classify_failure(traj_of(loop, false, 12), cfg) ==
        eval::FailureCategory::kExplorationFailure);
  // Stop far from the goal, looking away.
  CHECK(eval::classify_failure(
            traj_of(spread_steps(4.0, 90 * kDeg), true), cfg) ==
        eval::FailureCategory::kExplorationFailure);

  // -- Unknown (x2) --
  // A distant sighting (d >= 2 r_g) does not arm the DidntStop rule.
  CHECK(eval::classify_failure(
            traj_of(spread_steps(6.0, kPi / 2, true, 2.5), false, 11), cfg) ==
        eval::FailureCategory::kUnknown);
  // Stopped at moderate distance, looking away, no loop.
  CHECK(eval::classify_failure(
            traj_of(spread_steps(2.0, 90 * kDeg), true), cfg) ==
        eval::FailureCategory::kUnknown);

  // -- Gaze-threshold boundaries --
  CHECK(eval::classify_failure(
            traj_of(spread_steps(1.2, 50 * kDeg), true), cfg) ==
        eval::FailureCategory::kUnknown);
  CHECK(eval::classify_failure(
            traj_of(spread_steps(1.2, 45 * kDeg), true), cfg) ==
        eval::FailureCategory::kUnknown);

  // -- Unterminated trajectories are rejected --
  CHECK_THROWS_AS(
      eval::classify_failure(traj_of({rec(1, 1, 2.0, 0.0)}, false, 50), cfg),
      ConfigError);
}

TEST_CASE("failure names round-trip") {
  for (int i = 0; i < eval::kNumFailureCategories; ++i) {
    const auto c = static_cast<eval::FailureCategory>(i);
    CHECK(eval::failure_from(eval::failure_name(c)) == c);
  }
  CHECK_THROWS_AS(eval::failure_from("bogus"), ConfigError);
}

TEST_CASE("oracle agent reaches every sampled goal") {
  const sim::Scene scene = sim::generate_scene(11);
  Rng rng(5);
  eval::OracleAgent oracle;
  for (int i = 0; i < 3; ++i) {
    const sim::EpisodeSpec ep = sim::sample_episode(scene, rng, false);
    const sim::TrajectoryRecord traj = eval::run_episode(scene, ep, oracle);
    CHECK(traj.stop_called);
    const auto [ok, angle_ok] = sim::imagenav_success(traj);
    CHECK(ok);
    CHECK(eval::classify_failure(traj, reward::RewardConfig{}, ok) ==
          eval::FailureCategory::kSuccess);
    CHECK(eval::path_length(traj) > 0.0);
  }
}

TEST_CASE("oracle evaluation: SR 1.0, SPL >= 0.8, report invariants") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 30;
  cfg.scene_seed = 40;
  cfg.episode_seed = 4100;
  eval::OracleAgent oracle;
  const eval::EvalReport rep = eval::evaluate(oracle, cfg);

  CHECK(rep.num_episodes == 30);
  CHECK(rep.success_rate == 1.0);
  CHECK(rep.spl >= 0.8);
  CHECK(rep.spl <= rep.success_rate);
  CHECK(rep.angle_success_rate >= 0.0);
  CHECK(rep.angle_success_rate <= rep.success_rate);
  for (const auto& row : rep.rows) {
    CHECK(row.success);
    CHECK(row.failure == eval::FailureCategory::kSuccess);
    CHECK(row.geodesic >= cfg.sampler.min_geodesic);
    CHECK(row.spl > 0.0);
    CHECK(row.spl <= 1.0);
  }
}

TEST_CASE("evaluation is deterministic and thread-count invariant") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 6;
  cfg.scene_seed = 3;
  cfg.episode_seed = 77;

  eval::OracleAgent a1, a2;
  const std::string j1 = eval::evaluate(a1, cfg).to_json().dump(2);
  const std::string j2 = eval::evaluate(a2, cfg).to_json().dump(2);
  CHECK(j1 == j2);

  const auto factory = [] { return std::make_unique<eval::OracleAgent>(); };
  const std::string j3 = eval::evaluate(factory, cfg, 3).to_json().dump(2);
  CHECK(j1 == j3);

  eval::OracleAgent a4;
  CHECK(eval::evaluate(a4, cfg).to_csv() ==
        eval::evaluate(factory, cfg, 2).to_csv());
}

TEST_CASE("random and stop baselines keep SPL <= SR") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 8;
  cfg.scene_seed = 9;
  cfg.episode_seed = 1234;
  cfg.sampler.max_steps = 40;

  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    eval::RandomAgent agent(seed);
    const eval::EvalReport rep = eval::evaluate(agent, cfg);
    CHECK(rep.spl <= rep.success_rate + 1e-12);
    CHECK(rep.success_rate >= 0.0);
    CHECK(rep.success_rate <= 1.0);
    CHECK(rep.spl >= 0.0);
    for (const auto& row : rep.rows) {
      const bool classed_success =
          row.failure == eval::FailureCategory::kSuccess;
      CHECK(classed_success == row.success);
    }
  }

  // Episodes start >= min_geodesic from the goal, so STOP-now always fails.
  eval::StopAgent stopper;
  const eval::EvalReport rep = eval::evaluate(stopper, cfg);
  CHECK(rep.success_rate == 0.0);
  CHECK(rep.spl == 0.0);
  for (const auto& row : rep.rows) CHECK(row.steps == 1);
}

TEST_CASE("objectnav evaluation runs the full pipeline") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 6;
  cfg.objectnav = true;
  cfg.scene_seed = 15;
  cfg.episode_seed = 900;
  eval::OracleAgent oracle;
  const eval::EvalReport rep = eval::evaluate(oracle, cfg);
  CHECK(rep.num_episodes == 6);
  CHECK(rep.success_rate > 0.5);  // oracle stops 0.8 m from the instance
  CHECK(rep.spl <= rep.success_rate);
  for (const auto& row : rep.rows) CHECK(row.angle_success == row.success);
}

TEST_CASE("policy agent matches the trainers' greedy evaluation") {
  policy::PolicyConfig pc;
  pc.obs_mode = policy::ObsMode::kCompass;
  pc.goal_mode = policy::GoalMode::kImage;
  pc.compass_hidden = 16;
  pc.prev_action_embed_dim = 8;
  pc.lstm_hidden = 32;
  policy::PolicyNet<float> net(pc, 31);
  // Jitter the zero-initialized heads so argmax is not uniformly STOP.
  Rng jitter(7);
  for (auto& [name, t] : net.params.items())
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] += static_cast<float>(jitter.normal() * 0.05);

  train::VecEnvConfig ec;
  ec.num_envs = 1;
  ec.task = train::Task::kImageNav;
  ec.obs_mode = policy::ObsMode::kCompass;
  ec.scene_seed = 7;
  ec.episode_seed = 21;
  ec.sampler.max_steps = 50;
  const double sr_train = train::greedy_success_rate(net, ec, 8);

  eval::EvalConfig cfg;
  cfg.num_episodes = 8;
  cfg.scene_seed = 7;
  cfg.episode_seed = 21;
  cfg.sampler.max_steps = 50;
  eval::PolicyAgent agent(net);
  const eval::EvalReport rep = eval::evaluate(agent, cfg);
  CHECK(rep.success_rate >= 0.0);
  CHECK(rep.success_rate <= 1.0);
  CHECK(rep.spl <= rep.success_rate + 1e-12);
  // Different episode streams, same policy: both must be deterministic.
  eval::PolicyAgent again(net);
  CHECK(eval::evaluate(again, cfg).to_json().dump() == rep.to_json().dump());
  CHECK(train::greedy_success_rate(net, ec, 8) == sr_train);
}

TEST_CASE("report JSON and CSV round-trip") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 5;
  cfg.scene_seed = 3;
  cfg.episode_seed = 77;
  eval::OracleAgent oracle;
  const eval::EvalReport rep = eval::evaluate(oracle, cfg);

  const nlohmann::json j = rep.to_json();
  CHECK(j.at("format") == "nav-eval-report");
  CHECK(j.at("version") == 1);
  const eval::EvalReport back = eval::EvalReport::from_json(j);
  CHECK(back.num_episodes == rep.num_episodes);
  CHECK(back.success_rate == rep.success_rate);
  CHECK(back.spl == rep.spl);
  CHECK(back.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(back.rows[i].episode == rep.rows[i].episode);
    CHECK(back.rows[i].scene_seed == rep.rows[i].scene_seed);
    CHECK(back.rows[i].spl == rep.rows[i].spl);
    CHECK(back.rows[i].failure == rep.rows[i].failure);
  }
  CHECK(back.to_json().dump() == j.dump());

  int successes = 0;
  for (const auto& [cat, n] : rep.failure_counts())
    if (cat == eval::FailureCategory::kSuccess) successes = n;
  CHECK(successes == rep.num_episodes);

  const std::string csv = rep.to_csv();
  CHECK(count_of(csv, "\n") == rep.num_episodes + 1);
  CHECK(csv.rfind("episode,scene_seed,success,", 0) == 0);

  nlohmann::json bad = j;
  bad["format"] = "something-else";
  CHECK_THROWS_AS(eval::EvalReport::from_json(bad), IoError);
}

TEST_CASE("topdown SVG renders outline, markers, radius and path") {
  const sim::Scene scene = sim::generate_scene(11);
  Rng rng(5);
  const sim::EpisodeSpec ep = sim::sample_episode(scene, rng, false);
  eval::OracleAgent oracle;
  const sim::TrajectoryRecord traj = eval::run_episode(scene, ep, oracle);

  const std::string svg = eval::render_topdown(scene, traj);
  CHECK(svg.rfind("<svg ", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count_of(svg, "<polyline") == 1);
  CHECK(count_of(svg, "<circle") == 1);
  CHECK(count_of(svg, "#3cb043") == 1);   // start square
  CHECK(count_of(svg, "#ffcba4") == 1);   // goal square
  CHECK(count_of(svg, "stroke-dasharray") >= 2);
  CHECK(count_of(svg, "<") == count_of(svg, ">"));  // tag balance
  CHECK(count_of(svg, "<g") == count_of(svg, "</g>"));
  CHECK(svg.find('&') == std::string::npos);

  // Path element size: one point per recorded state.
  const std::size_t at = svg.find("points=\"");
  const std::size_t end = svg.find('"', at + 8);
  const std::string pts = svg.substr(at + 8, end - at - 8);
  CHECK(count_of(pts, ",") == static_cast<int>(traj.steps.size()) + 1);

  // Empty trajectory: start marker only, still a valid document.
  sim::TrajectoryRecord empty;
  empty.episode = ep;
  empty.initial = traj.initial;
  const std::string svg2 = eval::render_topdown(scene, empty);
  CHECK(count_of(svg2, "<polyline") == 0);
  CHECK(count_of(svg2, "#3cb043") == 1);
  CHECK(count_of(svg2, "<") == count_of(svg2, ">"));

  // A weave across the goal radius keeps every crossing visible.
  sim::TrajectoryRecord weave;
  weave.episode = ep;
  weave.initial = traj.initial;
  for (int i = 0; i < 14; ++i) {
    const double r = i % 2 == 0 ? 0.5 : 1.5;
    weave.steps.push_back(rec(ep.goal.x + r * std::cos(i),
                              ep.goal.y + r * std::sin(i), r, 0.0));
  }
  weave.stop_called = true;
  const std::string svg3 = eval::render_topdown(scene, weave);
  const std::size_t at3 = svg3.find("points=\"");
  const std::size_t end3 = svg3.find('"', at3 + 8);
  CHECK(count_of(svg3.substr(at3 + 8, end3 - at3 - 8), ",") == 15);
}

TEST_CASE("eval config validation") {
  eval::EvalConfig cfg;
  cfg.num_episodes = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.num_episodes = 4;
  cfg.episodes_per_scene = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.episodes_per_scene = 2;
  CHECK_NOTHROW(cfg.validate());
}
