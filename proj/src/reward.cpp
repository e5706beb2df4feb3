#include "nav/reward.hpp"

#include <cmath>

namespace nav::reward {
namespace {

double sparse_bonus(const StepInfo& cur, const RewardConfig& cfg) {
  if (!cur.is_terminal_stop) return 0.0;
  double r = 0.0;
  if (cur.d < cfg.r_g) r += cfg.c_s;
  if (cur.theta < cfg.theta_g) r += cfg.c_a;
  return r;
}

}  // namespace

void RewardConfig::validate() const {
  NAV_CHECK_CONFIG(c_s > 0.0 && c_a > 0.0 && r_g > 0.0 && theta_g > 0.0 &&
                       gamma_slack > 0.0,
                   "reward config fields must be positive");
  NAV_CHECK_CONFIG(theta_g < kPi, "angle threshold must be below pi");
}

void StepInfo::validate() const {
  NAV_CHECK_CONFIG(d >= 0.0, "distance must be non-negative");
  NAV_CHECK_CONFIG(theta >= 0.0 && theta <= kPi, "theta must lie in [0, pi]");
  NAV_CHECK_CONFIG(is_terminal_stop == (action == sim::Action::kStop),
                   "is_terminal_stop must mirror action == STOP");
}

RewardTerms zer_reward(const StepInfo& prev, const StepInfo& cur,
                       const RewardConfig& cfg) {
  RewardTerms t;
  t.sparse = sparse_bonus(cur, cfg);
  t.angle = cur.d < cfg.r_g ? prev.theta - cur.theta : 0.0;
  t.distance = prev.d - cur.d;
  t.slack = -cfg.gamma_slack;
  return t;
}

RewardTerms potential_reward(const StepInfo& prev, const StepInfo& cur,
                             const RewardConfig& cfg) {
  const auto phi_a = [&](const StepInfo& s) {
    return s.d < cfg.r_g ? -s.theta : 0.0;
  };
  RewardTerms t;
  t.sparse = sparse_bonus(cur, cfg);
  t.angle = phi_a(cur) - phi_a(prev);
  t.distance = prev.d - cur.d;  // Phi_d(cur) - Phi_d(prev) with Phi_d = -d
  t.slack = -cfg.gamma_slack;
  return t;
}

ShapingAudit cycle_shaping_sum(std::span<const StepInfo> traj, RewardFn fn,
                               const RewardConfig& cfg) {
  NAV_CHECK_CONFIG(traj.size() >= 2, "cycle needs at least one transition");
  const StepInfo& first = traj.front();
  const StepInfo& last = traj.back();
  NAV_CHECK_CONFIG(
      std::fabs(first.d - last.d) <= 1e-12 &&
          std::fabs(first.theta - last.theta) <= 1e-12,
      "trajectory is not closed: first and last states differ");
  for (const StepInfo& s : traj) {
    s.validate();
    NAV_CHECK_CONFIG(!s.is_terminal_stop, "cycle must not contain STOP");
  }
  ShapingAudit audit;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    const RewardTerms t = fn(traj[i - 1], traj[i], cfg);
    audit.angle_term_sum += t.angle;
    audit.distance_term_sum += t.distance;
    audit.slack_sum += t.slack;
    audit.sparse_sum += t.sparse;
  }
  constexpr double kTol = 1e-9;
  audit.hackable =
      audit.angle_term_sum > kTol || audit.distance_term_sum > kTol;
  return audit;
}

std::vector<StepInfo> hack_loop_trace(const RewardConfig& cfg) {
  cfg.validate();
  const double d_out = cfg.r_g + 0.05;
  const double d_in = cfg.r_g - 0.2;
  using sim::Action;
  std::vector<StepInfo> traj;
  traj.push_back({d_out, kPi, Action::kMoveForward, false});
  traj.push_back({d_in, kPi, Action::kMoveForward, false});  // step inside
  for (int k = 1; k <= 6; ++k)  // turn toward the goal, farming the angle term
    traj.push_back({d_in, (6 - k) * (kPi / 6.0), Action::kTurnLeft, false});
  traj.push_back({d_out, 0.0, Action::kMoveForward, false});  // step back out
  for (int k = 1; k <= 6; ++k) {  // turn away again, unpenalized outside
    // Land on kPi exactly so the loop closes bit-for-bit.
    const double theta = k == 6 ? kPi : k * (kPi / 6.0);
    traj.push_back({d_out, theta, Action::kTurnRight, false});
  }
  return traj;
}

}  // namespace nav::reward
