#pragma once

#include <span>
#include <vector>

#include "nav/common.hpp"
#include "nav/sim.hpp"

namespace nav::reward {

struct RewardConfig {
  double c_s = 5.0;             ///< success bonus weight
  double c_a = 5.0;             ///< angle-success bonus weight
  double r_g = 1.0;             ///< goal radius (m)
  double theta_g = 25.0 * kPi / 180.0;  ///< angle threshold (rad)
  double gamma_slack = 0.01;    ///< per-step slack penalty

  void validate() const;
};

/// Per-timestep reward inputs. `action` is the action taken at this step;
/// `is_terminal_stop` must hold exactly when it is STOP.
struct StepInfo {
  double d = 0.0;       ///< distance to goal (m), >= 0
  double theta = 0.0;   ///< heading error to goal (rad), in [0, pi]
  sim::Action action = sim::Action::kMoveForward;
  bool is_terminal_stop = false;

  void validate() const;
};

/// One transition's reward split into its four components.
struct RewardTerms {
  double sparse = 0.0;    ///< terminal success + angle-success bonuses
  double angle = 0.0;     ///< angle shaping
  double distance = 0.0;  ///< distance shaping
  double slack = 0.0;     ///< constant per-step penalty (negative)

  double total() const { return sparse + angle + distance + slack; }
};

/// Component sums over a trajectory. A closed loop whose shaping sums are
/// positive can be farmed for unbounded return, hence `hackable`.
struct ShapingAudit {
  double angle_term_sum = 0.0;
  double distance_term_sum = 0.0;
  double slack_sum = 0.0;
  double sparse_sum = 0.0;
  bool hackable = false;

  double total() const {
    return angle_term_sum + distance_term_sum + slack_sum + sparse_sum;
  }
};

using RewardFn = RewardTerms (*)(const StepInfo& prev, const StepInfo& cur,
                                 const RewardConfig& cfg);

/// r = c_s*[d<r_g][STOP] + c_a*[theta<theta_g][STOP]
///     + [d<r_g]*(theta_prev - theta) + (d_prev - d) - gamma_slack.
/// The angle term is gated on the *current* state being inside the radius
/// but is not a potential difference, which makes it farmable.
RewardTerms zer_reward(const StepInfo& prev, const StepInfo& cur,
                       const RewardConfig& cfg);

/// Same sparse terms and slack, but both shaping terms are differences of
/// state-only potentials Phi_d(s) = -d and Phi_a(s) = -theta*[d<r_g], so
/// every closed loop's shaping sum telescopes to zero.
RewardTerms potential_reward(const StepInfo& prev, const StepInfo& cur,
                             const RewardConfig& cfg);

/// Component-wise reward sums over a closed trajectory (first and last
/// states identical, no STOP anywhere). Flags the audit hackable when a
/// shaping component accumulates more than 1e-9 around the loop.
/// Throws ConfigError on an open trajectory or an embedded STOP.
ShapingAudit cycle_shaping_sum(std::span<const StepInfo> traj, RewardFn fn,
                               const RewardConfig& cfg);

/// The canonical 14-transition hack cycle: step inside the goal radius
/// facing away, spend six turns collecting the angle term, step back out,
/// and turn away for free. Closed (first state == last state), no STOP.
std::vector<StepInfo> hack_loop_trace(const RewardConfig& cfg);

}  // namespace nav::reward
