// Closed-loop policy evaluation: render -> infer -> execute a slice of the
// predicted chunk -> repeat, under in-distribution and shifted conditions.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "moeact/policy/net.hpp"
#include "moeact/sim/render.hpp"
#include "moeact/sim/world.hpp"

namespace moeact::eval {

enum class Condition {
  in_distribution,
  novel_grasp_region,
  low_illumination,
  partial_occlusion,
  shifted_camera,
  random_viewpoint,
};

const std::vector<std::string>& condition_names();
std::string condition_name(Condition c);
Condition parse_condition(const std::string& name);  // lists valid names on error
bool is_ood(Condition c);

// per-condition scene adjustments; random_viewpoint also randomizes the camera
sim::SimConfig condition_sim_config(sim::SimConfig base, Condition c);

struct RolloutResult {
  sim::SuccessFlags flags;
  int steps = 0;
  double mean_infer_ms = 0;  // wall time, excluded from deterministic outputs
  std::vector<sim::Vec3> actions;             // executed deltas
  std::vector<uint8_t> gripper_cmds;          // 1 = close
  std::vector<std::array<float, 5>> gate;     // pi row used at each executed step
  sim::SceneState final_state;
};

RolloutResult rollout(const policy::PolicyNet& net, const sim::SimConfig& base_cfg, uint64_t seed,
                      Condition cond, int replan_interval);

// n roll-outs on seeds seed_base..seed_base+n-1, fanned across threads,
// results in seed order
std::vector<RolloutResult> rollout_batch(const policy::PolicyNet& net,
                                         const sim::SimConfig& base_cfg, uint64_t seed_base, int n,
                                         Condition cond, int replan_interval, int threads);

struct SuccessRow {
  std::string condition;
  int reaching = 0, grasping = 0, retracting = 0, end_to_end = 0, n = 0;
};

SuccessRow tally(const std::string& condition, const std::vector<RolloutResult>& results);

// columns exactly: condition, reaching, grasping, retracting, end_to_end, n
// with counts preserved in numerator/denominator form
std::string success_csv(const std::vector<SuccessRow>& rows);

}  // namespace moeact::eval
