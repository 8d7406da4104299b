// Synthetic grasp-and-retract world: a damped spring chain on a plane, a
// point gripper, a scripted surgeon tool, and the five-phase task script
// (idle, approach & grasp, hold, retract, maintain tension).
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "moeact/common.hpp"
#include "moeact/rng.hpp"

namespace moeact::sim {

struct Vec3 {
  float x = 0, y = 0, z = 0;

  bool operator==(const Vec3&) const = default;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  float norm() const { return std::sqrt(x * x + y * y + z * z); }
  Vec3 normalized() const {
    const float n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
  }
};

struct SimConfig {
  // chain
  int nodes = 16;
  float rest_length = 0.11f;
  float stiffness = 0.85f;   // constraint correction gain per relaxation sweep
  float damping = 0.10f;     // fraction of each correction withheld
  int substeps = 4;
  int relax_iters = 8;
  float stretch_bound = 0.15f;
  // task
  float grasp_radius = 0.11f;
  float max_step = 0.045f;
  float straightness_threshold = 0.92f;  // tension proxy
  int max_steps = 160;
  int tension_hold_steps = 10;
  int target_lo = 4;
  int target_hi = 11;
  int min_span_segments = 9;  // guarantees slack to retract from any target
  int holdout_a = 5;  // reserved grasp nodes, never sampled unless holdout_targets
  int holdout_b = 10;
  bool holdout_targets = false;
  int appear_delay_lo = 6;
  int appear_delay_hi = 14;
  int handover_delay_lo = 8;
  int handover_delay_hi = 16;
  float demo_noise = 0.08f;       // per-axis noise, fraction of max_step
  float pull_speed_frac = 0.5f;   // retraction speed, fraction of max_step
  float pull_angle_range = 0.52f; // +-30 deg around the away-from-surgeon direction
  // scene placement randomization
  float chain_center_jitter = 0.15f;
  float chain_angle_range = 0.35f;
  float chain_bend_lo = 0.22f;  // heading change per segment, radians (sign random)
  float chain_bend_hi = 0.30f;
  // rendering
  int image_size = 64;
  float pixels_per_unit = 0.0f;  // 0: auto, 20 px/unit at 64px scaled with resolution
  float background = 0.12f;
  float render_gain = 1.0f;
  bool occluder = false;
  // camera
  float cam_elevation = 1.134f;  // radians above the plane
  float cam_azimuth = -1.5708f;
  float cam_zoom = 1.0f;
  float stereo_baseline = 0.4f;
  float cam_elevation_range = 0.4363f;
  float cam_azimuth_range = 0.4363f;
  float cam_zoom_lo = 0.8f;
  float cam_zoom_hi = 1.3f;

  void validate() const;
  std::vector<int> eligible_targets() const;
  float effective_ppu() const {
    return pixels_per_unit > 0 ? pixels_per_unit : static_cast<float>(image_size) * (20.0f / 64.0f);
  }
};

struct CameraPose {
  Vec3 position;
  Vec3 look_at;
  Vec3 up;
  float zoom = 1.0f;
  float baseline = 0.4f;

  bool operator==(const CameraPose&) const = default;
};

struct SceneState {
  std::vector<Vec3> chain;
  Vec3 gripper_tip;
  bool gripper_closed = true;
  Vec3 surgeon_tip;
  bool surgeon_visible = false;
  bool surgeon_grasping_end = false;
  int grasped_node = -1;
  int surgeon_node = -1;
  int phase = 1;
  int step_count = 0;
  bool done = false;

  // episode script state, sampled at reset
  int target_node = -1;
  Vec3 pull_dir;
  int marker_side = 1;
  int appear_delay = 0;
  int handover_delay = 0;
  int phase3_entry = -1;

  // success bookkeeping
  int tension_streak = 0;
  bool ever_reached = false;
  bool ever_grasped_correct = false;
  bool ever_retracted = false;
};

struct SuccessFlags {
  bool reaching = false;
  bool grasping = false;
  bool retracting = false;
  bool end_to_end = false;
};

// end-to-end distance over polyline arc length, in (0,1]
float straightness(const Vec3* nodes, int count);
inline float straightness(const std::vector<Vec3>& nodes) {
  return straightness(nodes.data(), static_cast<int>(nodes.size()));
}

// straightness of the span between the surgeon-held node and the grasped
// node; 0 when either grip is missing
float current_tension(const SceneState& s);

CameraPose camera_canonical(const SimConfig& cfg);
CameraPose camera_random(const SimConfig& cfg, Rng& rng);

std::pair<SceneState, CameraPose> reset(uint64_t seed, const SimConfig& cfg,
                                        bool randomize_camera);

SceneState step(const SimConfig& cfg, const SceneState& state, Vec3 delta, bool close_cmd);

SuccessFlags success_flags(const SceneState& s, const SimConfig& cfg);

// privileged scripted policy; noise magnitude from cfg.demo_noise
struct DemoAction {
  Vec3 delta;
  bool close_cmd = true;
};
DemoAction scripted_demonstrator(const SimConfig& cfg, const SceneState& s, Rng& rng);

}  // namespace moeact::sim
