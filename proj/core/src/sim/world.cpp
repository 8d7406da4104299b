#include "moeact/sim/world.hpp"

#include <algorithm>

namespace moeact::sim {

void SimConfig::validate() const {
  if (nodes < 3) throw ConfigError("sim.nodes must be >= 3, got " + std::to_string(nodes));
  if (rest_length <= 0 || grasp_radius <= 0 || max_step <= 0 || pixels_per_unit < 0)
    throw ConfigError("sim: lengths must be positive");
  if (straightness_threshold <= 0 || straightness_threshold > 1)
    throw ConfigError("sim.straightness_threshold must be in (0,1]");
  if (target_lo < 1 || target_hi >= nodes - 1 || target_lo > target_hi)
    throw ConfigError("sim: target node range must cover interior nodes only");
  if (image_size <= 0 || image_size % 8 != 0)
    throw ConfigError("sim.image_size must be a positive multiple of 8");
}

std::vector<int> SimConfig::eligible_targets() const {
  std::vector<int> out;
  for (int i = target_lo; i <= target_hi; ++i) {
    if (std::max(i, nodes - 1 - i) < min_span_segments) continue;  // too little slack
    const bool held_out = (i == holdout_a || i == holdout_b);
    if (held_out == holdout_targets) out.push_back(i);
  }
  if (out.empty()) throw ConfigError("sim: no eligible target nodes");
  return out;
}

float straightness(const Vec3* nodes, int count) {
  if (count < 2) throw ShapeError("straightness: need at least 2 nodes");
  float arc = 0;
  for (int i = 1; i < count; ++i) arc += (nodes[i] - nodes[i - 1]).norm();
  if (arc <= 0) throw NumericError("straightness: zero arc length");
  return (nodes[count - 1] - nodes[0]).norm() / arc;
}

float current_tension(const SceneState& s) {
  if (s.grasped_node < 0 || !s.surgeon_grasping_end || s.surgeon_node < 0) return 0.0f;
  const int a = std::min(s.surgeon_node, s.grasped_node);
  const int b = std::max(s.surgeon_node, s.grasped_node);
  if (b - a < 1) return 0.0f;
  return straightness(s.chain.data() + a, b - a + 1);
}

namespace {

Vec3 camera_dir(float elevation, float azimuth) {
  const float ce = std::cos(elevation);
  return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation)};
}

CameraPose make_camera(float elevation, float azimuth, float zoom, float baseline) {
  CameraPose cam;
  cam.look_at = {0.0f, 0.05f, 0.0f};
  cam.position = cam.look_at + camera_dir(elevation, azimuth) * 2.0f;
  const Vec3 view = (cam.look_at - cam.position).normalized();
  const Vec3 zhat{0, 0, 1};
  cam.up = (zhat - view * zhat.dot(view)).normalized();
  cam.zoom = zoom;
  cam.baseline = baseline;
  return cam;
}

Vec3 rotate_z(const Vec3& v, float angle) {
  const float c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

// local chain heading at node i
Vec3 chain_dir(const std::vector<Vec3>& chain, int i) {
  const int n = static_cast<int>(chain.size());
  const int a = std::max(0, i - 1), b = std::min(n - 1, i + 1);
  return (chain[b] - chain[a]).normalized();
}

Vec3 marker_position(const SceneState& s) {
  const Vec3 dir = chain_dir(s.chain, s.target_node);
  const Vec3 perp = dir.cross(Vec3{0, 0, 1}).normalized() * static_cast<float>(s.marker_side);
  return s.chain[s.target_node] + perp * 0.22f + Vec3{0, 0, 0.04f};
}

int far_end_node(const SimConfig& cfg, int target) {
  return target <= (cfg.nodes - 1) / 2 ? cfg.nodes - 1 : 0;
}

// one Gauss-Seidel sweep over the distance constraints
void relax_sweep(const SimConfig& cfg, std::vector<Vec3>& chain, int pin_a, int pin_b) {
  const float gain = cfg.stiffness * (1.0f - cfg.damping);
  const int n = static_cast<int>(chain.size());
  for (int i = 0; i + 1 < n; ++i) {
    Vec3 seg = chain[i + 1] - chain[i];
    const float len = seg.norm();
    if (len < 1e-9f) continue;
    const float err = len - cfg.rest_length;
    if (err <= 0) continue;  // rope: resists stretch, not compression
    const Vec3 corr = seg * (err / len * gain);
    const bool lock0 = (i == pin_a || i == pin_b);
    const bool lock1 = (i + 1 == pin_a || i + 1 == pin_b);
    if (lock0 && lock1) continue;
    if (lock0) {
      chain[i + 1] += corr * -1.0f;
    } else if (lock1) {
      chain[i] += corr;
    } else {
      chain[i] += corr * 0.5f;
      chain[i + 1] += corr * -0.5f;
    }
  }
}

// hard cap on segment length, walking away from `anchor`; when the clamp has
// to move the grasped node, the gripper tip is dragged along with it
void clamp_stretch(const SimConfig& cfg, SceneState& s, int anchor) {
  const float max_len = cfg.rest_length * (1.0f + cfg.stretch_bound);
  auto clamp_pair = [&](int fixed, int moving) {
    Vec3 seg = s.chain[moving] - s.chain[fixed];
    const float len = seg.norm();
    if (len <= max_len || len < 1e-9f) return;
    const Vec3 target = s.chain[fixed] + seg * (max_len / len);
    const Vec3 shift = target - s.chain[moving];
    s.chain[moving] = target;
    if (moving == s.grasped_node) s.gripper_tip += shift;
  };
  const int n = static_cast<int>(s.chain.size());
  for (int i = anchor + 1; i < n; ++i) clamp_pair(i - 1, i);
  for (int i = anchor - 1; i >= 0; --i) clamp_pair(i + 1, i);
}

}  // namespace

CameraPose camera_canonical(const SimConfig& cfg) {
  return make_camera(cfg.cam_elevation, cfg.cam_azimuth, cfg.cam_zoom, cfg.stereo_baseline);
}

CameraPose camera_random(const SimConfig& cfg, Rng& rng) {
  const float elev = cfg.cam_elevation + rng.uniform(-cfg.cam_elevation_range, cfg.cam_elevation_range);
  const float azim = cfg.cam_azimuth + rng.uniform(-cfg.cam_azimuth_range, cfg.cam_azimuth_range);
  const float zoom = cfg.cam_zoom * rng.uniform(cfg.cam_zoom_lo, cfg.cam_zoom_hi);
  return make_camera(elev, azim, zoom, cfg.stereo_baseline);
}

std::pair<SceneState, CameraPose> reset(uint64_t seed, const SimConfig& cfg,
                                        bool randomize_camera) {
  cfg.validate();
  Rng rng(seed);
  SceneState s;

  // chain along a gently curved polyline, centered near the upper scene half
  const float heading0 = rng.uniform(-cfg.chain_angle_range, cfg.chain_angle_range);
  float bend = rng.uniform(cfg.chain_bend_lo, cfg.chain_bend_hi);
  if (rng.uniform() < 0.5) bend = -bend;
  const Vec3 center{rng.uniform(-cfg.chain_center_jitter, cfg.chain_center_jitter),
                    0.30f + rng.uniform(-cfg.chain_center_jitter, cfg.chain_center_jitter) * 0.6f,
                    0.0f};
  s.chain.resize(static_cast<size_t>(cfg.nodes));
  Vec3 p{0, 0, 0};
  float heading = heading0;
  s.chain[0] = p;
  for (int i = 1; i < cfg.nodes; ++i) {
    heading += bend;
    p += Vec3{std::cos(heading), std::sin(heading), 0.0f} * cfg.rest_length;
    s.chain[static_cast<size_t>(i)] = p;
  }
  Vec3 centroid{0, 0, 0};
  for (const auto& q : s.chain) centroid += q * (1.0f / static_cast<float>(cfg.nodes));
  for (auto& q : s.chain) q = q - centroid + center;

  const auto targets = cfg.eligible_targets();
  s.target_node = targets[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(targets.size()) - 1))];
  s.marker_side = rng.uniform() < 0.5 ? -1 : 1;

  s.gripper_tip = {rng.uniform(-0.6f, 0.6f), rng.uniform(-0.75f, -0.40f), rng.uniform(0.08f, 0.18f)};
  s.gripper_closed = true;
  s.surgeon_tip = {3.0f, 3.0f, 1.0f};  // parked out of frame
  s.surgeon_visible = false;

  s.appear_delay = rng.uniform_int(cfg.appear_delay_lo, cfg.appear_delay_hi);
  s.handover_delay = rng.uniform_int(cfg.handover_delay_lo, cfg.handover_delay_hi);

  const int end = far_end_node(cfg, s.target_node);
  const Vec3 away = (s.chain[static_cast<size_t>(s.target_node)] - s.chain[static_cast<size_t>(end)]).normalized();
  s.pull_dir = rotate_z(away, rng.uniform(-cfg.pull_angle_range, cfg.pull_angle_range));

  CameraPose cam = randomize_camera ? camera_random(cfg, rng) : camera_canonical(cfg);
  return {std::move(s), cam};
}

SceneState step(const SimConfig& cfg, const SceneState& state, Vec3 delta, bool close_cmd) {
  SceneState s = state;
  const int n = static_cast<int>(s.chain.size());

  // sanitize the action
  for (float* c : {&delta.x, &delta.y, &delta.z})
    if (!std::isfinite(*c)) *c = 0.0f;
  const float len = delta.norm();
  if (len > cfg.max_step) delta = delta * (cfg.max_step / len);

  // gripper transitions bind/release at the pre-motion tip position
  if (close_cmd && !s.gripper_closed) {
    s.gripper_closed = true;
    int best = -1;
    float best_d = cfg.grasp_radius;
    for (int i = 0; i < n; ++i) {
      const float d = (s.chain[static_cast<size_t>(i)] - s.gripper_tip).norm();
      if (d <= best_d) {
        best_d = d;
        best = i;
      }
    }
    s.grasped_node = best;
  } else if (!close_cmd && s.gripper_closed) {
    s.gripper_closed = false;
    s.grasped_node = -1;
  }

  // motion + chain relaxation
  const int pin_surgeon = s.surgeon_grasping_end ? s.surgeon_node : -1;
  const Vec3 inc = delta * (1.0f / static_cast<float>(cfg.substeps));
  for (int ss = 0; ss < cfg.substeps; ++ss) {
    s.gripper_tip += inc;
    if (s.grasped_node >= 0) s.chain[static_cast<size_t>(s.grasped_node)] = s.gripper_tip;
    for (int it = 0; it < cfg.relax_iters; ++it)
      relax_sweep(cfg, s.chain, pin_surgeon, s.grasped_node);
    const int anchor = pin_surgeon >= 0 ? pin_surgeon : (s.grasped_node >= 0 ? s.grasped_node : 0);
    clamp_stretch(cfg, s, anchor);
    if (s.grasped_node >= 0) s.gripper_tip = s.chain[static_cast<size_t>(s.grasped_node)];
  }

  // arc-length invariant: the clamp above must keep every segment bounded
  {
    const float max_len = cfg.rest_length * (1.0f + cfg.stretch_bound) * 1.001f;
    for (int i = 0; i + 1 < n; ++i)
      if ((s.chain[static_cast<size_t>(i + 1)] - s.chain[static_cast<size_t>(i)]).norm() > max_len)
        throw NumericError("sim.step: chain segment exceeded stretch bound");
  }

  // success bookkeeping
  if ((s.gripper_tip - s.chain[static_cast<size_t>(s.target_node)]).norm() <= cfg.grasp_radius)
    s.ever_reached = true;
  const bool grasp_correct = s.grasped_node >= 0 && std::abs(s.grasped_node - s.target_node) <= 1;
  if (grasp_correct) s.ever_grasped_correct = true;

  // task script
  switch (s.phase) {
    case 1:
      if (s.step_count + 1 >= s.appear_delay) {
        s.surgeon_visible = true;
        s.phase = 2;
      }
      break;
    case 2:
      if (grasp_correct) {
        s.phase = 3;
        s.phase3_entry = s.step_count;
      }
      break;
    case 3:
      if (s.step_count - s.phase3_entry + 1 >= s.handover_delay) {
        s.surgeon_grasping_end = true;
        s.surgeon_node = far_end_node(cfg, s.target_node);
        s.phase = 4;
      }
      break;
    default:
      break;
  }
  if (s.surgeon_visible) {
    s.surgeon_tip = s.surgeon_grasping_end ? s.chain[static_cast<size_t>(s.surgeon_node)]
                                           : marker_position(s);
  }

  const bool tension_ok = grasp_correct && s.surgeon_grasping_end &&
                          current_tension(s) >= cfg.straightness_threshold;
  if (s.phase == 4 && tension_ok) s.phase = 5;
  if (tension_ok) {
    ++s.tension_streak;
    s.ever_retracted = true;
  } else {
    s.tension_streak = 0;
  }

  ++s.step_count;
  s.done = (s.phase == 5 && s.tension_streak >= cfg.tension_hold_steps) ||
           s.step_count >= cfg.max_steps;
  return s;
}

SuccessFlags success_flags(const SceneState& s, const SimConfig& cfg) {
  SuccessFlags f;
  f.end_to_end = s.tension_streak >= cfg.tension_hold_steps;
  f.retracting = s.ever_retracted || f.end_to_end;
  f.grasping = s.ever_grasped_correct || f.retracting;
  f.reaching = s.ever_reached || f.grasping;
  return f;
}

DemoAction scripted_demonstrator(const SimConfig& cfg, const SceneState& s, Rng& rng) {
  const float nb = cfg.demo_noise * cfg.max_step;
  auto noise = [&]() -> Vec3 {
    return {rng.uniform(-nb, nb), rng.uniform(-nb, nb), rng.uniform(-nb, nb)};
  };

  DemoAction a;
  switch (s.phase) {
    case 1:
      a.delta = noise();
      a.close_cmd = true;
      break;
    case 2: {
      const Vec3 to = s.chain[static_cast<size_t>(s.target_node)] - s.gripper_tip;
      const float dist = to.norm();
      if (s.gripper_closed) {
        // initial closed state, a missed close, or a wrong grasp: open first
        a.delta = noise();
        a.close_cmd = false;
      } else if (dist > 0.6f * cfg.grasp_radius) {
        // proportional approach, saturating at max_step and slowing near the target
        const float speed = std::min(cfg.max_step, 0.25f * dist);
        a.delta = to * (speed / dist) + noise();
        a.close_cmd = false;
      } else {
        a.delta = {0, 0, 0};
        a.close_cmd = true;
      }
      break;
    }
    case 3:
      a.delta = noise();
      a.close_cmd = true;
      break;
    case 4:
      a.delta = s.pull_dir * (cfg.pull_speed_frac * cfg.max_step) + noise();
      a.close_cmd = true;
      break;
    default:  // maintain tension
      a.delta = {0, 0, 0};
      a.close_cmd = true;
      break;
  }
  return a;
}

}  // namespace moeact::sim
