#include "moeact/eval/rollout.hpp"

#include <chrono>
#include <cstdio>
#include <thread>

namespace moeact::eval {

const std::vector<std::string>& condition_names() {
  static const std::vector<std::string> names{
      "in_distribution", "novel_grasp_region", "low_illumination",
      "partial_occlusion", "shifted_camera",   "random_viewpoint"};
  return names;
}

std::string condition_name(Condition c) { return condition_names()[static_cast<size_t>(c)]; }

Condition parse_condition(const std::string& name) {
  const auto& names = condition_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Condition>(i);
  std::string msg = "unknown condition '" + name + "'; valid conditions:";
  for (const auto& n : names) msg += " " + n;
  throw ConfigError(msg);
}

bool is_ood(Condition c) {
  return c == Condition::novel_grasp_region || c == Condition::low_illumination ||
         c == Condition::partial_occlusion || c == Condition::shifted_camera;
}

sim::SimConfig condition_sim_config(sim::SimConfig cfg, Condition c) {
  switch (c) {
    case Condition::novel_grasp_region:
      cfg.holdout_targets = true;
      break;
    case Condition::low_illumination:
      cfg.render_gain = 0.4f;
      break;
    case Condition::partial_occlusion:
      cfg.occluder = true;
      break;
    case Condition::shifted_camera:
      cfg.cam_azimuth += 0.1745f;  // +10 degrees
      break;
    default:
      break;
  }
  return cfg;
}

RolloutResult rollout(const policy::PolicyNet& net, const sim::SimConfig& base_cfg, uint64_t seed,
                      Condition cond, int replan_interval) {
  if (replan_interval < 1 || replan_interval > net.config().chunk)
    throw ConfigError("rollout: replan_interval must be in [1, chunk]");
  const sim::SimConfig cfg = condition_sim_config(base_cfg, cond);
  const bool randomize_camera = cond == Condition::random_viewpoint;
  auto [state, camera] = sim::reset(seed, cfg, randomize_camera);

  const auto& pcfg = net.config();
  const auto basis = sim::camera_basis(camera);
  RolloutResult res;
  double infer_ms = 0;
  int infers = 0;

  while (!state.done) {
    const auto obs = sim::render_stereo(cfg, state, camera);
    std::vector<float> pixels;
    pixels.reserve(obs.left.size() * 2);
    pixels.insert(pixels.end(), obs.left.begin(), obs.left.end());
    pixels.insert(pixels.end(), obs.right.begin(), obs.right.end());

    const auto t0 = std::chrono::steady_clock::now();
    const auto out = net.infer(pixels);
    infer_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ++infers;

    for (int j = 0; j < replan_interval && !state.done; ++j) {
      sim::Vec3 delta{out.actions.at(j, 0), out.actions.at(j, 1), out.actions.at(j, 2)};
      delta = basis.camera_to_world(delta * pcfg.action_scale);
      const bool close_cmd = out.gripper.at(j) >= 0.5f;
      state = sim::step(cfg, state, delta, close_cmd);
      res.actions.push_back(delta);
      res.gripper_cmds.push_back(close_cmd ? 1 : 0);
      std::array<float, 5> row{};
      for (int h = 0; h < std::min(5, out.pi.dim(1)); ++h) row[static_cast<size_t>(h)] = out.pi.at(j, h);
      res.gate.push_back(row);
    }
  }

  res.flags = sim::success_flags(state, cfg);
  res.steps = state.step_count;
  res.mean_infer_ms = infers > 0 ? infer_ms / infers : 0.0;
  res.final_state = std::move(state);
  return res;
}

std::vector<RolloutResult> rollout_batch(const policy::PolicyNet& net,
                                         const sim::SimConfig& base_cfg, uint64_t seed_base, int n,
                                         Condition cond, int replan_interval, int threads) {
  std::vector<RolloutResult> results(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  const int workers = std::max(1, std::min(threads, n));
  auto run_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      try {
        results[static_cast<size_t>(i)] =
            rollout(net, base_cfg, seed_base + static_cast<uint64_t>(i), cond, replan_interval);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run_range(0, n);
  } else {
    const int per = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) {
      const int lo = w * per, hi = std::min(n, (w + 1) * per);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    run_range(0, std::min(per, n));
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

SuccessRow tally(const std::string& condition, const std::vector<RolloutResult>& results) {
  if (results.empty()) throw DataError("success table: empty result group for " + condition);
  SuccessRow row;
  row.condition = condition;
  row.n = static_cast<int>(results.size());
  for (const auto& r : results) {
    row.reaching += r.flags.reaching;
    row.grasping += r.flags.grasping;
    row.retracting += r.flags.retracting;
    row.end_to_end += r.flags.end_to_end;
  }
  return row;
}

std::string success_csv(const std::vector<SuccessRow>& rows) {
  std::string out = "condition,reaching,grasping,retracting,end_to_end,n\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d/%d,%d/%d,%d/%d,%d/%d,%d\n", r.condition.c_str(),
                  r.reaching, r.n, r.grasping, r.n, r.retracting, r.n, r.end_to_end, r.n, r.n);
    out += buf;
  }
  return out;
}

}  // namespace moeact::eval
