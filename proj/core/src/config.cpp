#include "moeact/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

namespace moeact::cfg {

namespace {

enum class Kind { Int, Float, Bool, U64, Arch };

struct Binding {
  const char* section;
  const char* key;
  Kind kind;
  void* ptr;
};

std::vector<Binding> bindings(RunConfig& c) {
  auto& s = c.sim;
  auto& p = c.policy;
  auto& t = c.train;
  auto& e = c.eval;
  return {
      {"sim", "nodes", Kind::Int, &s.nodes},
      {"sim", "rest_length", Kind::Float, &s.rest_length},
      {"sim", "stiffness", Kind::Float, &s.stiffness},
      {"sim", "damping", Kind::Float, &s.damping},
      {"sim", "substeps", Kind::Int, &s.substeps},
      {"sim", "relax_iters", Kind::Int, &s.relax_iters},
      {"sim", "stretch_bound", Kind::Float, &s.stretch_bound},
      {"sim", "grasp_radius", Kind::Float, &s.grasp_radius},
      {"sim", "max_step", Kind::Float, &s.max_step},
      {"sim", "straightness_threshold", Kind::Float, &s.straightness_threshold},
      {"sim", "max_steps", Kind::Int, &s.max_steps},
      {"sim", "tension_hold_steps", Kind::Int, &s.tension_hold_steps},
      {"sim", "target_lo", Kind::Int, &s.target_lo},
      {"sim", "target_hi", Kind::Int, &s.target_hi},
      {"sim", "min_span_segments", Kind::Int, &s.min_span_segments},
      {"sim", "holdout_a", Kind::Int, &s.holdout_a},
      {"sim", "holdout_b", Kind::Int, &s.holdout_b},
      {"sim", "appear_delay_lo", Kind::Int, &s.appear_delay_lo},
      {"sim", "appear_delay_hi", Kind::Int, &s.appear_delay_hi},
      {"sim", "handover_delay_lo", Kind::Int, &s.handover_delay_lo},
      {"sim", "handover_delay_hi", Kind::Int, &s.handover_delay_hi},
      {"sim", "demo_noise", Kind::Float, &s.demo_noise},
      {"sim", "pull_speed_frac", Kind::Float, &s.pull_speed_frac},
      {"sim", "pull_angle_range", Kind::Float, &s.pull_angle_range},
      {"sim", "chain_center_jitter", Kind::Float, &s.chain_center_jitter},
      {"sim", "chain_angle_range", Kind::Float, &s.chain_angle_range},
      {"sim", "chain_bend_lo", Kind::Float, &s.chain_bend_lo},
      {"sim", "chain_bend_hi", Kind::Float, &s.chain_bend_hi},
      {"sim", "image_size", Kind::Int, &s.image_size},
      {"sim", "pixels_per_unit", Kind::Float, &s.pixels_per_unit},
      {"sim", "background", Kind::Float, &s.background},
      {"sim", "cam_elevation", Kind::Float, &s.cam_elevation},
      {"sim", "cam_azimuth", Kind::Float, &s.cam_azimuth},
      {"sim", "cam_zoom", Kind::Float, &s.cam_zoom},
      {"sim", "stereo_baseline", Kind::Float, &s.stereo_baseline},
      {"sim", "cam_elevation_range", Kind::Float, &s.cam_elevation_range},
      {"sim", "cam_azimuth_range", Kind::Float, &s.cam_azimuth_range},
      {"sim", "cam_zoom_lo", Kind::Float, &s.cam_zoom_lo},
      {"sim", "cam_zoom_hi", Kind::Float, &s.cam_zoom_hi},

      {"policy", "arch", Kind::Arch, &p.moe},
      {"policy", "patch", Kind::Int, &p.patch},
      {"policy", "d_model", Kind::Int, &p.d_model},
      {"policy", "heads", Kind::Int, &p.heads},
      {"policy", "enc_layers", Kind::Int, &p.enc_layers},
      {"policy", "dec_layers", Kind::Int, &p.dec_layers},
      {"policy", "post_layers", Kind::Int, &p.post_layers},
      {"policy", "latent_dim", Kind::Int, &p.latent_dim},
      {"policy", "chunk", Kind::Int, &p.chunk},
      {"policy", "action_dim", Kind::Int, &p.action_dim},
      {"policy", "num_phases", Kind::Int, &p.num_phases},
      {"policy", "head_hidden", Kind::Int, &p.head_hidden},
      {"policy", "ffn_hidden", Kind::Int, &p.ffn_hidden},
      {"policy", "action_scale", Kind::Float, &p.action_scale},

      {"train", "alpha", Kind::Float, &t.weights.alpha},
      {"train", "beta", Kind::Float, &t.weights.beta},
      {"train", "gamma", Kind::Float, &t.weights.gamma},
      {"train", "delta", Kind::Float, &t.weights.delta},
      {"train", "lr", Kind::Float, &t.optim.lr},
      {"train", "weight_decay", Kind::Float, &t.optim.weight_decay},
      {"train", "warmup_steps", Kind::Int, &t.warmup_steps},
      {"train", "batch_size", Kind::Int, &t.batch_size},
      {"train", "total_steps", Kind::Int, &t.total_steps},
      {"train", "eval_interval", Kind::Int, &t.eval_interval},
      {"train", "seed", Kind::U64, &t.seed},
      {"train", "use_gt_phase", Kind::Bool, &t.use_gt_phase},
      {"train", "threads", Kind::Int, &t.threads},
      {"train", "val_stride", Kind::Int, &t.val_stride},

      {"eval", "rollouts", Kind::Int, &e.rollouts},
      {"eval", "replan_interval", Kind::Int, &e.replan_interval},
      {"eval", "seed_base", Kind::U64, &e.seed_base},
      {"eval", "threads", Kind::Int, &e.threads},
      {"eval", "bench_frames", Kind::Int, &e.bench_frames},

      {"run", "seed", Kind::U64, &c.seed},
  };
}

std::string format_value(const Binding& b) {
  char buf[64];
  switch (b.kind) {
    case Kind::Int:
      std::snprintf(buf, sizeof(buf), "%d", *static_cast<int*>(b.ptr));
      return buf;
    case Kind::Float:
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(*static_cast<float*>(b.ptr)));
      return buf;
    case Kind::Bool:
      return *static_cast<bool*>(b.ptr) ? "1" : "0";
    case Kind::U64:
      std::snprintf(buf, sizeof(buf), "%llu",
                    static_cast<unsigned long long>(*static_cast<uint64_t*>(b.ptr)));
      return buf;
    case Kind::Arch:
      return *static_cast<bool*>(b.ptr) ? "moe" : "baseline";
  }
  return "";
}

void assign_value(const Binding& b, const std::string& value) {
  try {
    switch (b.kind) {
      case Kind::Int:
        *static_cast<int*>(b.ptr) = std::stoi(value);
        return;
      case Kind::Float:
        *static_cast<float*>(b.ptr) = std::stof(value);
        return;
      case Kind::Bool:
        if (value == "1" || value == "true")
          *static_cast<bool*>(b.ptr) = true;
        else if (value == "0" || value == "false")
          *static_cast<bool*>(b.ptr) = false;
        else
          throw ConfigError("expected boolean");
        return;
      case Kind::U64:
        *static_cast<uint64_t*>(b.ptr) = std::stoull(value);
        return;
      case Kind::Arch:
        if (value == "moe")
          *static_cast<bool*>(b.ptr) = true;
        else if (value == "baseline")
          *static_cast<bool*>(b.ptr) = false;
        else
          throw ConfigError("arch must be 'moe' or 'baseline', got '" + value + "'");
        return;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(std::string("bad value '") + value + "' for " + b.section + "." + b.key);
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string serialize_sections(RunConfig& c, int scope) {
  // scope 0: everything, 1: sim+policy, 2: sim only
  auto binds = bindings(c);
  std::ostringstream out;
  std::string current;
  for (const auto& b : binds) {
    const std::string sec = b.section;
    if (scope == 1 && sec != "sim" && sec != "policy") continue;
    if (scope == 2 && sec != "sim") continue;
    if (current != b.section) {
      current = b.section;
      out << "[" << current << "]\n";
    }
    out << b.key << " = " << format_value(b) << "\n";
  }
  return out.str();
}

}  // namespace

void RunConfig::resolve() {
  policy.image_size = sim.image_size;
  if (policy.action_scale <= 0) policy.action_scale = sim.max_step;
  sim.validate();
  policy.validate();
  train.validate();
  if (eval.rollouts < 1) throw ConfigError("eval.rollouts must be >= 1");
  if (eval.replan_interval < 1 || eval.replan_interval > policy.chunk)
    throw ConfigError("eval.replan_interval must be in [1, policy.chunk]");
}

RunConfig default_config() {
  RunConfig c;
  c.policy.action_scale = 0;  // auto: sim.max_step
  c.resolve();
  return c;
}

std::string serialize(const RunConfig& c) {
  RunConfig copy = c;
  return serialize_sections(copy, 0);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  c.policy.action_scale = 0;
  auto binds = bindings(c);
  std::istringstream in(text);
  std::string line, section;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("bad section header: " + line);
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& b : binds)
      if (section == b.section && key == b.key) {
        assign_value(b, value);
        found = true;
        break;
      }
    if (!found) throw ConfigError("unknown config key: " + section + "." + key);
  }
  c.resolve();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

void apply_override(RunConfig& c, const std::string& spec) {
  const auto dot = spec.find('.');
  const auto eq = spec.find('=');
  if (dot == std::string::npos || eq == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value, got: " + spec);
  const std::string section = trim(spec.substr(0, dot));
  const std::string key = trim(spec.substr(dot + 1, eq - dot - 1));
  const std::string value = trim(spec.substr(eq + 1));
  auto binds = bindings(c);
  for (const auto& b : binds)
    if (section == b.section && key == b.key) {
      assign_value(b, value);
      c.resolve();
      return;
    }
  throw ConfigError("unknown config key: " + section + "." + key);
}

uint64_t fingerprint(const RunConfig& c) { return fnv1a64(serialize(c)); }

uint64_t model_fingerprint(const RunConfig& c) {
  RunConfig copy = c;
  return fnv1a64(serialize_sections(copy, 1));
}

uint64_t sim_fingerprint(const RunConfig& c) {
  RunConfig copy = c;
  return fnv1a64(serialize_sections(copy, 2));
}

}  // namespace moeact::cfg
