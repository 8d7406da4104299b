// Run configuration: flat key=value file with [section] headers. The resolved
// merge of file + overrides is what gets serialized canonically and
// fingerprinted; checkpoints and manifests carry those fingerprints.
#pragma once

#include <string>
#include <vector>

#include "moeact/policy/net.hpp"
#include "moeact/sim/world.hpp"
#include "moeact/train/trainer.hpp"

namespace moeact::cfg {

struct EvalConfig {
  int rollouts = 20;
  int replan_interval = 4;  // chunk/2 by default
  uint64_t seed_base = 10000;
  int threads = 2;
  int bench_frames = 1000;
};

struct RunConfig {
  sim::SimConfig sim;
  policy::PolicyConfig policy;
  train::TrainConfig train;
  EvalConfig eval;
  uint64_t seed = 1;  // master seed: episode seeds and split assignment

  // ties policy geometry to the simulator and fills auto values
  void resolve();
};

RunConfig default_config();

// canonical text: every key, fixed order, fixed formatting
std::string serialize(const RunConfig& c);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// "section.key=value"
void apply_override(RunConfig& c, const std::string& spec);

uint64_t fingerprint(const RunConfig& c);        // whole config
uint64_t model_fingerprint(const RunConfig& c);  // sim+policy sections only
uint64_t sim_fingerprint(const RunConfig& c);    // sim section only (datasets)

}  // namespace moeact::cfg
