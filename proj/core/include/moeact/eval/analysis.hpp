// Trained-model analyses: gating confusion matrix, expert utilization against
// dataset phase frequencies, token-ablation saliency, data-scaling sweep, and
// the inference latency benchmark.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "moeact/data/dataset.hpp"
#include "moeact/eval/rollout.hpp"
#include "moeact/policy/net.hpp"
#include "moeact/train/trainer.hpp"

namespace moeact::eval {

struct ConfusionMatrix {
  int phases = 5;
  std::vector<int64_t> counts;  // rows = true phase, cols = argmax pi

  int64_t at(int true_phase, int predicted) const {
    return counts[static_cast<size_t>(true_phase) * phases + predicted];
  }
  int64_t row_sum(int true_phase) const;
  int64_t total() const;
  double accuracy() const;  // trace / total
  std::string csv() const;
};

// gate argmax at chunk position 0; ties break toward the lowest phase index
int argmax_gate(const policy::PolicyOutput& out, int phases);

ConfusionMatrix tally_confusion(const std::vector<int>& predicted,
                                const std::vector<int>& truth, int phases);

// argmax of pi at chunk position 0 on every validation frame vs ground truth
ConfusionMatrix gating_confusion(const policy::PolicyNet& net,
                                 const std::vector<data::Episode>& val_episodes, int threads);

struct UtilizationReport {
  std::array<double, 5> utilization{};  // argmax-pi frequency per expert
  std::array<double, 5> phase_freq{};   // dataset phase frequencies (train split)
  double tv_distance = 0;
  std::string csv() const;
};

UtilizationReport utilization_from_predictions(const std::vector<int>& predicted,
                                               const std::array<double, 5>& dataset_phase_freq);

UtilizationReport expert_utilization(const policy::PolicyNet& net,
                                     const std::vector<data::Episode>& val_episodes,
                                     const std::array<double, 5>& dataset_phase_freq, int threads);

struct SaliencyMap {
  int grid = 0;  // patches per image side
  std::vector<float> left;   // grid*grid, max-normalized to 1
  std::vector<float> right;
  std::string csv() const;
};

// token-ablation importance: zero one visual token, re-decode, measure the
// change in the predicted action norm summed over the chunk
SaliencyMap ablation_saliency(const policy::PolicyNet& net, std::span<const float> obs);

struct BenchReport {
  double mean_ms = 0, p50_ms = 0, p95_ms = 0, hz = 0;
  int frames = 0;
  std::string text() const;
};

BenchReport inference_benchmark(const policy::PolicyNet& net, std::span<const float> obs,
                                int n_frames, int warmup = 10);

struct SweepCell {
  double fraction = 1.0;
  bool moe = true;
  SuccessRow success;
  std::string checkpoint;
};

struct SweepParams {
  std::vector<double> fractions{0.25, 0.5, 1.0};
  int rollouts = 20;
  uint64_t rollout_seed_base = 10000;
  int replan_interval = 4;
  int threads = 2;
  bool reuse_checkpoints = true;  // train only the missing cells
};

// trains (fraction x arch) cells with fixed seeds and evaluates each with
// in-distribution roll-outs; cell run dirs live under out_dir
std::vector<SweepCell> data_scaling_sweep(const std::string& manifest_path,
                                          const sim::SimConfig& sim_cfg,
                                          const policy::PolicyConfig& policy_cfg,
                                          const train::TrainConfig& train_cfg,
                                          const SweepParams& params, const std::string& out_dir,
                                          uint64_t model_fp_moe, uint64_t model_fp_baseline,
                                          uint64_t full_fp);

std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace moeact::eval
