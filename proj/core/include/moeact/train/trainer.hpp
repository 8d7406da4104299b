// Optimization loop: threaded per-sample gradient evaluation with fixed-order
// reduction, AdamW with linear warm-up, periodic validation, metric CSV and
// checkpoint emission. Bit-deterministic for a given (config, seed).
#pragma once

#include <optional>
#include <string>

#include "moeact/data/dataset.hpp"
#include "moeact/nn/optim.hpp"
#include "moeact/policy/checkpoint.hpp"
#include "moeact/policy/net.hpp"
#include "moeact/train/loss.hpp"

namespace moeact::train {

struct TrainConfig {
  LossWeights weights;
  nn::AdamWConfig<float> optim;
  int warmup_steps = 500;
  int batch_size = 16;
  int total_steps = 4000;
  int eval_interval = 250;
  uint64_t seed = 1;
  double fraction = 1.0;     // applied when loading the dataset
  bool use_gt_phase = false; // train CE on ground truth instead of auto labels
  int threads = 2;
  int val_stride = 3;        // validation frame subsampling

  void validate() const {
    weights.validate();
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
    if (fraction <= 0 || fraction > 1) throw ConfigError("train.fraction must be in (0,1]");
    if (threads < 1) throw ConfigError("train.threads must be >= 1");
  }
};

struct ValMetrics {
  double total = 0, l1 = 0, ce = 0, bce = 0, kl = 0;
  double gating_accuracy = 0;  // argmax pi at chunk position 0 vs ground-truth phase
  int frames = 0;
};

struct TrainResult {
  policy::PolicyNet net;
  std::string final_checkpoint;
  ValMetrics final_val;
  int steps_run = 0;
};

// validation pass over the val split (stride-subsampled frames)
ValMetrics validate(const policy::PolicyNet& net, const TrainConfig& tcfg,
                    const data::LoadedDataset& ds, int threads);

// Runs the loop, writing metrics.csv, timing.csv, ckpt_latest.bin and
// ckpt_final.bin into run_dir. `resume_from` restores parameters, optimizer
// state and the data-order RNG, continuing bit-exactly.
TrainResult train(const policy::PolicyConfig& pcfg, const TrainConfig& tcfg,
                  const data::LoadedDataset& ds, const std::string& run_dir,
                  uint64_t model_fingerprint, uint64_t full_fingerprint,
                  const std::string& resume_from = "");

}  // namespace moeact::train
