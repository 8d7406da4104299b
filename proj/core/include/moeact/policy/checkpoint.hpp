// Checkpoint file: versioned header, named-parameter table, raw float32
// payload, optional optimizer state, config fingerprints, trailing CRC.
#pragma once

#include <optional>
#include <string>

#include "moeact/nn/optim.hpp"
#include "moeact/policy/net.hpp"

namespace moeact::policy {

struct CheckpointMeta {
  uint64_t model_fingerprint = 0;  // sim+policy config sections
  uint64_t full_fingerprint = 0;   // whole resolved config
  int64_t train_step = 0;
  uint64_t rng_state = 0;
  bool has_optimizer = false;
};

void save_checkpoint(const std::string& path, const PolicyNet& net, const nn::AdamW* optimizer,
                     const CheckpointMeta& meta);

// Loads parameters into an already-constructed net of matching architecture.
// `expected_model_fp`, when nonzero, must match the stored model fingerprint.
// Pass an optimizer to restore its state (resume); eval loads pass nullptr
// and tolerate checkpoints saved without optimizer state.
CheckpointMeta load_checkpoint(const std::string& path, PolicyNet& net, nn::AdamW* optimizer,
                               uint64_t expected_model_fp);

// header-only peek (fingerprints, step) without loading tensors
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace moeact::policy
