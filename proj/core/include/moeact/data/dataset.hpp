// Dataset manifest (text key=value with per-episode sections), train/val
// splits, phase frequency table, and the training chunk sampler.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "moeact/data/episode.hpp"

namespace moeact::data {

struct ManifestEntry {
  std::string path;  // relative to the manifest file
  uint64_t seed = 0;
  int steps = 0;
  bool train = true;
  sim::SuccessFlags flags;
};

struct DatasetManifest {
  uint64_t config_fingerprint = 0;
  std::vector<ManifestEntry> episodes;
  std::array<double, 5> phase_freq{};  // auto labels over the train split

  int train_count() const;
  int val_count() const;

  std::string serialize() const;
  static DatasetManifest parse(const std::string& text);
  uint64_t fingerprint() const { return fnv1a64(serialize()); }
};

// Assigns a seeded-shuffle val split (~val_fraction by episode, never by
// frame) and tallies train phase frequencies.
DatasetManifest build_manifest(const std::vector<Episode>& episodes,
                               const std::vector<std::string>& paths, uint64_t config_fingerprint,
                               double val_fraction, uint64_t split_seed);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// chunk of k future actions starting at frame t, masked past the episode end
struct TrainingSample {
  std::vector<float> observation;  // 2*H*W
  std::vector<float> actions;      // k*3
  std::vector<uint8_t> gripper;    // k
  std::vector<uint8_t> phase;      // k, 1..5 (0 where masked)
  std::vector<uint8_t> mask;       // k, 1 = valid
};

TrainingSample sample_chunk(const Episode& ep, int t, int k, bool use_gt_phase = false);

// Episodes resident in memory for training/eval. `fraction` keeps the first
// ceil(f * n) train episodes in manifest order.
struct LoadedDataset {
  std::vector<Episode> train;
  std::vector<Episode> val;
  std::array<double, 5> train_phase_freq{};
  std::vector<size_t> frame_offsets;  // cumulative train frame counts
  size_t total_train_frames = 0;

  // uniform (episode, frame) draw over train frames
  std::pair<int, int> draw_frame(Rng& rng) const;
};

LoadedDataset load_dataset(const std::string& manifest_path, double fraction = 1.0);

}  // namespace moeact::data
