// Demonstration episodes: recording, gripper/motion-based phase auto-labeling,
// and a checksummed binary file format with 8-bit quantized images.
#pragma once

#include <string>
#include <vector>

#include "moeact/sim/render.hpp"
#include "moeact/sim/world.hpp"

namespace moeact::data {

struct Episode {
  uint64_t seed = 0;
  uint64_t config_fingerprint = 0;
  sim::CameraPose camera;
  bool randomized_camera = false;
  sim::SuccessFlags flags;
  int height = 0;
  int width = 0;
  // per-timestep arrays, all length steps()
  std::vector<uint8_t> images;    // T * 2 * H * W, quantized by 1/255
  std::vector<float> positions;   // T * 3, tip before the step
  std::vector<float> deltas;      // T * 3, executed delta (terminal frame: zero)
  std::vector<uint8_t> gripper;   // T, 1 = closed
  std::vector<uint8_t> gt_phase;  // T, 1..5
  std::vector<uint8_t> auto_phase;

  int steps() const { return static_cast<int>(gripper.size()); }
  size_t frame_pixels() const { return 2 * static_cast<size_t>(height) * width; }

  // dequantized stereo frame, 2*H*W floats in [0,1]
  std::vector<float> frame(int t) const;
};

struct RecordOptions {
  bool randomize_camera = false;
  int max_retries = 20;
  float motion_eps_frac = 0.25f;  // of sim max_step
  int label_window = 3;
  bool keep_failures = false;  // bypass the success filter (diagnostics only)
};

// Runs the scripted demonstrator to termination. Only episodes with
// end-to-end success are kept; failed seeds are retried on a derived seed
// stream and reported in the error after max_retries.
Episode record_episode(uint64_t seed, const sim::SimConfig& cfg, const RecordOptions& opt);

// Labels phases from the gripper command stream and smoothed |delta| only.
// Output is non-decreasing.
std::vector<uint8_t> auto_label_phases(const std::vector<float>& deltas,
                                       const std::vector<uint8_t>& gripper, float motion_eps,
                                       int window);
std::vector<uint8_t> auto_label_phases(const Episode& ep, float motion_eps, int window);

// fraction of frames where auto labels match ground truth
double label_agreement(const Episode& ep);

void save_episode(const Episode& ep, const std::string& path);
Episode load_episode(const std::string& path);

// exact on-disk size for a given geometry
size_t episode_file_size(int steps, int height, int width);

}  // namespace moeact::data
