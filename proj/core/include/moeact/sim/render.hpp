// Orthographic stereo renderer: chain as a thick polyline, gripper as a disc
// whose brightness encodes open/closed, surgeon tool as a triangle. The right
// image shifts each point horizontally by baseline * depth * pixels-per-unit.
#pragma once

#include <string>
#include <vector>

#include "moeact/sim/world.hpp"

namespace moeact::sim {

struct Observation {
  int height = 0;
  int width = 0;
  std::vector<float> left;   // row-major, values in [0,1]
  std::vector<float> right;
};

// brightness constants, pre-gain
inline constexpr float kChainBrightness = 0.50f;
inline constexpr float kGripperOpenBrightness = 1.0f;
inline constexpr float kGripperClosedBrightness = 0.62f;
inline constexpr float kSurgeonBrightness = 0.95f;
inline constexpr float kOccluderValue = 0.5f;

// occluder rectangle (pixels), ~12% of a 64x64 frame, scaled with image size
struct OccluderRect {
  int x0, y0, x1, y1;
};
OccluderRect occluder_rect(int image_size);

Observation render_stereo(const SimConfig& cfg, const SceneState& state, const CameraPose& cam);

// analytic image-space projection of a world point (left eye; subtract
// baseline*depth*ppu from x for the right eye)
struct Projected {
  float x, y, depth;
};
Projected project_point(const SimConfig& cfg, const CameraPose& cam, const Vec3& p);

// right-handed orthonormal camera frame; actions and recorded tip positions
// live in these coordinates
struct CameraBasis {
  Vec3 right, up, view;

  Vec3 world_to_camera(const Vec3& v) const { return {right.dot(v), up.dot(v), view.dot(v)}; }
  Vec3 camera_to_world(const Vec3& v) const {
    return right * v.x + up * v.y + view * v.z;
  }
};
CameraBasis camera_basis(const CameraPose& cam);

void write_pgm(const std::string& path, const std::vector<float>& img, int height, int width);

}  // namespace moeact::sim
