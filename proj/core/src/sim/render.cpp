#include "moeact/sim/render.hpp"

#include <algorithm>
#include <cmath>

namespace moeact::sim {

namespace {

struct Frame {
  Vec3 right, up, view;
};

// right-handed (right, up, view) with world +x mapping to image +x under the
// canonical pose
Frame camera_frame(const CameraPose& cam) {
  Frame f;
  f.view = (cam.look_at - cam.position).normalized();
  f.right = f.view.cross(cam.up).normalized();
  f.up = f.right.cross(f.view).normalized();
  return f;
}

struct Canvas {
  int h, w;
  std::vector<float>& px;

  void splat_max(int x, int y, float v) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    float& p = px[static_cast<size_t>(y) * w + x];
    p = std::max(p, v);
  }
};

// filled disc with a half-pixel soft edge, max-composited
void draw_disc(Canvas& c, float cx, float cy, float radius, float value) {
  const int x0 = static_cast<int>(std::floor(cx - radius - 1));
  const int x1 = static_cast<int>(std::ceil(cx + radius + 1));
  const int y0 = static_cast<int>(std::floor(cy - radius - 1));
  const int y1 = static_cast<int>(std::ceil(cy + radius + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float d = std::hypot(static_cast<float>(x) - cx, static_cast<float>(y) - cy);
      const float a = std::clamp(radius + 0.5f - d, 0.0f, 1.0f);
      if (a > 0) c.splat_max(x, y, value * a);
    }
}

// capsule around a segment
void draw_segment(Canvas& c, float ax, float ay, float bx, float by, float radius, float value) {
  const float minx = std::min(ax, bx) - radius - 1, maxx = std::max(ax, bx) + radius + 1;
  const float miny = std::min(ay, by) - radius - 1, maxy = std::max(ay, by) + radius + 1;
  const float dx = bx - ax, dy = by - ay;
  const float len2 = dx * dx + dy * dy;
  for (int y = static_cast<int>(std::floor(miny)); y <= static_cast<int>(std::ceil(maxy)); ++y)
    for (int x = static_cast<int>(std::floor(minx)); x <= static_cast<int>(std::ceil(maxx)); ++x) {
      float t = 0;
      if (len2 > 0) {
        t = ((static_cast<float>(x) - ax) * dx + (static_cast<float>(y) - ay) * dy) / len2;
        t = std::clamp(t, 0.0f, 1.0f);
      }
      const float d = std::hypot(static_cast<float>(x) - (ax + t * dx), static_cast<float>(y) - (ay + t * dy));
      const float a = std::clamp(radius + 0.5f - d, 0.0f, 1.0f);
      if (a > 0) c.splat_max(x, y, value * a);
    }
}

// filled triangle via barycentric-style half-plane test with soft edges
void draw_triangle(Canvas& c, const float vx[3], const float vy[3], float value) {
  const float minx = std::min({vx[0], vx[1], vx[2]}) - 1, maxx = std::max({vx[0], vx[1], vx[2]}) + 1;
  const float miny = std::min({vy[0], vy[1], vy[2]}) - 1, maxy = std::max({vy[0], vy[1], vy[2]}) + 1;
  auto edge = [](float ax, float ay, float bx, float by, float px, float py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  const float area = edge(vx[0], vy[0], vx[1], vy[1], vx[2], vy[2]);
  if (std::abs(area) < 1e-6f) return;
  const float sgn = area > 0 ? 1.0f : -1.0f;
  for (int y = static_cast<int>(std::floor(miny)); y <= static_cast<int>(std::ceil(maxy)); ++y)
    for (int x = static_cast<int>(std::floor(minx)); x <= static_cast<int>(std::ceil(maxx)); ++x) {
      const float px = static_cast<float>(x), py = static_cast<float>(y);
      const float e0 = sgn * edge(vx[0], vy[0], vx[1], vy[1], px, py);
      const float e1 = sgn * edge(vx[1], vy[1], vx[2], vy[2], px, py);
      const float e2 = sgn * edge(vx[2], vy[2], vx[0], vy[0], px, py);
      const float m = std::min({e0, e1, e2});
      // edge functions scale with edge length; normalize roughly to pixels
      const float a = std::clamp(m / 3.0f + 0.5f, 0.0f, 1.0f);
      if (a > 0) c.splat_max(x, y, value * a);
    }
}

void render_eye(const SimConfig& cfg, const SceneState& s, const CameraPose& cam,
                std::vector<float>& img, bool right_eye) {
  const int hw = cfg.image_size;
  img.assign(static_cast<size_t>(hw) * hw, 0.0f);
  Canvas canvas{hw, hw, img};
  const Frame f = camera_frame(cam);
  const float ppu = cfg.effective_ppu() * cam.zoom;

  auto proj = [&](const Vec3& p) -> std::pair<float, float> {
    const Vec3 q = p - cam.look_at;
    const float depth = q.dot(f.view);
    float x = static_cast<float>(hw) * 0.5f + q.dot(f.right) * ppu;
    const float y = static_cast<float>(hw) * 0.5f - q.dot(f.up) * ppu;
    if (right_eye) x -= cam.baseline * depth * ppu;
    return {x, y};
  };

  const float chain_r = 0.04f * ppu;
  for (size_t i = 0; i + 1 < s.chain.size(); ++i) {
    auto [ax, ay] = proj(s.chain[i]);
    auto [bx, by] = proj(s.chain[i + 1]);
    draw_segment(canvas, ax, ay, bx, by, chain_r, kChainBrightness);
  }

  if (s.surgeon_visible) {
    // apex at the tool tip; the body flips downward once the surgeon starts
    // operating under maintained tension
    auto [tx, ty] = proj(s.surgeon_tip);
    const float sz = (s.phase >= 5 ? 0.24f : 0.16f) * ppu;
    const float dir = s.phase >= 5 ? 1.0f : -1.0f;
    const float vx[3] = {tx, tx - 0.8f * sz, tx + 0.8f * sz};
    const float vy[3] = {ty, ty + dir * 1.3f * sz, ty + dir * 1.3f * sz};
    draw_triangle(canvas, vx, vy, kSurgeonBrightness);
  }

  {
    auto [gx, gy] = proj(s.gripper_tip);
    const float r = 0.095f * ppu;
    draw_disc(canvas, gx, gy, r,
              s.gripper_closed ? kGripperClosedBrightness : kGripperOpenBrightness);
  }

  // background floor then illumination gain
  for (auto& p : img) p = std::clamp((std::max(p, cfg.background)) * cfg.render_gain, 0.0f, 1.0f);

  if (cfg.occluder) {
    const OccluderRect r = occluder_rect(hw);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) img[static_cast<size_t>(y) * hw + x] = kOccluderValue;
  }
}

}  // namespace

OccluderRect occluder_rect(int image_size) {
  const int w = image_size / 2;
  const int h = image_size / 4;
  const int x0 = image_size / 8;
  const int y0 = image_size / 8;
  return {x0, y0, x0 + w, y0 + h};
}

CameraBasis camera_basis(const CameraPose& cam) {
  const Frame f = camera_frame(cam);
  return {f.right, f.up, f.view};
}

Projected project_point(const SimConfig& cfg, const CameraPose& cam, const Vec3& p) {
  const Frame f = camera_frame(cam);
  const float ppu = cfg.effective_ppu() * cam.zoom;
  const Vec3 q = p - cam.look_at;
  Projected out;
  out.depth = q.dot(f.view);
  out.x = static_cast<float>(cfg.image_size) * 0.5f + q.dot(f.right) * ppu;
  out.y = static_cast<float>(cfg.image_size) * 0.5f - q.dot(f.up) * ppu;
  return out;
}

Observation render_stereo(const SimConfig& cfg, const SceneState& state, const CameraPose& cam) {
  Observation obs;
  obs.height = obs.width = cfg.image_size;
  render_eye(cfg, state, cam, obs.left, false);
  render_eye(cfg, state, cam, obs.right, true);
  return obs;
}

void write_pgm(const std::string& path, const std::vector<float>& img, int height, int width) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (float v : img)
    out.push_back(static_cast<char>(static_cast<uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)));
  write_text_file(path, out);
}

}  // namespace moeact::sim
