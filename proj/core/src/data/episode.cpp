#include "moeact/data/episode.hpp"

#include <algorithm>
#include <cmath>

#include "moeact/common.hpp"

namespace moeact::data {

namespace {

constexpr uint32_t kMagic = 0x4D4F4550u;  // "PEOM" little-endian on disk
constexpr uint16_t kVersion = 1;
constexpr size_t kHeaderBytes = 82;
constexpr int kSections = 6;

uint8_t quantize(float v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
}

uint8_t pack_flags(const sim::SuccessFlags& f) {
  return static_cast<uint8_t>((f.reaching ? 1 : 0) | (f.grasping ? 2 : 0) |
                              (f.retracting ? 4 : 0) | (f.end_to_end ? 8 : 0));
}

sim::SuccessFlags unpack_flags(uint8_t b) {
  return {(b & 1) != 0, (b & 2) != 0, (b & 4) != 0, (b & 8) != 0};
}

}  // namespace

std::vector<float> Episode::frame(int t) const {
  const size_t n = frame_pixels();
  std::vector<float> out(n);
  const uint8_t* src = images.data() + static_cast<size_t>(t) * n;
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(src[i]) * (1.0f / 255.0f);
  return out;
}

std::vector<uint8_t> auto_label_phases(const std::vector<float>& deltas,
                                       const std::vector<uint8_t>& gripper, float motion_eps,
                                       int window) {
  const int t_count = static_cast<int>(gripper.size());
  std::vector<uint8_t> phase(static_cast<size_t>(t_count), 1);
  if (t_count == 0) return phase;

  std::vector<float> mag(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    const float dx = deltas[static_cast<size_t>(t) * 3];
    const float dy = deltas[static_cast<size_t>(t) * 3 + 1];
    const float dz = deltas[static_cast<size_t>(t) * 3 + 2];
    mag[static_cast<size_t>(t)] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  const int half = window / 2;
  auto smooth = [&](int t) {
    float acc = 0;
    int n = 0;
    for (int u = std::max(0, t - half); u <= std::min(t_count - 1, t + half); ++u) {
      acc += mag[static_cast<size_t>(u)];
      ++n;
    }
    return acc / static_cast<float>(n);
  };

  int first_open = -1;
  for (int t = 0; t < t_count; ++t)
    if (gripper[static_cast<size_t>(t)] == 0) {
      first_open = t;
      break;
    }
  if (first_open < 0) return phase;  // never opened: idle throughout

  int close_frame = -1;
  for (int t = first_open + 1; t < t_count; ++t)
    if (gripper[static_cast<size_t>(t)] != 0) {
      close_frame = t;
      break;
    }
  for (int t = first_open; t < t_count; ++t) phase[static_cast<size_t>(t)] = 2;
  if (close_frame < 0) return phase;

  int retract_start = -1;
  for (int t = close_frame + 1; t < t_count; ++t) {
    phase[static_cast<size_t>(t)] = 3;
    if (retract_start < 0 && smooth(t) >= motion_eps) retract_start = t;
  }
  if (retract_start < 0) return phase;

  int settle = -1;
  for (int t = retract_start; t < t_count; ++t) {
    phase[static_cast<size_t>(t)] = 4;
    if (settle < 0 && t > retract_start && smooth(t) < motion_eps) settle = t;
  }
  if (settle < 0) return phase;
  for (int t = settle; t < t_count; ++t) phase[static_cast<size_t>(t)] = 5;
  return phase;
}

std::vector<uint8_t> auto_label_phases(const Episode& ep, float motion_eps, int window) {
  return auto_label_phases(ep.deltas, ep.gripper, motion_eps, window);
}

double label_agreement(const Episode& ep) {
  if (ep.steps() == 0) return 1.0;
  int match = 0;
  for (int t = 0; t < ep.steps(); ++t)
    if (ep.gt_phase[static_cast<size_t>(t)] == ep.auto_phase[static_cast<size_t>(t)]) ++match;
  return static_cast<double>(match) / ep.steps();
}

Episode record_episode(uint64_t seed, const sim::SimConfig& cfg, const RecordOptions& opt) {
  std::vector<uint64_t> failed;
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    // retries draw from a derived stream so neighboring base seeds stay distinct
    uint64_t actual = seed;
    if (attempt > 0) {
      Rng derive(seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(attempt));
      actual = derive.next_u64();
    }

    auto [state, camera] = sim::reset(actual, cfg, opt.randomize_camera);
    Rng noise_rng(actual ^ 0x5eedf00dull);

    Episode ep;
    ep.seed = actual;
    ep.camera = camera;
    ep.randomized_camera = opt.randomize_camera;
    ep.height = ep.width = cfg.image_size;

    const auto basis = sim::camera_basis(camera);
    auto push_frame = [&](const sim::SceneState& s, const sim::Vec3& world_delta, bool cmd) {
      auto obs = sim::render_stereo(cfg, s, camera);
      for (float v : obs.left) ep.images.push_back(quantize(v));
      for (float v : obs.right) ep.images.push_back(quantize(v));
      // tip position and delta in camera coordinates
      const sim::Vec3 pos = basis.world_to_camera(s.gripper_tip - camera.look_at);
      const sim::Vec3 delta = basis.world_to_camera(world_delta);
      ep.positions.insert(ep.positions.end(), {pos.x, pos.y, pos.z});
      ep.deltas.insert(ep.deltas.end(), {delta.x, delta.y, delta.z});
      ep.gripper.push_back(cmd ? 1 : 0);
      ep.gt_phase.push_back(static_cast<uint8_t>(s.phase));
    };

    bool last_cmd = state.gripper_closed;
    while (!state.done) {
      const auto act = sim::scripted_demonstrator(cfg, state, noise_rng);
      const auto next = sim::step(cfg, state, act.delta, act.close_cmd);
      const sim::Vec3 executed = next.gripper_tip - state.gripper_tip;
      push_frame(state, executed, act.close_cmd);
      last_cmd = act.close_cmd;
      state = next;
    }
    push_frame(state, {0, 0, 0}, last_cmd);  // terminal frame

    ep.flags = sim::success_flags(state, cfg);
    ep.auto_phase = auto_label_phases(ep, opt.motion_eps_frac * cfg.max_step, opt.label_window);
    if (ep.flags.end_to_end || opt.keep_failures) return ep;
    failed.push_back(actual);
  }
  std::string msg = "record_episode: demonstrator failed after " +
                    std::to_string(opt.max_retries + 1) + " attempts, seeds:";
  for (uint64_t s : failed) msg += " " + std::to_string(s);
  throw DataError(msg);
}

size_t episode_file_size(int steps, int height, int width) {
  const size_t t = static_cast<size_t>(steps);
  const size_t per_step = 2 * static_cast<size_t>(height) * width + 12 + 12 + 3;
  return kHeaderBytes + t * per_step + (kSections + 1) * 4;
}

void save_episode(const Episode& ep, const std::string& path) {
  std::vector<uint8_t> buf;
  buf.reserve(episode_file_size(ep.steps(), ep.height, ep.width));
  ByteWriter w(buf);

  w.u32(kMagic);
  w.u16(kVersion);
  w.u16(0);
  w.u64(ep.seed);
  w.u64(ep.config_fingerprint);
  for (float v : {ep.camera.position.x, ep.camera.position.y, ep.camera.position.z,
                  ep.camera.look_at.x, ep.camera.look_at.y, ep.camera.look_at.z, ep.camera.up.x,
                  ep.camera.up.y, ep.camera.up.z, ep.camera.zoom, ep.camera.baseline})
    w.f32(v);
  w.u8(ep.randomized_camera ? 1 : 0);
  w.u8(pack_flags(ep.flags));
  w.u16(static_cast<uint16_t>(ep.height));
  w.u16(static_cast<uint16_t>(ep.width));
  w.u32(static_cast<uint32_t>(ep.steps()));
  w.f32(1.0f / 255.0f);  // image quantization scale
  if (buf.size() != kHeaderBytes) throw IoError("episode header layout drifted");

  uint32_t section_crc[kSections];
  auto begin_section = [&]() { return buf.size(); };
  auto end_section = [&](int idx, size_t start) {
    section_crc[idx] = crc32(buf.data() + start, buf.size() - start);
  };

  size_t s0 = begin_section();
  w.bytes(ep.images.data(), ep.images.size());
  end_section(0, s0);
  s0 = begin_section();
  w.f32_array(ep.positions);
  end_section(1, s0);
  s0 = begin_section();
  w.f32_array(ep.deltas);
  end_section(2, s0);
  s0 = begin_section();
  w.bytes(ep.gripper.data(), ep.gripper.size());
  end_section(3, s0);
  s0 = begin_section();
  w.bytes(ep.gt_phase.data(), ep.gt_phase.size());
  end_section(4, s0);
  s0 = begin_section();
  w.bytes(ep.auto_phase.data(), ep.auto_phase.size());
  end_section(5, s0);

  for (uint32_t c : section_crc) w.u32(c);
  w.u32(crc32(buf.data(), buf.size()));
  write_file(path, buf);
}

Episode load_episode(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < kHeaderBytes + (kSections + 1) * 4)
    throw IoError("episode file too short: " + path);

  {
    uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    const uint32_t actual = crc32(buf.data(), buf.size() - 4);
    if (stored != actual)
      throw IoError("episode checksum mismatch in " + path + " (file-level crc at offset " +
                    std::to_string(buf.size() - 4) + ")");
  }

  ByteReader r(buf.data(), buf.size());
  if (r.u32() != kMagic) throw IoError("not an episode file: " + path);
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw IoError("episode version mismatch: have " + std::to_string(version) + ", expected " +
                  std::to_string(kVersion));
  r.u16();

  Episode ep;
  ep.seed = r.u64();
  ep.config_fingerprint = r.u64();
  float cam[11];
  for (float& v : cam) v = r.f32();
  ep.camera.position = {cam[0], cam[1], cam[2]};
  ep.camera.look_at = {cam[3], cam[4], cam[5]};
  ep.camera.up = {cam[6], cam[7], cam[8]};
  ep.camera.zoom = cam[9];
  ep.camera.baseline = cam[10];
  ep.randomized_camera = r.u8() != 0;
  ep.flags = unpack_flags(r.u8());
  ep.height = r.u16();
  ep.width = r.u16();
  const uint32_t steps = r.u32();
  r.f32();  // image scale, fixed 1/255 in this version

  const size_t expect = episode_file_size(static_cast<int>(steps), ep.height, ep.width);
  if (buf.size() != expect)
    throw IoError("episode size mismatch: " + std::to_string(buf.size()) + " vs expected " +
                  std::to_string(expect));

  struct Section {
    const char* name;
    size_t bytes;
  };
  const size_t hw2 = 2 * static_cast<size_t>(ep.height) * ep.width;
  const Section sections[kSections] = {
      {"images", steps * hw2},   {"positions", steps * 12ull}, {"deltas", steps * 12ull},
      {"gripper", steps * 1ull}, {"gt_phase", steps * 1ull},   {"auto_phase", steps * 1ull}};

  // verify per-section checksums before trusting any payload
  {
    size_t off = kHeaderBytes;
    size_t crc_off = buf.size() - (kSections + 1) * 4;
    for (const auto& s : sections) {
      uint32_t stored;
      std::memcpy(&stored, buf.data() + crc_off, 4);
      const uint32_t actual = crc32(buf.data() + off, s.bytes);
      if (stored != actual)
        throw IoError("episode checksum mismatch in section '" + std::string(s.name) +
                      "' at offset " + std::to_string(off) + " of " + path);
      off += s.bytes;
      crc_off += 4;
    }
  }

  ep.images.resize(sections[0].bytes);
  r.bytes(ep.images.data(), ep.images.size());
  ep.positions.resize(steps * 3);
  r.bytes(ep.positions.data(), ep.positions.size() * 4);
  ep.deltas.resize(steps * 3);
  r.bytes(ep.deltas.data(), ep.deltas.size() * 4);
  ep.gripper.resize(steps);
  r.bytes(ep.gripper.data(), steps);
  ep.gt_phase.resize(steps);
  r.bytes(ep.gt_phase.data(), steps);
  ep.auto_phase.resize(steps);
  r.bytes(ep.auto_phase.data(), steps);
  return ep;
}

}  // namespace moeact::data
