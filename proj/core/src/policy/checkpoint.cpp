#include "moeact/policy/checkpoint.hpp"

#include <cstring>

namespace moeact::policy {

namespace {

constexpr uint32_t kMagic = 0x4D43504Bu;
constexpr uint16_t kVersion = 1;

void write_meta(ByteWriter& w, const CheckpointMeta& m) {
  w.u32(kMagic);
  w.u16(kVersion);
  w.u16(0);
  w.u64(m.model_fingerprint);
  w.u64(m.full_fingerprint);
  w.u64(static_cast<uint64_t>(m.train_step));
  w.u64(m.rng_state);
  w.u8(m.has_optimizer ? 1 : 0);
}

CheckpointMeta read_meta(ByteReader& r, const std::string& path) {
  if (r.u32() != kMagic) throw IoError("not a checkpoint file: " + path);
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw IoError("checkpoint version mismatch in " + path + ": " + std::to_string(version));
  r.u16();
  CheckpointMeta m;
  m.model_fingerprint = r.u64();
  m.full_fingerprint = r.u64();
  m.train_step = static_cast<int64_t>(r.u64());
  m.rng_state = r.u64();
  m.has_optimizer = r.u8() != 0;
  return m;
}

void verify_crc(const std::vector<uint8_t>& buf, const std::string& path) {
  if (buf.size() < 4) throw IoError("checkpoint too short: " + path);
  uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (stored != crc32(buf.data(), buf.size() - 4))
    throw IoError("checkpoint checksum mismatch: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyNet& net, const nn::AdamW* optimizer,
                     const CheckpointMeta& meta) {
  std::vector<uint8_t> buf;
  ByteWriter w(buf);
  CheckpointMeta m = meta;
  m.has_optimizer = optimizer != nullptr;
  write_meta(w, m);

  const auto& named = net.named_parameters();
  w.u32(static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.u16(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<uint32_t>(t.dim(i)));
    w.f32_array(t.values());
  }

  if (optimizer) {
    auto* opt = const_cast<nn::AdamW*>(optimizer);
    w.u64(static_cast<uint64_t>(opt->step_count()));
    for (const auto& mvec : opt->first_moments()) w.f32_array(mvec);
    for (const auto& vvec : opt->second_moments()) w.f32_array(vvec);
  }

  w.u32(crc32(buf.data(), buf.size()));
  write_file(path, buf);
}

CheckpointMeta load_checkpoint(const std::string& path, PolicyNet& net, nn::AdamW* optimizer,
                               uint64_t expected_model_fp) {
  const auto buf = read_file(path);
  verify_crc(buf, path);
  ByteReader r(buf.data(), buf.size() - 4);
  CheckpointMeta m = read_meta(r, path);
  if (expected_model_fp != 0 && m.model_fingerprint != expected_model_fp)
    throw ConfigError("checkpoint model fingerprint " + to_hex(m.model_fingerprint) +
                      " does not match the resolved config " + to_hex(expected_model_fp));

  const uint32_t count = r.u32();
  const auto& named = net.named_parameters();
  if (count != named.size())
    throw IoError("checkpoint parameter count " + std::to_string(count) + " vs model " +
                  std::to_string(named.size()));
  for (const auto& [name, t] : named) {
    const uint16_t len = r.u16();
    std::string stored(len, '\0');
    r.bytes(stored.data(), len);
    if (stored != name)
      throw IoError("checkpoint parameter order mismatch: '" + stored + "' vs '" + name + "'");
    const uint8_t rank = r.u8();
    if (rank != static_cast<uint8_t>(t.rank()))
      throw IoError("checkpoint rank mismatch for " + name);
    for (int i = 0; i < t.rank(); ++i)
      if (r.u32() != static_cast<uint32_t>(t.dim(i)))
        throw IoError("checkpoint shape mismatch for " + name);
    auto values = const_cast<nn::Tensor&>(t).values().data();
    r.bytes(values, t.numel() * 4);
  }

  if (optimizer) {
    if (!m.has_optimizer)
      throw IoError("checkpoint " + path + " has no optimizer state (eval-only checkpoint)");
    optimizer->set_step_count(static_cast<int64_t>(r.u64()));
    for (auto& mvec : optimizer->first_moments()) r.bytes(mvec.data(), mvec.size() * 4);
    for (auto& vvec : optimizer->second_moments()) r.bytes(vvec.data(), vvec.size() * 4);
  }
  return m;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const auto buf = read_file(path);
  verify_crc(buf, path);
  ByteReader r(buf.data(), buf.size() - 4);
  return read_meta(r, path);
}

}  // namespace moeact::policy
