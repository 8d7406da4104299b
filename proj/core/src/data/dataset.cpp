#include "moeact/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace moeact::data {

int DatasetManifest::train_count() const {
  return static_cast<int>(std::count_if(episodes.begin(), episodes.end(),
                                        [](const ManifestEntry& e) { return e.train; }));
}
int DatasetManifest::val_count() const { return static_cast<int>(episodes.size()) - train_count(); }

namespace {

std::string flags_code(const sim::SuccessFlags& f) {
  std::string s;
  if (f.reaching) s += 'R';
  if (f.grasping) s += 'G';
  if (f.retracting) s += 'T';
  if (f.end_to_end) s += 'E';
  return s.empty() ? "-" : s;
}

sim::SuccessFlags parse_flags_code(const std::string& s) {
  sim::SuccessFlags f;
  f.reaching = s.find('R') != std::string::npos;
  f.grasping = s.find('G') != std::string::npos;
  f.retracting = s.find('T') != std::string::npos;
  f.end_to_end = s.find('E') != std::string::npos;
  return f;
}

}  // namespace

std::string DatasetManifest::serialize() const {
  std::ostringstream out;
  out << "# dataset manifest\n";
  out << "version = 1\n";
  out << "config_fingerprint = " << to_hex(config_fingerprint) << "\n";
  out << "episode_count = " << episodes.size() << "\n";
  out << "train_count = " << train_count() << "\n";
  out << "val_count = " << val_count() << "\n";
  char freq[256];
  std::snprintf(freq, sizeof(freq), "%.6f,%.6f,%.6f,%.6f,%.6f", phase_freq[0], phase_freq[1],
                phase_freq[2], phase_freq[3], phase_freq[4]);
  out << "phase_freq = " << freq << "\n";
  for (size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    out << "[episode " << i << "]\n";
    out << "path = " << e.path << "\n";
    out << "seed = " << e.seed << "\n";
    out << "steps = " << e.steps << "\n";
    out << "split = " << (e.train ? "train" : "val") << "\n";
    out << "flags = " << flags_code(e.flags) << "\n";
  }
  return out.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  ManifestEntry* cur = nullptr;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') {
      m.episodes.emplace_back();
      cur = &m.episodes.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("manifest: bad line '" + line + "'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (cur) {
      if (key == "path")
        cur->path = val;
      else if (key == "seed")
        cur->seed = std::stoull(val);
      else if (key == "steps")
        cur->steps = std::stoi(val);
      else if (key == "split")
        cur->train = (val == "train");
      else if (key == "flags")
        cur->flags = parse_flags_code(val);
      else
        throw DataError("manifest: unknown episode key '" + key + "'");
    } else {
      if (key == "config_fingerprint")
        m.config_fingerprint = parse_hex(val);
      else if (key == "phase_freq") {
        std::istringstream fs(val);
        std::string tok;
        for (auto& f : m.phase_freq) {
          if (!std::getline(fs, tok, ',')) throw DataError("manifest: phase_freq needs 5 entries");
          f = std::stod(tok);
        }
      } else if (key != "version" && key != "episode_count" && key != "train_count" &&
                 key != "val_count")
        throw DataError("manifest: unknown key '" + key + "'");
    }
  }
  const double s = m.phase_freq[0] + m.phase_freq[1] + m.phase_freq[2] + m.phase_freq[3] +
                   m.phase_freq[4];
  if (!m.episodes.empty() && std::abs(s - 1.0) > 1e-3)
    throw DataError("manifest: phase frequencies sum to " + std::to_string(s));
  return m;
}

DatasetManifest build_manifest(const std::vector<Episode>& episodes,
                               const std::vector<std::string>& paths, uint64_t config_fingerprint,
                               double val_fraction, uint64_t split_seed) {
  if (episodes.size() != paths.size()) throw DataError("build_manifest: path count mismatch");
  if (episodes.empty()) throw DataError("build_manifest: no episodes");
  DatasetManifest m;
  m.config_fingerprint = config_fingerprint;

  // seeded shuffle, then the first chunk becomes validation
  std::vector<size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(split_seed ^ 0xD1B54A32D192ED03ull);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.next_u64() % i)]);
  const size_t val_n =
      std::max<size_t>(1, static_cast<size_t>(std::llround(val_fraction * episodes.size())));
  std::vector<bool> is_val(episodes.size(), false);
  for (size_t i = 0; i < val_n && i < order.size(); ++i) is_val[order[i]] = true;

  std::array<double, 5> counts{};
  double total = 0;
  for (size_t i = 0; i < episodes.size(); ++i) {
    ManifestEntry e;
    e.path = paths[i];
    e.seed = episodes[i].seed;
    e.steps = episodes[i].steps();
    e.train = !is_val[i];
    e.flags = episodes[i].flags;
    m.episodes.push_back(e);
    if (e.train) {
      for (uint8_t p : episodes[i].auto_phase) {
        if (p >= 1 && p <= 5) counts[static_cast<size_t>(p - 1)] += 1;
        total += 1;
      }
    }
  }
  for (size_t i = 0; i < 5; ++i) m.phase_freq[i] = total > 0 ? counts[i] / total : 0.0;
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  write_text_file(path, m.serialize());
}

DatasetManifest load_manifest(const std::string& path) {
  return DatasetManifest::parse(read_text_file(path));
}

TrainingSample sample_chunk(const Episode& ep, int t, int k, bool use_gt_phase) {
  if (t < 0 || t >= ep.steps())
    throw DataError("sample_chunk: frame " + std::to_string(t) + " out of [0," +
                    std::to_string(ep.steps()) + ")");
  TrainingSample s;
  s.observation = ep.frame(t);
  s.actions.assign(static_cast<size_t>(k) * 3, 0.0f);
  s.gripper.assign(static_cast<size_t>(k), 0);
  s.phase.assign(static_cast<size_t>(k), 0);
  s.mask.assign(static_cast<size_t>(k), 0);
  const auto& phases = use_gt_phase ? ep.gt_phase : ep.auto_phase;
  for (int j = 0; j < k; ++j) {
    const int u = t + j;
    if (u >= ep.steps()) break;
    s.mask[static_cast<size_t>(j)] = 1;
    for (int c = 0; c < 3; ++c)
      s.actions[static_cast<size_t>(j) * 3 + c] = ep.deltas[static_cast<size_t>(u) * 3 + c];
    s.gripper[static_cast<size_t>(j)] = ep.gripper[static_cast<size_t>(u)];
    s.phase[static_cast<size_t>(j)] = phases[static_cast<size_t>(u)];
  }
  return s;
}

std::pair<int, int> LoadedDataset::draw_frame(Rng& rng) const {
  if (total_train_frames == 0) throw DataError("dataset: no train frames");
  const size_t pick = rng.next_u64() % total_train_frames;
  const auto it = std::upper_bound(frame_offsets.begin(), frame_offsets.end(), pick);
  const int ep = static_cast<int>(it - frame_offsets.begin());
  const size_t base = ep == 0 ? 0 : frame_offsets[static_cast<size_t>(ep - 1)];
  return {ep, static_cast<int>(pick - base)};
}

LoadedDataset load_dataset(const std::string& manifest_path, double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("dataset fraction must be in (0,1], got " + std::to_string(fraction));
  const auto m = load_manifest(manifest_path);
  const auto dir = std::filesystem::path(manifest_path).parent_path();

  std::vector<const ManifestEntry*> train_entries;
  LoadedDataset ds;
  for (const auto& e : m.episodes) {
    if (e.train)
      train_entries.push_back(&e);
    else
      ds.val.push_back(load_episode((dir / e.path).string()));
  }
  const size_t keep = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(fraction * static_cast<double>(train_entries.size()))));
  train_entries.resize(std::min(train_entries.size(), keep));

  std::array<double, 5> counts{};
  double total = 0;
  for (const auto* e : train_entries) {
    ds.train.push_back(load_episode((dir / e->path).string()));
    const auto& ep = ds.train.back();
    ds.total_train_frames += static_cast<size_t>(ep.steps());
    ds.frame_offsets.push_back(ds.total_train_frames);
    for (uint8_t p : ep.auto_phase)
      if (p >= 1 && p <= 5) {
        counts[static_cast<size_t>(p - 1)] += 1;
        total += 1;
      }
  }
  for (size_t i = 0; i < 5; ++i) ds.train_phase_freq[i] = total > 0 ? counts[i] / total : 0.0;
  if (ds.train.empty()) throw DataError("dataset: empty train split");
  return ds;
}

}  // namespace moeact::data
