#include "moeact/eval/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <thread>

namespace moeact::eval {

namespace {

template <class Fn>
void parallel_frames(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  auto run = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run(0, n);
  } else {
    const int per = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) {
      const int lo = w * per, hi = std::min(n, (w + 1) * per);
      if (lo < hi) pool.emplace_back(run, lo, hi);
    }
    run(0, std::min(per, n));
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::pair<int, int>> all_frames(const std::vector<data::Episode>& eps) {
  std::vector<std::pair<int, int>> frames;
  for (size_t e = 0; e < eps.size(); ++e)
    for (int t = 0; t < eps[e].steps(); ++t) frames.emplace_back(static_cast<int>(e), t);
  if (frames.empty()) throw DataError("analysis: empty validation set");
  return frames;
}

}  // namespace

int argmax_gate(const policy::PolicyOutput& out, int phases) {
  int best = 0;
  for (int h = 1; h < phases; ++h)
    if (out.pi.at(0, h) > out.pi.at(0, best)) best = h;  // ties break toward the lowest index
  return best;
}

int64_t ConfusionMatrix::row_sum(int true_phase) const {
  int64_t s = 0;
  for (int p = 0; p < phases; ++p) s += at(true_phase, p);
  return s;
}

int64_t ConfusionMatrix::total() const {
  int64_t s = 0;
  for (int64_t c : counts) s += c;
  return s;
}

double ConfusionMatrix::accuracy() const {
  int64_t trace = 0;
  for (int p = 0; p < phases; ++p) trace += at(p, p);
  const int64_t n = total();
  return n > 0 ? static_cast<double>(trace) / static_cast<double>(n) : 0.0;
}

std::string ConfusionMatrix::csv() const {
  std::string out = "true\\pred";
  for (int p = 0; p < phases; ++p) out += ",phase" + std::to_string(p + 1);
  out += "\n";
  for (int t = 0; t < phases; ++t) {
    out += "phase" + std::to_string(t + 1);
    for (int p = 0; p < phases; ++p) out += "," + std::to_string(at(t, p));
    out += "\n";
  }
  return out;
}

ConfusionMatrix gating_confusion(const policy::PolicyNet& net,
                                 const std::vector<data::Episode>& val_episodes, int threads) {
  if (!net.config().moe) throw ConfigError("gating_confusion: baseline policy has no gate");
  const int phases = net.config().num_phases;
  const auto frames = all_frames(val_episodes);
  std::vector<int> pred(frames.size());
  parallel_frames(static_cast<int>(frames.size()), threads, [&](int i) {
    const auto& [e, t] = frames[static_cast<size_t>(i)];
    const auto obs = val_episodes[static_cast<size_t>(e)].frame(t);
    pred[static_cast<size_t>(i)] = argmax_gate(net.infer(obs), phases);
  });

  std::vector<int> truth(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& [e, t] = frames[i];
    truth[i] = val_episodes[static_cast<size_t>(e)].gt_phase[static_cast<size_t>(t)] - 1;
  }
  return tally_confusion(pred, truth, phases);
}

ConfusionMatrix tally_confusion(const std::vector<int>& predicted, const std::vector<int>& truth,
                                int phases) {
  if (predicted.size() != truth.size()) throw ShapeError("tally_confusion: length mismatch");
  ConfusionMatrix cm;
  cm.phases = phases;
  cm.counts.assign(static_cast<size_t>(phases) * phases, 0);
  for (size_t i = 0; i < predicted.size(); ++i)
    ++cm.counts[static_cast<size_t>(truth[i]) * phases + predicted[i]];
  return cm;
}

std::string UtilizationReport::csv() const {
  std::string out = "expert,utilization,dataset_phase_freq\n";
  char buf[96];
  for (int h = 0; h < 5; ++h) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", h + 1, utilization[static_cast<size_t>(h)],
                  phase_freq[static_cast<size_t>(h)]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "tv_distance,%.6f,\n", tv_distance);
  out += buf;
  return out;
}

UtilizationReport expert_utilization(const policy::PolicyNet& net,
                                     const std::vector<data::Episode>& val_episodes,
                                     const std::array<double, 5>& dataset_phase_freq, int threads) {
  if (!net.config().moe) throw ConfigError("expert_utilization: baseline policy has no gate");
  const int phases = net.config().num_phases;
  const auto frames = all_frames(val_episodes);
  std::vector<int> pred(frames.size());
  parallel_frames(static_cast<int>(frames.size()), threads, [&](int i) {
    const auto& [e, t] = frames[static_cast<size_t>(i)];
    const auto obs = val_episodes[static_cast<size_t>(e)].frame(t);
    pred[static_cast<size_t>(i)] = argmax_gate(net.infer(obs), phases);
  });

  return utilization_from_predictions(pred, dataset_phase_freq);
}

UtilizationReport utilization_from_predictions(const std::vector<int>& predicted,
                                               const std::array<double, 5>& dataset_phase_freq) {
  if (predicted.empty()) throw DataError("utilization: no predictions");
  UtilizationReport rep;
  rep.phase_freq = dataset_phase_freq;
  for (int p : predicted) rep.utilization[static_cast<size_t>(p)] += 1.0;
  for (auto& u : rep.utilization) u /= static_cast<double>(predicted.size());
  double tv = 0;
  for (int h = 0; h < 5; ++h)
    tv += std::abs(rep.utilization[static_cast<size_t>(h)] - rep.phase_freq[static_cast<size_t>(h)]);
  rep.tv_distance = 0.5 * tv;
  return rep;
}

std::string SaliencyMap::csv() const {
  std::string out;
  char buf[32];
  for (int eye = 0; eye < 2; ++eye) {
    const auto& img = eye == 0 ? left : right;
    out += eye == 0 ? "left\n" : "right\n";
    for (int r = 0; r < grid; ++r) {
      for (int c = 0; c < grid; ++c) {
        std::snprintf(buf, sizeof(buf), c ? ",%.6f" : "%.6f", img[static_cast<size_t>(r) * grid + c]);
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

SaliencyMap ablation_saliency(const policy::PolicyNet& net, std::span<const float> obs) {
  const auto& cfg = net.config();
  const int tokens = cfg.visual_tokens();
  const auto z = nn::Tensor::zeros({cfg.latent_dim});
  const auto visual = net.encode_observation(obs);
  const auto base = net.run_heads(net.decode(z, visual));

  auto chunk_delta = [&](const policy::PolicyOutput& out) {
    double acc = 0;
    for (int j = 0; j < cfg.chunk; ++j) {
      double row = 0;
      for (int c = 0; c < cfg.action_dim; ++c) {
        const double d = static_cast<double>(out.actions.at(j, c)) -
                         static_cast<double>(base.actions.at(j, c));
        row += d * d;
      }
      acc += std::sqrt(row);
    }
    return acc;
  };

  std::vector<float> importance(static_cast<size_t>(tokens), 0.0f);
  for (int i = 0; i < tokens; ++i) {
    auto ablated = nn::Tensor::from(visual.shape(), visual.values());
    std::fill(ablated.values().begin() + static_cast<long>(i) * cfg.d_model,
              ablated.values().begin() + static_cast<long>(i + 1) * cfg.d_model, 0.0f);
    importance[static_cast<size_t>(i)] =
        static_cast<float>(chunk_delta(net.run_heads(net.decode(z, ablated))));
  }

  float mx = 0;
  for (float v : importance) mx = std::max(mx, v);
  if (mx > 0)
    for (float& v : importance) v /= mx;

  SaliencyMap map;
  map.grid = cfg.image_size / cfg.patch;
  const int per_image = cfg.patches_per_image();
  map.left.assign(importance.begin(), importance.begin() + per_image);
  map.right.assign(importance.begin() + per_image, importance.end());
  return map;
}

std::string BenchReport::text() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "frames %d\nmean_ms %.3f\np50_ms %.3f\np95_ms %.3f\nhz %.1f\n", frames, mean_ms,
                p50_ms, p95_ms, hz);
  return buf;
}

BenchReport inference_benchmark(const policy::PolicyNet& net, std::span<const float> obs,
                                int n_frames, int warmup) {
  if (n_frames < 1) throw ConfigError("inference_benchmark: n_frames must be >= 1");
  for (int i = 0; i < warmup; ++i) (void)net.infer(obs);
  std::vector<double> lat(static_cast<size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)net.infer(obs);
    lat[static_cast<size_t>(i)] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  auto sorted = lat;
  std::sort(sorted.begin(), sorted.end());
  BenchReport r;
  r.frames = n_frames;
  for (double v : lat) r.mean_ms += v;
  r.mean_ms /= n_frames;
  r.p50_ms = sorted[static_cast<size_t>(n_frames / 2)];
  r.p95_ms = sorted[static_cast<size_t>(std::min<int>(n_frames - 1, (n_frames * 95) / 100))];
  r.hz = r.mean_ms > 0 ? 1000.0 / r.mean_ms : 0.0;
  return r;
}

std::vector<SweepCell> data_scaling_sweep(const std::string& manifest_path,
                                          const sim::SimConfig& sim_cfg,
                                          const policy::PolicyConfig& policy_cfg,
                                          const train::TrainConfig& train_cfg,
                                          const SweepParams& params, const std::string& out_dir,
                                          uint64_t model_fp_moe, uint64_t model_fp_baseline,
                                          uint64_t full_fp) {
  std::vector<SweepCell> cells;
  for (const bool moe : {false, true}) {
    for (const double fraction : params.fractions) {
      SweepCell cell;
      cell.fraction = fraction;
      cell.moe = moe;

      policy::PolicyConfig pcfg = policy_cfg;
      pcfg.moe = moe;
      train::TrainConfig tcfg = train_cfg;
      tcfg.fraction = fraction;
      if (!moe) tcfg.weights.gamma = 0.0f;
      const uint64_t model_fp = moe ? model_fp_moe : model_fp_baseline;

      char dirname[64];
      std::snprintf(dirname, sizeof(dirname), "sweep_f%03d_%s",
                    static_cast<int>(std::lround(fraction * 100)), moe ? "moe" : "baseline");
      const std::string cell_dir = out_dir + "/" + dirname;
      cell.checkpoint = cell_dir + "/ckpt_final.bin";

      bool have = false;
      if (params.reuse_checkpoints && std::filesystem::exists(cell.checkpoint)) {
        const auto meta = policy::read_checkpoint_meta(cell.checkpoint);
        have = meta.model_fingerprint == model_fp && meta.full_fingerprint == full_fp;
      }
      policy::PolicyNet net(pcfg, tcfg.seed);
      if (have) {
        policy::load_checkpoint(cell.checkpoint, net, nullptr, model_fp);
      } else {
        auto ds = data::load_dataset(manifest_path, fraction);
        auto res = train::train(pcfg, tcfg, ds, cell_dir, model_fp, full_fp);
        net = res.net;
      }

      auto results = rollout_batch(net, sim_cfg, params.rollout_seed_base, params.rollouts,
                                   Condition::in_distribution, params.replan_interval,
                                   params.threads);
      cell.success = tally(condition_name(Condition::in_distribution), results);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "fraction,arch,reaching,grasping,retracting,end_to_end,n\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%.2f,%s,%d/%d,%d/%d,%d/%d,%d/%d,%d\n", c.fraction,
                  c.moe ? "moe" : "baseline", c.success.reaching, c.success.n, c.success.grasping,
                  c.success.n, c.success.retracting, c.success.n, c.success.end_to_end,
                  c.success.n, c.success.n);
    out += buf;
  }
  return out;
}

}  // namespace moeact::eval
