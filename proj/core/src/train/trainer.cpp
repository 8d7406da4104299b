#include "moeact/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace moeact::train {

namespace {

// items [0,n) split into contiguous blocks, one per worker; each item is
// computed entirely by a single thread, so results are order-independent.
// Exceptions are collected and the lowest-index one rethrown after join.
template <class Fn>
void parallel_items(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  auto guarded = [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errors[static_cast<size_t>(i)] = std::current_exception();
    }
  };
  if (workers == 1) {
    for (int i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    const int per = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
      const int lo = w * per, hi = std::min(n, (w + 1) * per);
      if (lo >= hi) break;
      pool.emplace_back([&guarded, lo, hi]() {
        for (int i = lo; i < hi; ++i) guarded(i);
      });
    }
    for (int i = 0; i < std::min(per, n); ++i) guarded(i);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct BatchItem {
  int episode = 0;
  int frame = 0;
  std::vector<float> noise;
};

struct ItemResult {
  nn::GradStore grads;
  LossReport losses;
};

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

ValMetrics validate(const policy::PolicyNet& net, const TrainConfig& tcfg,
                    const data::LoadedDataset& ds, int threads) {
  const auto& pcfg = net.config();
  std::vector<std::pair<int, int>> frames;
  for (size_t e = 0; e < ds.val.size(); ++e)
    for (int t = 0; t < ds.val[e].steps(); t += tcfg.val_stride)
      frames.emplace_back(static_cast<int>(e), t);
  if (frames.empty()) throw DataError("validate: empty validation split");

  const std::vector<float> zero_noise(static_cast<size_t>(pcfg.latent_dim), 0.0f);
  std::vector<LossReport> reports(frames.size());
  std::vector<uint8_t> gate_hit(frames.size(), 0);

  parallel_items(static_cast<int>(frames.size()), threads, [&](int i) {
    const auto& [e, t] = frames[static_cast<size_t>(i)];
    const auto& ep = ds.val[static_cast<size_t>(e)];
    auto sample = data::sample_chunk(ep, t, pcfg.chunk, tcfg.use_gt_phase);
    policy::LatentStats stats;
    auto out = net.forward_train(sample, zero_noise, &stats);
    reports[static_cast<size_t>(i)] = report(chunk_loss(out, stats, sample, tcfg.weights, pcfg));
    if (pcfg.moe) {
      int best = 0;
      for (int h = 1; h < pcfg.num_phases; ++h)
        if (out.pi.at(0, h) > out.pi.at(0, best)) best = h;
      gate_hit[static_cast<size_t>(i)] = (best + 1 == ep.gt_phase[static_cast<size_t>(t)]) ? 1 : 0;
    }
  });

  ValMetrics m;
  m.frames = static_cast<int>(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) {
    m.total += reports[i].total;
    m.l1 += reports[i].l1;
    m.ce += reports[i].ce;
    m.bce += reports[i].bce;
    m.kl += reports[i].kl;
    m.gating_accuracy += gate_hit[i];
  }
  const double n = static_cast<double>(m.frames);
  m.total /= n;
  m.l1 /= n;
  m.ce /= n;
  m.bce /= n;
  m.kl /= n;
  m.gating_accuracy /= n;
  return m;
}

TrainResult train(const policy::PolicyConfig& pcfg, const TrainConfig& tcfg,
                  const data::LoadedDataset& ds, const std::string& run_dir,
                  uint64_t model_fingerprint, uint64_t full_fingerprint,
                  const std::string& resume_from) {
  pcfg.validate();
  tcfg.validate();
  std::filesystem::create_directories(run_dir);
  const std::string latest_path = run_dir + "/ckpt_latest.bin";
  const std::string final_path = run_dir + "/ckpt_final.bin";

  policy::PolicyNet net(pcfg, tcfg.seed);
  auto params = net.parameters();
  nn::AdamW opt(params, tcfg.optim);
  Rng rng(tcfg.seed ^ 0xA5A5A5A5DEADBEEFull);
  int start_step = 0;

  if (!resume_from.empty()) {
    auto meta = policy::load_checkpoint(resume_from, net, &opt, model_fingerprint);
    if (meta.full_fingerprint != full_fingerprint)
      throw ConfigError("resume: config fingerprint mismatch");
    rng.set_state(meta.rng_state);
    start_step = static_cast<int>(meta.train_step);
  }

  std::ofstream metrics(run_dir + "/metrics.csv",
                        resume_from.empty() ? std::ios::trunc : std::ios::app);
  std::ofstream timing(run_dir + "/timing.csv",
                       resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (resume_from.empty()) {
    metrics << "step,l1,ce,bce,kl,total,val_l1,val_ce,val_bce,val_kl,val_total,val_gate_acc\n";
    timing << "step,wall_seconds\n";
  }

  const auto t_start = std::chrono::steady_clock::now();
  std::string last_good = resume_from;
  double acc_l1 = 0, acc_ce = 0, acc_bce = 0, acc_kl = 0, acc_total = 0;
  int acc_n = 0;

  std::vector<BatchItem> batch(static_cast<size_t>(tcfg.batch_size));
  std::vector<ItemResult> results(static_cast<size_t>(tcfg.batch_size));

  for (int step = start_step + 1; step <= tcfg.total_steps; ++step) {
    // draw the whole batch from the master stream first; workers then run
    // independent graphs against shared read-only parameters
    for (auto& item : batch) {
      auto [e, t] = ds.draw_frame(rng);
      item.episode = e;
      item.frame = t;
      item.noise.resize(static_cast<size_t>(pcfg.latent_dim));
      for (auto& v : item.noise) v = static_cast<float>(rng.normal());
    }

    try {
      parallel_items(tcfg.batch_size, tcfg.threads, [&](int i) {
        const auto& item = batch[static_cast<size_t>(i)];
        auto sample = data::sample_chunk(ds.train[static_cast<size_t>(item.episode)], item.frame,
                                         pcfg.chunk, tcfg.use_gt_phase);
        nn::Tape tape;
        policy::LatentStats stats;
        auto out = net.forward_train(sample, item.noise, &stats);
        auto terms = chunk_loss(out, stats, sample, tcfg.weights, pcfg);
        results[static_cast<size_t>(i)].losses = report(terms);
        results[static_cast<size_t>(i)].grads = tape.backward(terms.total);
      });
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (training step " + std::to_string(step) +
                         "; last good checkpoint: " + (last_good.empty() ? "<none>" : last_good) +
                         ")");
    }

    // fixed-order reduction keeps training bit-deterministic
    nn::GradStore merged;
    const float inv_b = 1.0f / static_cast<float>(tcfg.batch_size);
    for (const auto& p : params) {
      auto& acc = merged.accum(p);
      for (int i = 0; i < tcfg.batch_size; ++i) {
        const auto* g = results[static_cast<size_t>(i)].grads.find(p.id());
        if (!g) continue;
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += (*g)[j];
      }
      for (auto& v : acc) v *= inv_b;
    }

    double batch_total = 0;
    for (const auto& r : results) {
      batch_total += r.losses.total;
      acc_l1 += r.losses.l1;
      acc_ce += r.losses.ce;
      acc_bce += r.losses.bce;
      acc_kl += r.losses.kl;
      acc_total += r.losses.total;
      ++acc_n;
    }
    if (!std::isfinite(batch_total))
      throw NumericError("train: NaN loss at step " + std::to_string(step) +
                         "; last good checkpoint: " + (last_good.empty() ? "<none>" : last_good));

    const float warm = tcfg.warmup_steps > 0
                           ? std::min(1.0f, static_cast<float>(step) / static_cast<float>(tcfg.warmup_steps))
                           : 1.0f;
    opt.step(merged, warm);

    if (step % tcfg.eval_interval == 0 || step == tcfg.total_steps) {
      const auto vm = validate(net, tcfg, ds, tcfg.threads);
      metrics << step << "," << csv_num(acc_l1 / acc_n) << "," << csv_num(acc_ce / acc_n) << ","
              << csv_num(acc_bce / acc_n) << "," << csv_num(acc_kl / acc_n) << ","
              << csv_num(acc_total / acc_n) << "," << csv_num(vm.l1) << "," << csv_num(vm.ce)
              << "," << csv_num(vm.bce) << "," << csv_num(vm.kl) << "," << csv_num(vm.total)
              << "," << csv_num(vm.gating_accuracy) << "\n";
      metrics.flush();
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      timing << step << "," << csv_num(wall) << "\n";
      timing.flush();
      acc_l1 = acc_ce = acc_bce = acc_kl = acc_total = 0;
      acc_n = 0;

      policy::CheckpointMeta meta;
      meta.model_fingerprint = model_fingerprint;
      meta.full_fingerprint = full_fingerprint;
      meta.train_step = step;
      meta.rng_state = rng.state();
      policy::save_checkpoint(latest_path, net, &opt, meta);
      last_good = latest_path;
    }
  }

  policy::CheckpointMeta meta;
  meta.model_fingerprint = model_fingerprint;
  meta.full_fingerprint = full_fingerprint;
  meta.train_step = tcfg.total_steps;
  meta.rng_state = rng.state();
  policy::save_checkpoint(final_path, net, &opt, meta);

  TrainResult res{net, final_path, validate(net, tcfg, ds, tcfg.threads),
                  tcfg.total_steps - start_step};
  return res;
}

}  // namespace moeact::train
