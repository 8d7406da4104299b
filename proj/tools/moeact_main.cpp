// Command surface: gen-data, train, eval, ablate, bench. Configuration comes
// from a key=value file plus --set overrides; every run directory stores the
// resolved config and its fingerprint. Exit codes: 0 ok, 2 config error,
// 3 data/io error, 4 numeric abort.
#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>

#include "moeact/config.hpp"
#include "moeact/data/dataset.hpp"
#include "moeact/eval/analysis.hpp"
#include "moeact/eval/rollout.hpp"
#include "moeact/policy/checkpoint.hpp"
#include "moeact/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace moeact;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_root;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run config file (key=value sections)");
  cmd->add_option("--set", args.overrides, "override, e.g. --set train.lr=3e-4")->take_all();
  cmd->add_option("--out", args.out_root, "output root (default $MOEACT_OUT or ./runs)");
}

cfg::RunConfig resolve_config(const CommonArgs& args) {
  cfg::RunConfig c =
      args.config_path.empty() ? cfg::default_config() : cfg::load_run_config(args.config_path);
  for (const auto& o : args.overrides) cfg::apply_override(c, o);
  c.resolve();
  return c;
}

std::string out_root(const CommonArgs& args) {
  if (!args.out_root.empty()) return args.out_root;
  if (const char* env = std::getenv("MOEACT_OUT")) return env;
  return "runs";
}

// <root>/<command>-<fingerprint>-<timestamp>[-k]: reruns never overwrite
std::string make_run_dir(const std::string& root, const std::string& command, uint64_t fp) {
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm_buf{};
  gmtime_r(&now, &tm_buf);
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
  const std::string base = root + "/" + command + "-" + to_hex(fp).substr(8) + "-" + stamp;
  std::string dir = base;
  for (int k = 1; fs::exists(dir); ++k) dir = base + "-" + std::to_string(k);
  fs::create_directories(dir);
  return dir;
}

void write_run_metadata(const std::string& dir, const cfg::RunConfig& c) {
  write_text_file(dir + "/resolved_config.txt", cfg::serialize(c));
  write_text_file(dir + "/fingerprint.txt", to_hex(cfg::fingerprint(c)) + "\n");
}

std::vector<float> stereo_pixels(const sim::Observation& obs) {
  std::vector<float> px;
  px.reserve(obs.left.size() * 2);
  px.insert(px.end(), obs.left.begin(), obs.left.end());
  px.insert(px.end(), obs.right.begin(), obs.right.end());
  return px;
}

policy::PolicyNet load_policy(const cfg::RunConfig& c, const std::string& ckpt_path) {
  policy::PolicyNet net(c.policy, c.train.seed);
  policy::load_checkpoint(ckpt_path, net, nullptr, cfg::model_fingerprint(c));
  return net;
}

void check_manifest_compat(const cfg::RunConfig& c, const data::DatasetManifest& m) {
  if (m.config_fingerprint != cfg::sim_fingerprint(c))
    throw DataError("dataset was generated under a different sim config (fingerprint " +
                    to_hex(m.config_fingerprint) + " vs " + to_hex(cfg::sim_fingerprint(c)) + ")");
}

int cmd_gen_data(const CommonArgs& common, int episodes, bool random_viewpoint,
                 const std::string& out_dir, bool append) {
  auto c = resolve_config(common);
  if (out_dir.empty()) throw ConfigError("gen-data requires --out <dataset dir>");
  const bool have_manifest = fs::exists(fs::path(out_dir) / "manifest.txt");
  if (have_manifest && !append)
    throw DataError("refusing to overwrite existing dataset: " + out_dir +
                    "/manifest.txt (use --append to extend it)");
  if (append && !have_manifest)
    throw DataError("--append requires an existing dataset at " + out_dir);
  fs::create_directories(fs::path(out_dir) / "episodes");

  std::vector<data::Episode> eps;
  std::vector<std::string> paths;
  int start = 0;
  if (append) {
    const auto existing = data::load_manifest((fs::path(out_dir) / "manifest.txt").string());
    if (existing.config_fingerprint != cfg::sim_fingerprint(c))
      throw DataError("--append: sim config does not match the existing dataset");
    for (const auto& e : existing.episodes) {
      eps.push_back(data::load_episode((fs::path(out_dir) / e.path).string()));
      paths.push_back(e.path);
    }
    start = static_cast<int>(eps.size());
  }

  Rng seed_stream(c.seed);
  data::RecordOptions opt;
  opt.randomize_camera = random_viewpoint;
  for (int i = 0; i < episodes; ++i) {
    auto ep = data::record_episode(seed_stream.next_u64(), c.sim, opt);
    ep.config_fingerprint = cfg::sim_fingerprint(c);
    char name[64];
    std::snprintf(name, sizeof(name), "episodes/ep_%04d.bin", start + i);
    data::save_episode(ep, (fs::path(out_dir) / name).string());
    paths.emplace_back(name);
    eps.push_back(std::move(ep));
  }
  auto manifest = data::build_manifest(eps, paths, cfg::sim_fingerprint(c), 0.10, c.seed);
  data::save_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
  write_run_metadata(out_dir, c);
  std::printf("recorded %d episodes (%s viewpoint)%s -> %s\n", episodes,
              random_viewpoint ? "random" : "fixed", append ? " appended" : "", out_dir);
  std::printf("manifest fingerprint %s, train/val %d/%d\n",
              to_hex(manifest.fingerprint()).c_str(), manifest.train_count(),
              manifest.val_count());
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& manifest_path, const std::string& arch,
              double fraction, const std::string& resume) {
  auto c = resolve_config(common);
  if (!arch.empty()) cfg::apply_override(c, "policy.arch=" + arch);
  if (fraction > 0) c.train.fraction = fraction;
  if (!c.policy.moe) c.train.weights.gamma = 0.0f;  // no gate to supervise
  c.resolve();

  auto manifest = data::load_manifest(manifest_path);
  check_manifest_compat(c, manifest);
  auto ds = data::load_dataset(manifest_path, c.train.fraction);

  const std::string dir = make_run_dir(out_root(common), "train", cfg::fingerprint(c));
  write_run_metadata(dir, c);
  std::printf("training %s (fraction %.2f, %zu episodes) -> %s\n",
              c.policy.moe ? "moe" : "baseline", c.train.fraction, ds.train.size(), dir.c_str());
  auto res = train::train(c.policy, c.train, ds, dir, cfg::model_fingerprint(c),
                          cfg::fingerprint(c), resume);
  std::printf("done: %d steps, final val total %.4f, gating accuracy %.3f\n", res.steps_run,
              res.final_val.total, res.final_val.gating_accuracy);
  std::printf("checkpoint: %s\n", res.final_checkpoint.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt, const std::string& condition,
             int n, const std::string& arch, bool save_frames) {
  auto c = resolve_config(common);
  if (!arch.empty()) cfg::apply_override(c, "policy.arch=" + arch);
  const auto cond = eval::parse_condition(condition.empty() ? "in_distribution" : condition);
  const int rollouts = n > 0 ? n : c.eval.rollouts;

  auto net = load_policy(c, ckpt);
  const std::string dir = make_run_dir(out_root(common), "eval", cfg::fingerprint(c));
  write_run_metadata(dir, c);

  auto results = eval::rollout_batch(net, c.sim, c.eval.seed_base, rollouts, cond,
                                     c.eval.replan_interval, c.eval.threads);
  auto row = eval::tally(eval::condition_name(cond), results);
  write_text_file(dir + "/success.csv", eval::success_csv({row}));

  std::string details = "seed,steps,reaching,grasping,retracting,end_to_end\n";
  double mean_infer = 0;
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    details += std::to_string(c.eval.seed_base + i) + "," + std::to_string(r.steps) + "," +
               std::to_string(r.flags.reaching) + "," + std::to_string(r.flags.grasping) + "," +
               std::to_string(r.flags.retracting) + "," + std::to_string(r.flags.end_to_end) + "\n";
    mean_infer += r.mean_infer_ms;
  }
  write_text_file(dir + "/rollout_details.csv", details);
  write_text_file(dir + "/timing.txt",
                  "mean_infer_ms " + std::to_string(mean_infer / results.size()) + "\n");

  if (save_frames) {
    // replay the first roll-out and dump frames
    const auto cc = eval::condition_sim_config(c.sim, cond);
    auto [state, cam] = sim::reset(c.eval.seed_base, cc, cond == eval::Condition::random_viewpoint);
    fs::create_directories(dir + "/frames");
    for (size_t t = 0; t < results[0].actions.size(); ++t) {
      if (t % 5 == 0) {
        auto obs = sim::render_stereo(cc, state, cam);
        char name[64];
        std::snprintf(name, sizeof(name), "/frames/t%03zu.pgm", t);
        sim::write_pgm(dir + name, obs.left, obs.height, obs.width);
      }
      state = sim::step(cc, state, results[0].actions[t], results[0].gripper_cmds[t] != 0);
    }
  }

  std::printf("%s", eval::success_csv({row}).c_str());
  std::printf("results -> %s\n", dir.c_str());
  return 0;
}

int cmd_bench(const CommonArgs& common, const std::string& ckpt, int frames,
              const std::string& baseline_ckpt) {
  auto c = resolve_config(common);
  auto net = load_policy(c, ckpt);
  auto [state, cam] = sim::reset(c.eval.seed_base, c.sim, false);
  const auto obs = stereo_pixels(sim::render_stereo(c.sim, state, cam));
  const int n = frames > 0 ? frames : c.eval.bench_frames;

  auto rep = eval::inference_benchmark(net, obs, n);
  std::string text = "checkpoint " + ckpt + "\n" + rep.text();

  if (!baseline_ckpt.empty()) {
    auto bc = c;
    cfg::apply_override(bc, "policy.arch=baseline");
    auto bnet = load_policy(bc, baseline_ckpt);
    auto brep = eval::inference_benchmark(bnet, obs, n);
    text += "baseline " + baseline_ckpt + "\n" + brep.text();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "latency_ratio %.4f\n", rep.mean_ms / brep.mean_ms);
    text += buf;
  }

  const std::string dir = make_run_dir(out_root(common), "bench", cfg::fingerprint(c));
  write_run_metadata(dir, c);
  write_text_file(dir + "/bench_report.txt", text);
  std::printf("%s", text.c_str());
  std::printf("report -> %s\n", dir.c_str());
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& manifest_path) {
  auto c = resolve_config(common);
  c.policy.moe = true;
  c.resolve();
  auto manifest = data::load_manifest(manifest_path);
  check_manifest_compat(c, manifest);

  const std::string root = out_root(common);
  const std::string cache = root + "/cache-" + to_hex(cfg::fingerprint(c)).substr(8);
  const std::string dir = make_run_dir(root, "ablate", cfg::fingerprint(c));
  write_run_metadata(dir, c);

  cfg::RunConfig base_cfg = c;
  cfg::apply_override(base_cfg, "policy.arch=baseline");

  // 1) data-scaling sweep (trains any missing cells into the cache)
  eval::SweepParams sweep;
  sweep.rollouts = c.eval.rollouts;
  sweep.rollout_seed_base = c.eval.seed_base;
  sweep.replan_interval = c.eval.replan_interval;
  sweep.threads = c.eval.threads;
  auto cells = eval::data_scaling_sweep(manifest_path, c.sim, c.policy, c.train, sweep, cache,
                                        cfg::model_fingerprint(c), cfg::model_fingerprint(base_cfg),
                                        cfg::fingerprint(c));
  write_text_file(dir + "/scaling.csv", eval::sweep_csv(cells));

  // the full-data moe cell is the reference model for the remaining analyses
  std::string moe_ckpt;
  for (const auto& cell : cells)
    if (cell.moe && cell.fraction == 1.0) moe_ckpt = cell.checkpoint;
  auto net = load_policy(c, moe_ckpt);
  auto ds = data::load_dataset(manifest_path, 1.0);

  // 2) gating confusion matrix
  auto cm = eval::gating_confusion(net, ds.val, c.eval.threads);
  write_text_file(dir + "/confusion.csv", cm.csv());

  // 3) expert utilization vs dataset phase frequencies
  auto util = eval::expert_utilization(net, ds.val, manifest.phase_freq, c.eval.threads);
  write_text_file(dir + "/utilization.csv", util.csv());

  // 4) saliency maps: one validation frame per phase
  fs::create_directories(dir + "/saliency");
  const auto& ep = ds.val.front();
  for (int phase = 1; phase <= 5; ++phase) {
    int frame = -1;
    for (int t = 0; t < ep.steps(); ++t)
      if (ep.gt_phase[static_cast<size_t>(t)] == phase) {
        frame = t;
        break;
      }
    if (frame < 0) continue;
    auto map = eval::ablation_saliency(net, ep.frame(frame));
    const std::string stem = dir + "/saliency/phase" + std::to_string(phase);
    write_text_file(stem + ".csv", map.csv());
    sim::write_pgm(stem + "_left.pgm", map.left, map.grid, map.grid);
    sim::write_pgm(stem + "_right.pgm", map.right, map.grid, map.grid);
  }

  std::printf("gating accuracy %.3f, utilization tv %.3f\n", cm.accuracy(), util.tv_distance);
  std::printf("artifacts -> %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale phase-gated MoE action-chunking policy pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_common, train_common, eval_common, ablate_common, bench_common;

  auto* gen = app.add_subcommand("gen-data", "record demonstrator episodes into a dataset dir");
  int episodes = 120;
  bool random_viewpoint = false;
  bool gen_append = false;
  std::string gen_out;
  gen->add_option("--config", gen_common.config_path, "run config file (key=value sections)");
  gen->add_option("--set", gen_common.overrides, "override, e.g. --set sim.max_steps=200")->take_all();
  gen->add_option("--episodes", episodes, "episodes to record")->check(CLI::PositiveNumber);
  gen->add_flag("--random-viewpoint", random_viewpoint, "sample a random camera per episode");
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_flag("--append", gen_append, "extend an existing dataset and rebuild its manifest");

  auto* tr = app.add_subcommand("train", "train a policy on a recorded dataset");
  std::string train_manifest, train_arch, train_resume;
  double train_fraction = 0;
  add_common(tr, train_common);
  tr->add_option("--data", train_manifest, "dataset manifest path")->required();
  tr->add_option("--arch", train_arch, "moe | baseline");
  tr->add_option("--fraction", train_fraction, "train-episode fraction in (0,1]");
  tr->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "closed-loop roll-outs under a condition");
  std::string eval_ckpt, eval_condition, eval_arch;
  int eval_n = 0;
  bool save_frames = false;
  add_common(ev, eval_common);
  ev->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  ev->add_option("--condition", eval_condition, "evaluation condition");
  ev->add_option("--n", eval_n, "number of roll-outs");
  ev->add_option("--arch", eval_arch, "moe | baseline");
  ev->add_flag("--save-frames", save_frames, "export frames of the first roll-out");

  auto* ab = app.add_subcommand("ablate", "scaling sweep, confusion, utilization, saliency");
  std::string ablate_manifest;
  add_common(ab, ablate_common);
  ab->add_option("--data", ablate_manifest, "dataset manifest path")->required();

  auto* be = app.add_subcommand("bench", "inference latency benchmark");
  std::string bench_ckpt, bench_baseline;
  int bench_frames = 0;
  add_common(be, bench_common);
  be->add_option("--ckpt", bench_ckpt, "checkpoint path")->required();
  be->add_option("--frames", bench_frames, "frames to time");
  be->add_option("--baseline-ckpt", bench_baseline, "second checkpoint for a paired ratio");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_common, episodes, random_viewpoint, gen_out, gen_append);
    if (tr->parsed())
      return cmd_train(train_common, train_manifest, train_arch, train_fraction, train_resume);
    if (ev->parsed())
      return cmd_eval(eval_common, eval_ckpt, eval_condition, eval_n, eval_arch, save_frames);
    if (ab->parsed()) return cmd_ablate(ablate_common, ablate_manifest);
    if (be->parsed()) return cmd_bench(bench_common, bench_ckpt, bench_frames, bench_baseline);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
