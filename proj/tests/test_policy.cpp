#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "moeact/policy/checkpoint.hpp"
#include "moeact/policy/net.hpp"
#include "moeact/train/loss.hpp"
#include "test_support.hpp"

using namespace moeact;
using namespace moeact::policy;
using moeact::nn::Tensor;
using moeact::nn::TensorT;
using testsup::random_tensor;

namespace {

PolicyConfig default_cfg() { return PolicyConfig{}; }

// criterion-scale config: d_model 16, k=2, H=3, 8x8 images
PolicyConfig tiny_cfg() {
  PolicyConfig c;
  c.image_size = 8;
  c.patch = 4;
  c.d_model = 16;
  c.heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.post_layers = 1;
  c.latent_dim = 8;
  c.chunk = 2;
  c.num_phases = 3;
  c.head_hidden = 16;
  c.ffn_hidden = 16;
  c.action_scale = 1.0f;
  return c;
}

template <class S>
data::TrainingSample synthetic_sample(const PolicyConfig& cfg, uint64_t seed,
                                      bool mask_tail = false) {
  Rng rng(seed);
  data::TrainingSample s;
  const size_t pixels = 2 * static_cast<size_t>(cfg.image_size) * cfg.image_size;
  s.observation.resize(pixels);
  for (auto& v : s.observation) v = static_cast<float>(rng.uniform());
  s.actions.resize(static_cast<size_t>(cfg.chunk) * 3);
  for (auto& v : s.actions) v = cfg.action_scale * static_cast<float>(rng.normal() * 0.5);
  s.gripper.resize(static_cast<size_t>(cfg.chunk));
  s.phase.resize(static_cast<size_t>(cfg.chunk));
  s.mask.assign(static_cast<size_t>(cfg.chunk), 1);
  for (int j = 0; j < cfg.chunk; ++j) {
    s.gripper[static_cast<size_t>(j)] = rng.uniform() < 0.5 ? 0 : 1;
    s.phase[static_cast<size_t>(j)] = static_cast<uint8_t>(rng.uniform_int(1, cfg.num_phases));
  }
  if (mask_tail) {
    s.mask.back() = 0;
    s.actions[s.actions.size() - 1] = 0;
    s.actions[s.actions.size() - 2] = 0;
    s.actions[s.actions.size() - 3] = 0;
    s.phase.back() = 0;
    s.gripper.back() = 0;
  }
  return s;
}

std::vector<float> random_obs(const PolicyConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> obs(2 * static_cast<size_t>(cfg.image_size) * cfg.image_size);
  for (auto& v : obs) v = static_cast<float>(rng.uniform());
  return obs;
}

}  // namespace

TEST_CASE("a 64x64 stereo pair with patch 8 yields 128 tokens") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 1);
  auto obs = random_obs(cfg, 2);
  auto tokens = net.encode_observation(obs);
  CHECK(tokens.shape() == std::vector<int>{128, 64});
}

TEST_CASE("identical eyes differ exactly by the eye embedding") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 3);
  const size_t plane = static_cast<size_t>(cfg.image_size) * cfg.image_size;
  auto obs = random_obs(cfg, 4);
  std::copy(obs.begin(), obs.begin() + static_cast<long>(plane), obs.begin() + static_cast<long>(plane));
  auto tokens = net.encode_observation(obs);
  auto eye = net.parameter("vision.eye");
  const int per_image = cfg.patches_per_image();
  for (int i = 0; i < per_image; ++i)
    for (int c = 0; c < cfg.d_model; ++c) {
      const float diff = tokens.at(i, c) - tokens.at(i + per_image, c);
      const float eye_diff = eye.at(0, c) - eye.at(1, c);
      CHECK(diff == doctest::Approx(eye_diff).epsilon(1e-5));
    }
}

TEST_CASE("swapping two input patches permutes the pre-positional tokens") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 5);
  auto obs = random_obs(cfg, 6);
  const int p = cfg.patch, isz = cfg.image_size;
  // swap patch (0,0) with patch (2,3) in the left image
  auto swapped = obs;
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x)
      std::swap(swapped[static_cast<size_t>(y) * isz + x],
                swapped[static_cast<size_t>(2 * p + y) * isz + (3 * p + x)]);
  auto t0 = net.encode_observation(obs);
  auto t1 = net.encode_observation(swapped);
  auto pos = net.parameter("vision.pos");
  const int grid = isz / p;
  const int a = 0, b = 2 * grid + 3;
  for (int c = 0; c < cfg.d_model; ++c) {
    CHECK(t1.at(a, c) - pos.at(a, c) == doctest::Approx(t0.at(b, c) - pos.at(b, c)).epsilon(1e-5));
    CHECK(t1.at(b, c) - pos.at(b, c) == doctest::Approx(t0.at(a, c) - pos.at(a, c)).epsilon(1e-5));
  }
}

TEST_CASE("posterior ignores masked positions and emits latent-dim stats") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 7);
  auto s1 = synthetic_sample<float>(cfg, 8, true);
  auto s2 = s1;
  // perturb only the masked tail position
  s2.actions[s2.actions.size() - 2] = 9.0f;
  s2.gripper.back() = 1;
  auto st1 = net.posterior_encode(s1);
  auto st2 = net.posterior_encode(s2);
  CHECK(st1.mean.shape() == std::vector<int>{cfg.latent_dim});
  CHECK(st1.logvar.shape() == std::vector<int>{cfg.latent_dim});
  CHECK(st1.mean.values() == st2.mean.values());
  CHECK(st1.logvar.values() == st2.logvar.values());
}

TEST_CASE("reparameterize: zero noise returns the mean, unit logvar adds noise") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 9);
  LatentStats st;
  Rng rng(10);
  st.mean = random_tensor<float>({cfg.latent_dim}, rng);
  st.logvar = Tensor::zeros({cfg.latent_dim});
  std::vector<float> zero(static_cast<size_t>(cfg.latent_dim), 0.0f);
  auto z0 = net.reparameterize(st, zero);
  CHECK(z0.values() == st.mean.values());

  std::vector<float> n(static_cast<size_t>(cfg.latent_dim));
  for (auto& v : n) v = static_cast<float>(rng.normal());
  auto z1 = net.reparameterize(st, n);
  for (int i = 0; i < cfg.latent_dim; ++i)
    CHECK(z1.at(i) == doctest::Approx(st.mean.at(i) + n[static_cast<size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("reparameterize sample mean converges to the latent mean") {
  auto cfg = default_cfg();
  cfg.latent_dim = 4;
  PolicyNet net(cfg, 11);
  LatentStats st;
  st.mean = Tensor::from({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  st.logvar = Tensor::from({4}, {0.0f, 0.5f, -0.5f, 0.2f});
  Rng rng(12);
  const int draws = 100000;
  std::array<double, 4> acc{};
  std::vector<float> n(4);
  for (int i = 0; i < draws; ++i) {
    for (auto& v : n) v = static_cast<float>(rng.normal());
    auto z = net.reparameterize(st, n);
    for (int c = 0; c < 4; ++c) acc[static_cast<size_t>(c)] += z.at(c);
  }
  for (int c = 0; c < 4; ++c) {
    const double mean = acc[static_cast<size_t>(c)] / draws;
    const double sigma = std::exp(0.5 * st.logvar.at(c));
    CHECK(std::abs(mean - st.mean.at(c)) < 3.0 * sigma / std::sqrt(static_cast<double>(draws)));
  }
}

TEST_CASE("decode emits k hidden states and responds to z") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 13);
  auto obs = random_obs(cfg, 14);
  auto visual = net.encode_observation(obs);
  auto h0 = net.decode(Tensor::zeros({cfg.latent_dim}), visual);
  CHECK(h0.shape() == std::vector<int>{cfg.chunk, cfg.d_model});

  Rng rng(15);
  auto z = random_tensor<float>({cfg.latent_dim}, rng);
  auto h1 = net.decode(z, visual);
  double diff = 0;
  for (size_t i = 0; i < h0.numel(); ++i) diff += std::abs(h1.values()[i] - h0.values()[i]);
  CHECK(diff > 0.0);

  // repeated evaluation is pure
  auto h2 = net.decode(z, visual);
  CHECK(h1.values() == h2.values());
}

TEST_CASE("moe_heads emits (kxH, kxHxd, kxH) with isolated experts") {
  auto cfg = default_cfg();  // k=8, H=5, d=3
  PolicyNet net(cfg, 17);
  auto obs = random_obs(cfg, 18);
  auto hidden = net.decode(Tensor::zeros({cfg.latent_dim}), net.encode_observation(obs));
  auto [gate, mu, nu] = net.moe_heads(hidden);
  CHECK(gate.shape() == std::vector<int>{8, 5});
  CHECK(mu.shape() == std::vector<int>{8, 15});
  CHECK(nu.shape() == std::vector<int>{8, 5});

  // zeroing expert 2's output layer zeroes exactly its block
  auto w = net.parameter("moe.action.h2.fc2.w");
  auto b = net.parameter("moe.action.h2.fc2.b");
  std::fill(w.values().begin(), w.values().end(), 0.0f);
  std::fill(b.values().begin(), b.values().end(), 0.0f);
  auto [gate2, mu2, nu2] = net.moe_heads(hidden);
  for (int j = 0; j < 8; ++j)
    for (int c = 0; c < 3; ++c) {
      CHECK(mu2.at(j, 2 * 3 + c) == 0.0f);
      CHECK(mu2.at(j, 0 * 3 + c) == mu.at(j, 0 * 3 + c));
    }
}

TEST_CASE("mix selects exactly under a one-hot gate") {
  Rng rng(19);
  const int k = 4, experts = 5, d = 3;
  auto mu = random_tensor<float>({k, experts * d}, rng);
  auto nu = random_tensor<float>({k, experts}, rng);
  std::vector<float> pi_v(static_cast<size_t>(k) * experts, 0.0f);
  const int pick[k] = {3, 0, 4, 1};
  for (int j = 0; j < k; ++j) pi_v[static_cast<size_t>(j) * experts + pick[j]] = 1.0f;
  auto pi = Tensor::from({k, experts}, std::move(pi_v));
  auto [a, g] = mix(pi, mu, nu);
  for (int j = 0; j < k; ++j) {
    for (int c = 0; c < d; ++c) CHECK(a.at(j, c) == mu.at(j, pick[j] * d + c));
    const float sig = 1.0f / (1.0f + std::exp(-nu.at(j, pick[j])));
    CHECK(g.at(j) == doctest::Approx(sig).epsilon(1e-6));
  }
}

TEST_CASE("mix of identical experts ignores the gate") {
  Rng rng(23);
  const int k = 3, experts = 4, d = 2;
  auto one = random_tensor<float>({k, d}, rng);
  std::vector<float> mu_v;
  for (int j = 0; j < k; ++j)
    for (int h = 0; h < experts; ++h)
      for (int c = 0; c < d; ++c) mu_v.push_back(one.at(j, c));
  auto mu = Tensor::from({k, experts * d}, std::move(mu_v));
  auto nu = Tensor::zeros({k, experts});
  auto pi1 = nn::softmax(random_tensor<float>({k, experts}, rng));
  auto pi2 = nn::softmax(random_tensor<float>({k, experts}, rng));
  auto [a1, g1] = mix(pi1, mu, nu);
  auto [a2, g2] = mix(pi2, mu, nu);
  for (size_t i = 0; i < a1.numel(); ++i)
    CHECK(a1.values()[i] == doctest::Approx(a2.values()[i]).epsilon(1e-6));
  for (int j = 0; j < k; ++j) CHECK(g1.at(j) == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("mix matches a 64-bit loop oracle on random inputs") {
  Rng rng(29);
  const int k = 2, experts = 3, d = 3;
  auto pi = nn::softmax(random_tensor<float>({k, experts}, rng));
  auto mu = random_tensor<float>({k, experts * d}, rng);
  auto nu = random_tensor<float>({k, experts}, rng);
  auto [a, g] = mix(pi, mu, nu);
  for (int j = 0; j < k; ++j) {
    for (int c = 0; c < d; ++c) {
      double acc = 0;
      for (int h = 0; h < experts; ++h)
        acc += static_cast<double>(pi.at(j, h)) * static_cast<double>(mu.at(j, h * d + c));
      CHECK(std::abs(static_cast<double>(a.at(j, c)) - acc) < 1e-6);
    }
    double accg = 0;
    for (int h = 0; h < experts; ++h)
      accg += static_cast<double>(pi.at(j, h)) /
              (1.0 + std::exp(-static_cast<double>(nu.at(j, h))));
    CHECK(std::abs(static_cast<double>(g.at(j)) - accg) < 1e-6);
  }
}

TEST_CASE("gradients reach an expert only in proportion to its gate weight") {
  Rng rng(31);
  const int k = 4, experts = 3, d = 3;
  auto mu = random_tensor<float>({k, experts * d}, rng, true);
  auto nu = random_tensor<float>({k, experts}, rng, true);
  std::vector<float> pi_v(static_cast<size_t>(k) * experts, 0.0f);
  for (int j = 0; j < k; ++j) pi_v[static_cast<size_t>(j) * experts + 1] = 1.0f;  // hard one-hot
  auto pi = Tensor::from({k, experts}, std::move(pi_v));

  nn::Tape tape;
  auto [a, g] = mix(pi, mu, nu);
  auto loss = nn::add(nn::sum(a), nn::sum(g));
  auto gs = tape.backward(loss);
  const auto& gmu = *gs.find(mu);
  const auto& gnu = *gs.find(nu);
  for (int j = 0; j < k; ++j)
    for (int h = 0; h < experts; ++h) {
      for (int c = 0; c < d; ++c) {
        const float v = gmu[static_cast<size_t>(j) * experts * d + h * d + c];
        if (h == 1)
          CHECK(v != 0.0f);
        else
          CHECK(v == 0.0f);
      }
      const float vn = gnu[static_cast<size_t>(j) * experts + h];
      if (h == 1)
        CHECK(vn != 0.0f);
      else
        CHECK(vn == 0.0f);
    }
}

TEST_CASE("forward_train is deterministic and satisfies output invariants") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 37);
  auto sample = synthetic_sample<float>(cfg, 38, true);
  std::vector<float> noise(static_cast<size_t>(cfg.latent_dim));
  Rng rng(39);
  for (auto& v : noise) v = static_cast<float>(rng.normal());

  LatentStats st1, st2;
  auto o1 = net.forward_train(sample, noise, &st1);
  auto o2 = net.forward_train(sample, noise, &st2);
  CHECK(o1.actions.values() == o2.actions.values());
  CHECK(o1.pi.values() == o2.pi.values());
  CHECK(st1.mean.values() == st2.mean.values());

  for (int j = 0; j < cfg.chunk; ++j) {
    double rowsum = 0;
    for (int h = 0; h < cfg.num_phases; ++h) {
      CHECK(o1.pi.at(j, h) >= 0.0f);
      rowsum += o1.pi.at(j, h);
    }
    CHECK(std::abs(rowsum - 1.0) < 1e-6);

    for (int c = 0; c < cfg.action_dim; ++c) {
      float lo = 1e30f, hi = -1e30f;
      for (int h = 0; h < cfg.num_phases; ++h) {
        lo = std::min(lo, o1.mu.at(j, h * cfg.action_dim + c));
        hi = std::max(hi, o1.mu.at(j, h * cfg.action_dim + c));
      }
      CHECK(o1.actions.at(j, c) >= lo - 1e-6f);
      CHECK(o1.actions.at(j, c) <= hi + 1e-6f);
    }

    float glo = 1e30f, ghi = -1e30f;
    for (int h = 0; h < cfg.num_phases; ++h) {
      const float sig = 1.0f / (1.0f + std::exp(-o1.nu.at(j, h)));
      glo = std::min(glo, sig);
      ghi = std::max(ghi, sig);
    }
    CHECK(o1.gripper.at(j) > 0.0f);
    CHECK(o1.gripper.at(j) < 1.0f);
    CHECK(o1.gripper.at(j) >= glo - 1e-6f);
    CHECK(o1.gripper.at(j) <= ghi + 1e-6f);
  }
}

TEST_CASE("gating distribution is invariant to constant logit shifts") {
  Rng rng(41);
  auto logits = random_tensor<float>({4, 5}, rng);
  auto shifted = logits;
  auto shifted_copy = Tensor::from(shifted.shape(), shifted.values());
  for (int j = 0; j < 4; ++j)
    for (int h = 0; h < 5; ++h)
      shifted_copy.values()[static_cast<size_t>(j) * 5 + h] += 3.25f;  // exact in fp
  auto p1 = nn::softmax(logits);
  auto p2 = nn::softmax(shifted_copy);
  for (size_t i = 0; i < p1.numel(); ++i)
    CHECK(p1.values()[i] == doctest::Approx(p2.values()[i]).epsilon(1e-6));
}

TEST_CASE("infer equals the decode path with z forced to zero, bitwise") {
  auto cfg = default_cfg();
  PolicyNet net(cfg, 43);
  auto obs = random_obs(cfg, 44);
  auto manual_hidden = net.decode(Tensor::zeros({cfg.latent_dim}), net.encode_observation(obs));
  auto manual = net.run_heads(manual_hidden);
  auto inferred = net.infer(obs);
  CHECK(inferred.actions.values() == manual.actions.values());
  CHECK(inferred.pi.values() == manual.pi.values());
  CHECK(inferred.gripper.values() == manual.gripper.values());

  auto again = net.infer(obs);
  CHECK(again.actions.values() == inferred.actions.values());
}

TEST_CASE("baseline variant has no expert-indexed or gate parameters") {
  auto cfg = default_cfg();
  cfg.moe = false;
  PolicyNet net(cfg, 47);
  for (const auto& [name, t] : net.named_parameters()) {
    CHECK(name.find("moe.") == std::string::npos);
    CHECK(name.find(".h0") == std::string::npos);
  }
  auto obs = random_obs(cfg, 48);
  auto out = net.infer(obs);
  CHECK(out.pi.shape() == std::vector<int>{cfg.chunk, 1});
  for (int j = 0; j < cfg.chunk; ++j) CHECK(out.pi.at(j, 0) == 1.0f);
  CHECK(out.actions.shape() == std::vector<int>{cfg.chunk, 3});
}

TEST_CASE("KL gradient w.r.t. posterior parameters passes finite differences") {
  auto cfg = tiny_cfg();
  PolicyNetT<double> net(cfg, 51);
  auto sample = synthetic_sample<double>(cfg, 52, true);
  auto params = net.parameters();
  auto f = [&]() {
    auto st = net.posterior_encode(sample);
    return train::kl_gaussian(st);
  };
  Rng coords(53);
  const double err = nn::check_gradient<double>(f, params, 1e-6, 50, coords);
  MESSAGE("KL gradient max rel err: ", err);
  CHECK(err < 1e-4);
}

// acceptance criterion 2 at unit-test scale: full pipeline loss, 64-bit
// central differences, h=1e-3, >= 50 sampled parameters
TEST_CASE("full-pipeline gradient check on the tiny config") {
  auto cfg = tiny_cfg();
  PolicyNetT<double> net(cfg, 57);
  auto sample = synthetic_sample<double>(cfg, 58, true);
  std::vector<double> noise(static_cast<size_t>(cfg.latent_dim));
  Rng nrng(59);
  for (auto& v : noise) v = nrng.normal();
  train::LossWeightsT<double> w;

  auto params = net.parameters();
  auto f = [&]() {
    policy::LatentStatsT<double> st;
    auto out = net.forward_train(sample, noise, &st);
    return train::chunk_loss(out, st, sample, w, cfg).total;
  };
  Rng coords(60);
  const double err = nn::check_gradient<double>(f, params, 1e-3, 60, coords);
  MESSAGE("full-pipeline gradient max rel err: ", err);
  CHECK(err < 1e-3);
}

TEST_CASE("checkpoint round-trips parameters bit-exactly") {
  auto cfg = tiny_cfg();
  PolicyNet a(cfg, 61);
  PolicyNet b(cfg, 62);  // different init
  const auto tmp = std::filesystem::temp_directory_path() / "moeact_ckpt_test.bin";

  CheckpointMeta meta;
  meta.model_fingerprint = 0x1234;
  meta.full_fingerprint = 0x5678;
  meta.train_step = 42;
  meta.rng_state = 99;
  save_checkpoint(tmp.string(), a, nullptr, meta);

  auto loaded_meta = load_checkpoint(tmp.string(), b, nullptr, 0x1234);
  CHECK(loaded_meta.train_step == 42);
  CHECK(loaded_meta.rng_state == 99);
  const auto& na = a.named_parameters();
  const auto& nb = b.named_parameters();
  for (size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second.values() == nb[i].second.values());
  }

  // wrong fingerprint refuses to load
  PolicyNet c(cfg, 63);
  CHECK_THROWS_AS(load_checkpoint(tmp.string(), c, 0, 0xDEAD), ConfigError);
  // resume from an eval-only checkpoint refuses
  nn::AdamW opt(c.parameters(), {});
  CHECK_THROWS_AS(load_checkpoint(tmp.string(), c, &opt, 0x1234), IoError);
  std::filesystem::remove(tmp);
}
