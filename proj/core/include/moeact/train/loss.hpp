// Four-term chunk objective: masked action L1, phase cross-entropy on the
// gating distribution, gripper BCE on mixed probabilities, and the Gaussian
// posterior KL against a standard-normal prior.
#pragma once

#include "moeact/policy/net.hpp"

namespace moeact::train {

template <class S>
struct LossWeightsT {
  S alpha = 1;   // L1
  S beta = 10;   // KL
  S gamma = 1;   // phase CE
  S delta = 1;   // gripper BCE

  void validate() const {
    if (alpha <= 0) throw ConfigError("loss: alpha must be positive");
    if (beta < 0 || gamma < 0 || delta < 0) throw ConfigError("loss: weights must be >= 0");
  }
};

template <class S>
struct LossTermsT {
  nn::TensorT<S> total;  // alpha*l1 + gamma*ce + delta*bce + beta*kl
  nn::TensorT<S> l1, ce, bce, kl;  // unweighted sums
  int valid_positions = 0;
};

struct LossReport {
  double total = 0, l1 = 0, ce = 0, bce = 0, kl = 0;
  int valid_positions = 0;
};

// closed form KL( N(mu, diag(exp(logvar))) || N(0, I) )
template <class S>
nn::TensorT<S> kl_gaussian(const policy::LatentStatsT<S>& stats) {
  using nn::TensorT;
  auto ones = TensorT<S>::from({stats.mean.dim(0)},
                               std::vector<S>(static_cast<size_t>(stats.mean.dim(0)), S(1)));
  auto t = nn::add(nn::exp(stats.logvar), nn::mul(stats.mean, stats.mean));
  t = nn::sub(nn::sub(t, ones), stats.logvar);
  return nn::mul_scalar(nn::sum(t), S(0.5));
}

template <class S>
LossTermsT<S> chunk_loss(const policy::PolicyOutputT<S>& out, const policy::LatentStatsT<S>& stats,
                         const data::TrainingSample& sample, const LossWeightsT<S>& w,
                         const policy::PolicyConfig& cfg) {
  using nn::TensorT;
  w.validate();
  const int k = cfg.chunk, d = cfg.action_dim, experts = cfg.experts();
  const S clamp_lo = static_cast<S>(1e-7), clamp_hi = static_cast<S>(1.0 - 1e-7);

  int valid = 0;
  std::vector<S> mask_v(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    mask_v[static_cast<size_t>(j)] = static_cast<S>(sample.mask[static_cast<size_t>(j)]);
    valid += sample.mask[static_cast<size_t>(j)];
  }
  if (valid == 0) throw DataError("chunk_loss: every position masked (degenerate sample)");
  auto mask = TensorT<S>::from({k}, std::move(mask_v));

  // L1 over valid positions, in action_scale units
  std::vector<S> target_v(static_cast<size_t>(k) * d);
  for (size_t i = 0; i < target_v.size(); ++i)
    target_v[i] = static_cast<S>(sample.actions[i]) / static_cast<S>(cfg.action_scale);
  auto target = TensorT<S>::from({k, d}, std::move(target_v));
  auto diff = nn::sub(out.actions, target);
  auto abs_diff = nn::add(nn::relu(diff), nn::relu(nn::mul_scalar(diff, S(-1))));
  auto l1 = nn::sum(nn::scale_rows(abs_diff, mask));

  // phase CE on the gating distribution (no gate in the baseline variant)
  TensorT<S> ce;
  if (cfg.moe) {
    std::vector<S> onehot(static_cast<size_t>(k) * experts, S(0));
    for (int j = 0; j < k; ++j) {
      if (!sample.mask[static_cast<size_t>(j)]) continue;
      const int ph = sample.phase[static_cast<size_t>(j)];
      if (ph < 1 || ph > experts)
        throw DataError("chunk_loss: phase label " + std::to_string(ph) + " outside 1.." +
                        std::to_string(experts));
      onehot[static_cast<size_t>(j) * experts + (ph - 1)] = S(1);
    }
    auto oh = TensorT<S>::from({k, experts}, std::move(onehot));
    auto logp = nn::log(nn::clamp(out.pi, clamp_lo, S(1)));
    ce = nn::mul_scalar(nn::sum(nn::mul(logp, oh)), S(-1));
  } else {
    ce = TensorT<S>::zeros({1});
  }

  // gripper BCE on mixed probabilities, clamped
  std::vector<S> g_v(static_cast<size_t>(k)), g_inv_v(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    const S g = static_cast<S>(sample.gripper[static_cast<size_t>(j)]);
    g_v[static_cast<size_t>(j)] = g;
    g_inv_v[static_cast<size_t>(j)] = S(1) - g;
  }
  auto g_t = TensorT<S>::from({k}, std::move(g_v));
  auto g_inv = TensorT<S>::from({k}, std::move(g_inv_v));
  auto ones_k = TensorT<S>::from({k}, std::vector<S>(static_cast<size_t>(k), S(1)));
  auto p = nn::clamp(out.gripper, clamp_lo, clamp_hi);
  auto ll = nn::add(nn::mul(g_t, nn::log(p)), nn::mul(g_inv, nn::log(nn::sub(ones_k, p))));
  auto bce = nn::mul_scalar(nn::sum(nn::mul(mask, ll)), S(-1));

  LossTermsT<S> terms;
  terms.l1 = l1;
  terms.ce = ce;
  terms.bce = bce;
  terms.kl = kl_gaussian(stats);
  terms.valid_positions = valid;
  terms.total = nn::add(nn::add(nn::mul_scalar(terms.l1, w.alpha), nn::mul_scalar(terms.ce, w.gamma)),
                        nn::add(nn::mul_scalar(terms.bce, w.delta), nn::mul_scalar(terms.kl, w.beta)));
  return terms;
}

template <class S>
LossReport report(const LossTermsT<S>& t) {
  LossReport r;
  r.total = static_cast<double>(t.total.item());
  r.l1 = static_cast<double>(t.l1.item());
  r.ce = static_cast<double>(t.ce.item());
  r.bce = static_cast<double>(t.bce.item());
  r.kl = static_cast<double>(t.kl.item());
  r.valid_positions = t.valid_positions;
  return r;
}

using LossWeights = LossWeightsT<float>;
using LossTerms = LossTermsT<float>;

}  // namespace moeact::train
