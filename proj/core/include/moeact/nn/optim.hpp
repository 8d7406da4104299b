// AdamW with decoupled weight decay, plus the finite-difference gradient
// checker used by the test oracles.
#pragma once

#include <functional>
#include <span>

#include "moeact/nn/tensor.hpp"
#include "moeact/rng.hpp"

namespace moeact::nn {

template <class S>
struct AdamWConfig {
  S lr = static_cast<S>(1e-4);
  S beta1 = static_cast<S>(0.9);
  S beta2 = static_cast<S>(0.999);
  S eps = static_cast<S>(1e-8);
  S weight_decay = static_cast<S>(1e-4);
};

template <class S>
class AdamWT {
 public:
  AdamWT(std::vector<TensorT<S>> params, AdamWConfig<S> cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  // One update from a gradient store. Parameters without a gradient entry are
  // left untouched (unreachable from the loss this step). lr_scale is the
  // warm-up multiplier.
  void step(const GradStoreT<S>& grads, S lr_scale = S(1)) {
    ++step_count_;
    const S b1t = S(1) - std::pow(cfg_.beta1, static_cast<S>(step_count_));
    const S b2t = S(1) - std::pow(cfg_.beta2, static_cast<S>(step_count_));
    const S lr = cfg_.lr * lr_scale;
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      const auto* g = grads.find(params_[pi].id());
      if (!g) continue;
      if (g->size() != params_[pi].numel())
        throw ShapeError("adamw: gradient size " + std::to_string(g->size()) + " vs parameter " +
                         shape_str(params_[pi].shape()));
      auto& m = m_[pi];
      auto& v = v_[pi];
      S* w = params_[pi].ptr();
      for (size_t i = 0; i < g->size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (S(1) - cfg_.beta1) * (*g)[i];
        v[i] = cfg_.beta2 * v[i] + (S(1) - cfg_.beta2) * (*g)[i] * (*g)[i];
        const S mhat = m[i] / b1t;
        const S vhat = v[i] / b2t;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
  }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }
  const AdamWConfig<S>& config() const { return cfg_; }

  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }

 private:
  std::vector<TensorT<S>> params_;
  AdamWConfig<S> cfg_;
  std::vector<std::vector<S>> m_, v_;
  int64_t step_count_ = 0;
};

// Max relative error between reverse-mode and central-difference gradients
// over `samples` coordinates drawn from `params`. `f` must be deterministic
// (fix any noise before calling). The denominator guard makes dead
// coordinates contribute zero instead of dividing by zero.
template <class S>
S check_gradient(const std::function<TensorT<S>()>& f, std::span<TensorT<S>> params, S h,
                 int samples, Rng& rng) {
  GradStoreT<S> analytic;
  {
    TapeT<S> tape;
    TensorT<S> loss = f();
    analytic = tape.backward(loss);
  }
  S worst = 0;
  for (int s = 0; s < samples; ++s) {
    auto& p = params[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(params.size()) - 1))];
    const size_t ci = static_cast<size_t>(rng.next_u64() % p.numel());
    const auto* g = analytic.find(p.id());
    const S a = g ? (*g)[ci] : S(0);

    const S saved = p.ptr()[ci];
    p.ptr()[ci] = saved + h;
    const double fp = static_cast<double>(f().item());
    p.ptr()[ci] = saved - h;
    const double fm = static_cast<double>(f().item());
    p.ptr()[ci] = saved;

    const S numeric = static_cast<S>((fp - fm) / (2.0 * static_cast<double>(h)));
    const S denom = std::abs(a) + std::abs(numeric) + static_cast<S>(1e-8);
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

using AdamW = AdamWT<float>;

}  // namespace moeact::nn
