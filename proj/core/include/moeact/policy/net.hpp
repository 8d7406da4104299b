// Phase-gated mixture-of-experts action-chunking policy: patch vision encoder
// over the stereo pair, CVAE posterior over action chunks, transformer
// encoder-decoder trunk, and per-phase expert heads mixed by a gating
// distribution. The baseline variant keeps the trunk and swaps the MoE block
// for a single action head and a single gripper head.
#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moeact/data/dataset.hpp"
#include "moeact/nn/ops.hpp"
#include "moeact/nn/tensor.hpp"
#include "moeact/rng.hpp"

namespace moeact::policy {

struct PolicyConfig {
  int image_size = 64;
  int patch = 8;
  int d_model = 64;
  int heads = 4;
  int enc_layers = 3;
  int dec_layers = 3;
  int post_layers = 2;
  int latent_dim = 32;
  int chunk = 8;  // k
  int action_dim = 3;
  int num_phases = 5;  // H
  int head_hidden = 128;
  int ffn_hidden = 128;
  float action_scale = 0.045f;  // network action unit, in scene units
  bool moe = true;

  void validate() const {
    if (d_model % heads != 0) throw ConfigError("policy: d_model must divide by heads");
    if (image_size % patch != 0) throw ConfigError("policy: image_size must divide by patch");
    if (chunk < 1 || action_dim < 1) throw ConfigError("policy: chunk and action_dim must be >= 1");
    if (moe && num_phases < 2) throw ConfigError("policy: num_phases must be >= 2");
    if (action_scale <= 0) throw ConfigError("policy: action_scale must be positive");
  }
  int patches_per_image() const { return (image_size / patch) * (image_size / patch); }
  int visual_tokens() const { return 2 * patches_per_image(); }
  int patch_dim() const { return patch * patch; }
  int experts() const { return moe ? num_phases : 1; }
};

template <class S>
struct LatentStatsT {
  nn::TensorT<S> mean;    // [latent]
  nn::TensorT<S> logvar;  // [latent]
};

template <class S>
struct PolicyOutputT {
  nn::TensorT<S> gate_logits;  // [k,H]; undefined for the baseline head
  nn::TensorT<S> pi;           // [k,H] rows on the simplex ([k,1] ones for baseline)
  nn::TensorT<S> mu;           // [k,H*d], expert h occupying columns [h*d, (h+1)*d)
  nn::TensorT<S> nu;           // [k,H] gripper logits
  nn::TensorT<S> actions;      // [k,d] mixed, in action_scale units
  nn::TensorT<S> gripper;      // [k] mixed probabilities in (0,1)
};

// phase-weighted mixture: a_hat = sum_h pi_h * mu_h, g_hat = sum_h pi_h * sigmoid(nu_h)
template <class S>
std::pair<nn::TensorT<S>, nn::TensorT<S>> mix(const nn::TensorT<S>& pi, const nn::TensorT<S>& mu,
                                              const nn::TensorT<S>& nu) {
  using nn::TensorT;
  const int k = pi.dim(0), experts = pi.dim(1);
  if (mu.dim(0) != k || mu.dim(1) % experts != 0 || nu.dim(0) != k || nu.dim(1) != experts)
    throw ShapeError("mix: incompatible shapes pi " + nn::shape_str(pi.shape()) + ", mu " +
                     nn::shape_str(mu.shape()) + ", nu " + nn::shape_str(nu.shape()));
  const int d = mu.dim(1) / experts;
  TensorT<S> a_hat, g_hat;
  const auto g_prob = nn::sigmoid(nu);
  for (int h = 0; h < experts; ++h) {
    auto pi_h = nn::reshape(nn::slice_cols(pi, h, h + 1), {k});
    auto term_a = nn::scale_rows(nn::slice_cols(mu, h * d, (h + 1) * d), pi_h);
    auto term_g = nn::mul(nn::reshape(nn::slice_cols(g_prob, h, h + 1), {k}), pi_h);
    a_hat = h == 0 ? term_a : nn::add(a_hat, term_a);
    g_hat = h == 0 ? term_g : nn::add(g_hat, term_g);
  }
  return {a_hat, g_hat};
}

namespace detail {

template <class S>
struct LinearT {
  nn::TensorT<S> w, b;
  nn::TensorT<S> apply(const nn::TensorT<S>& x) const { return nn::linear(x, w, b); }
};

template <class S>
struct LayerNormT {
  nn::TensorT<S> g, b;
  nn::TensorT<S> apply(const nn::TensorT<S>& x) const { return nn::layer_norm(x, g, b); }
};

template <class S>
struct Mlp2T {
  LinearT<S> fc1, fc2;
  nn::TensorT<S> apply(const nn::TensorT<S>& x) const {
    return fc2.apply(nn::gelu(fc1.apply(x)));
  }
};

template <class S>
struct AttnT {
  LayerNormT<S> ln;
  LinearT<S> q, k, v, o;
  int heads = 1;

  // pre-LN self attention with residual
  nn::TensorT<S> self(const nn::TensorT<S>& x, const nn::TensorT<S>* mask) const {
    auto h = ln.apply(x);
    auto out = nn::multi_head_attention(q.apply(h), k.apply(h), v.apply(h), heads, mask);
    return nn::add(x, o.apply(out));
  }
  // pre-LN cross attention from x over memory
  nn::TensorT<S> cross(const nn::TensorT<S>& x, const nn::TensorT<S>& memory) const {
    auto h = ln.apply(x);
    auto out = nn::multi_head_attention(q.apply(h), k.apply(memory), v.apply(memory), heads);
    return nn::add(x, o.apply(out));
  }
};

template <class S>
struct FfnT {
  LayerNormT<S> ln;
  LinearT<S> fc1, fc2;
  nn::TensorT<S> apply(const nn::TensorT<S>& x) const {
    return nn::add(x, fc2.apply(nn::gelu(fc1.apply(ln.apply(x)))));
  }
};

template <class S>
struct EncLayerT {
  AttnT<S> attn;
  FfnT<S> ffn;
};

template <class S>
struct DecLayerT {
  AttnT<S> self_attn;
  AttnT<S> cross_attn;
  FfnT<S> ffn;
};

}  // namespace detail

template <class S>
class PolicyNetT {
 public:
  PolicyNetT(const PolicyConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    build(rng);
  }

  const PolicyConfig& config() const { return cfg_; }

  std::vector<nn::TensorT<S>> parameters() const {
    std::vector<nn::TensorT<S>> out;
    out.reserve(named_.size());
    for (const auto& [name, t] : named_) out.push_back(t);
    return out;
  }
  const std::vector<std::pair<std::string, nn::TensorT<S>>>& named_parameters() const {
    return named_;
  }
  nn::TensorT<S> parameter(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no such parameter: " + name);
    return named_[it->second].second;
  }
  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named_) n += t.numel();
    return n;
  }

  // stereo pair -> visual tokens [2*P, d]; shared spatial positions, eye
  // identity from an embedding lookup
  nn::TensorT<S> encode_observation(std::span<const float> obs) const {
    const int p = cfg_.patch, isz = cfg_.image_size, grid = isz / p;
    const int per_image = cfg_.patches_per_image();
    const size_t plane = static_cast<size_t>(isz) * isz;
    if (obs.size() != 2 * plane)
      throw ShapeError("encode_observation: expected " + std::to_string(2 * plane) +
                       " pixels, got " + std::to_string(obs.size()));
    std::vector<S> patches(static_cast<size_t>(2 * per_image) * cfg_.patch_dim());
    size_t row = 0;
    for (int eye = 0; eye < 2; ++eye)
      for (int pr = 0; pr < grid; ++pr)
        for (int pc = 0; pc < grid; ++pc, ++row) {
          S* dst = patches.data() + row * cfg_.patch_dim();
          for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
              dst[y * p + x] = static_cast<S>(
                  obs[eye * plane + static_cast<size_t>(pr * p + y) * isz + (pc * p + x)]);
        }
    auto patch_mat = nn::TensorT<S>::from({2 * per_image, cfg_.patch_dim()}, std::move(patches));
    auto tokens = patch_proj_.apply(patch_mat);
    tokens = nn::add(tokens, pos_emb_);
    std::vector<int> eye_idx(static_cast<size_t>(2 * per_image));
    for (int i = 0; i < 2 * per_image; ++i) eye_idx[static_cast<size_t>(i)] = i < per_image ? 0 : 1;
    return nn::add(tokens, nn::embedding(eye_emb_, eye_idx));
  }

  // CVAE posterior over the ground-truth chunk; masked positions are excluded
  // from attention so they cannot influence the summary token
  LatentStatsT<S> posterior_encode(std::span<const float> actions, std::span<const uint8_t> grip,
                                   std::span<const uint8_t> mask) const {
    const int k = cfg_.chunk;
    std::vector<S> feat(static_cast<size_t>(k) * 4);
    for (int j = 0; j < k; ++j) {
      for (int c = 0; c < 3; ++c)
        feat[static_cast<size_t>(j) * 4 + c] =
            static_cast<S>(actions[static_cast<size_t>(j) * 3 + c]) / static_cast<S>(cfg_.action_scale);
      feat[static_cast<size_t>(j) * 4 + 3] = static_cast<S>(grip[static_cast<size_t>(j)]);
    }
    auto x = post_embed_.apply(nn::TensorT<S>::from({k, 4}, std::move(feat)));
    x = nn::add(x, post_pos_);
    x = nn::concat_rows(std::vector<nn::TensorT<S>>{post_summary_, x});

    // key mask: summary always visible, invalid chunk positions never
    std::vector<S> mrow(static_cast<size_t>(k + 1), S(0));
    for (int j = 0; j < k; ++j)
      if (!mask[static_cast<size_t>(j)]) mrow[static_cast<size_t>(j + 1)] = S(-1e9);
    std::vector<S> mdata;
    mdata.reserve(static_cast<size_t>(k + 1) * (k + 1));
    for (int r = 0; r <= k; ++r) mdata.insert(mdata.end(), mrow.begin(), mrow.end());
    auto attn_mask = nn::TensorT<S>::from({k + 1, k + 1}, std::move(mdata));

    for (const auto& layer : post_layers_) {
      x = layer.attn.self(x, &attn_mask);
      x = layer.ffn.apply(x);
    }
    x = post_final_ln_.apply(x);
    auto stats = post_out_.apply(nn::slice_rows(x, 0, 1));
    LatentStatsT<S> out;
    out.mean = nn::reshape(nn::slice_cols(stats, 0, cfg_.latent_dim), {cfg_.latent_dim});
    out.logvar =
        nn::reshape(nn::slice_cols(stats, cfg_.latent_dim, 2 * cfg_.latent_dim), {cfg_.latent_dim});
    return out;
  }

  LatentStatsT<S> posterior_encode(const data::TrainingSample& sample) const {
    return posterior_encode(sample.actions, sample.gripper, sample.mask);
  }

  nn::TensorT<S> reparameterize(const LatentStatsT<S>& stats, std::span<const S> noise) const {
    if (noise.size() != static_cast<size_t>(cfg_.latent_dim))
      throw ShapeError("reparameterize: noise size " + std::to_string(noise.size()));
    auto n = nn::TensorT<S>::from({cfg_.latent_dim}, std::vector<S>(noise.begin(), noise.end()));
    auto std_dev = nn::exp(nn::mul_scalar(stats.logvar, S(0.5)));
    return nn::add(stats.mean, nn::mul(std_dev, n));
  }

  // z token + visual tokens -> encoder memory -> k decoded hidden states
  nn::TensorT<S> decode(const nn::TensorT<S>& z, const nn::TensorT<S>& visual) const {
    auto z_token = latent_token_.apply(nn::reshape(z, {1, cfg_.latent_dim}));
    auto x = nn::concat_rows(std::vector<nn::TensorT<S>>{z_token, visual});
    for (const auto& layer : enc_layers_) {
      x = layer.attn.self(x, nullptr);
      x = layer.ffn.apply(x);
    }
    auto memory = enc_final_ln_.apply(x);

    auto q = dec_query_;
    for (const auto& layer : dec_layers_) {
      q = layer.self_attn.self(q, nullptr);
      q = layer.cross_attn.cross(q, memory);
      q = layer.ffn.apply(q);
    }
    return dec_final_ln_.apply(q);
  }

  // expert head groups: gating logits [k,H], expert actions [k,H*d], gripper
  // logits [k,H]; the baseline variant has one expert and no gate
  std::tuple<nn::TensorT<S>, nn::TensorT<S>, nn::TensorT<S>> moe_heads(
      const nn::TensorT<S>& hidden) const {
    const int k = cfg_.chunk;
    std::vector<nn::TensorT<S>> mu_parts, nu_parts;
    for (const auto& head : action_heads_) mu_parts.push_back(head.apply(hidden));
    for (const auto& head : grip_heads_) nu_parts.push_back(head.apply(hidden));
    auto mu = mu_parts.size() == 1 ? mu_parts[0] : nn::concat_cols(mu_parts);
    auto nu = nu_parts.size() == 1 ? nu_parts[0] : nn::concat_cols(nu_parts);
    nn::TensorT<S> gate_logits;
    if (cfg_.moe)
      gate_logits = gate_head_.apply(hidden);
    else
      gate_logits = nn::TensorT<S>::zeros({k, 1});
    return {gate_logits, mu, nu};
  }

  PolicyOutputT<S> run_heads(const nn::TensorT<S>& hidden) const {
    PolicyOutputT<S> out;
    auto [gate_logits, mu, nu] = moe_heads(hidden);
    out.gate_logits = gate_logits;
    out.mu = mu;
    out.nu = nu;
    if (cfg_.moe)
      out.pi = nn::softmax(gate_logits);
    else
      out.pi = nn::add_scalar(nn::TensorT<S>::zeros({cfg_.chunk, 1}), S(1));
    auto [a_hat, g_hat] = mix(out.pi, out.mu, out.nu);
    out.actions = a_hat;
    out.gripper = g_hat;
    return out;
  }

  PolicyOutputT<S> forward_train(const data::TrainingSample& sample, std::span<const S> noise,
                                 LatentStatsT<S>* stats_out) const {
    auto stats = posterior_encode(sample);
    auto z = reparameterize(stats, noise);
    auto visual = encode_observation(sample.observation);
    auto hidden = decode(z, visual);
    if (stats_out) *stats_out = stats;
    return run_heads(hidden);
  }

  // inference: posterior discarded, z at the prior mean (zero)
  PolicyOutputT<S> infer(std::span<const float> obs) const {
    auto z = nn::TensorT<S>::zeros({cfg_.latent_dim});
    auto visual = encode_observation(obs);
    return run_heads(decode(z, visual));
  }

 private:
  void build(Rng& rng) {
    const int d = cfg_.d_model;

    auto add_param = [&](const std::string& name, nn::TensorT<S> t) {
      t.set_requires_grad(true);
      index_[name] = named_.size();
      named_.emplace_back(name, t);
      return t;
    };
    auto xavier = [&](const std::string& name, int fan_in, int fan_out) {
      const double lim = std::sqrt(6.0 / (fan_in + fan_out));
      std::vector<S> v(static_cast<size_t>(fan_in) * fan_out);
      for (auto& x : v) x = static_cast<S>((rng.uniform() * 2.0 - 1.0) * lim);
      return add_param(name, nn::TensorT<S>::from({fan_in, fan_out}, std::move(v)));
    };
    auto zeros = [&](const std::string& name, std::vector<int> shape) {
      return add_param(name, nn::TensorT<S>::zeros(std::move(shape)));
    };
    auto gauss = [&](const std::string& name, std::vector<int> shape, double scale = 0.02) {
      size_t n = 1;
      for (int dd : shape) n *= static_cast<size_t>(dd);
      std::vector<S> v(n);
      for (auto& x : v) x = static_cast<S>(rng.normal() * scale);
      return add_param(name, nn::TensorT<S>::from(std::move(shape), std::move(v)));
    };
    auto ones = [&](const std::string& name, int n) {
      return add_param(name, nn::TensorT<S>::from({n}, std::vector<S>(static_cast<size_t>(n), S(1))));
    };
    auto linear = [&](const std::string& name, int in, int out) {
      detail::LinearT<S> l;
      l.w = xavier(name + ".w", in, out);
      l.b = zeros(name + ".b", {out});
      return l;
    };
    auto layer_norm = [&](const std::string& name) {
      detail::LayerNormT<S> l;
      l.g = ones(name + ".g", d);
      l.b = zeros(name + ".b", {d});
      return l;
    };
    auto attn = [&](const std::string& name) {
      detail::AttnT<S> a;
      a.ln = layer_norm(name + ".ln");
      a.q = linear(name + ".q", d, d);
      a.k = linear(name + ".k", d, d);
      a.v = linear(name + ".v", d, d);
      a.o = linear(name + ".o", d, d);
      a.heads = cfg_.heads;
      return a;
    };
    auto ffn = [&](const std::string& name) {
      detail::FfnT<S> f;
      f.ln = layer_norm(name + ".ln");
      f.fc1 = linear(name + ".fc1", d, cfg_.ffn_hidden);
      f.fc2 = linear(name + ".fc2", cfg_.ffn_hidden, d);
      return f;
    };
    auto mlp2 = [&](const std::string& name, int out) {
      detail::Mlp2T<S> m;
      m.fc1 = linear(name + ".fc1", d, cfg_.head_hidden);
      m.fc2 = linear(name + ".fc2", cfg_.head_hidden, out);
      return m;
    };

    patch_proj_ = linear("vision.patch", cfg_.patch_dim(), d);
    pos_emb_ = gauss("vision.pos", {cfg_.patches_per_image() * 2, d});
    {
      // both eyes share spatial positions: duplicate the per-image table
      auto& v = pos_emb_.values();
      const size_t half = static_cast<size_t>(cfg_.patches_per_image()) * d;
      for (size_t i = 0; i < half; ++i) v[half + i] = v[i];
    }
    eye_emb_ = gauss("vision.eye", {2, d});

    post_embed_ = linear("post.embed", 4, d);
    post_pos_ = gauss("post.pos", {cfg_.chunk, d});
    post_summary_ = gauss("post.summary", {1, d});
    for (int i = 0; i < cfg_.post_layers; ++i) {
      detail::EncLayerT<S> l;
      l.attn = attn("post.L" + std::to_string(i) + ".attn");
      l.ffn = ffn("post.L" + std::to_string(i) + ".ffn");
      post_layers_.push_back(std::move(l));
    }
    post_final_ln_ = layer_norm("post.final_ln");
    post_out_ = linear("post.out", d, 2 * cfg_.latent_dim);

    latent_token_ = linear("latent.token", cfg_.latent_dim, d);

    for (int i = 0; i < cfg_.enc_layers; ++i) {
      detail::EncLayerT<S> l;
      l.attn = attn("enc.L" + std::to_string(i) + ".attn");
      l.ffn = ffn("enc.L" + std::to_string(i) + ".ffn");
      enc_layers_.push_back(std::move(l));
    }
    enc_final_ln_ = layer_norm("enc.final_ln");

    dec_query_ = gauss("dec.query", {cfg_.chunk, d});
    for (int i = 0; i < cfg_.dec_layers; ++i) {
      detail::DecLayerT<S> l;
      l.self_attn = attn("dec.L" + std::to_string(i) + ".self");
      l.cross_attn = attn("dec.L" + std::to_string(i) + ".cross");
      l.ffn = ffn("dec.L" + std::to_string(i) + ".ffn");
      dec_layers_.push_back(std::move(l));
    }
    dec_final_ln_ = layer_norm("dec.final_ln");

    if (cfg_.moe) {
      gate_head_ = mlp2("moe.gate", cfg_.num_phases);
      for (int h = 0; h < cfg_.num_phases; ++h) {
        action_heads_.push_back(mlp2("moe.action.h" + std::to_string(h), cfg_.action_dim));
        grip_heads_.push_back(mlp2("moe.grip.h" + std::to_string(h), 1));
      }
    } else {
      action_heads_.push_back(mlp2("head.action", cfg_.action_dim));
      grip_heads_.push_back(mlp2("head.grip", 1));
    }
  }

  PolicyConfig cfg_;
  std::vector<std::pair<std::string, nn::TensorT<S>>> named_;
  std::unordered_map<std::string, size_t> index_;

  detail::LinearT<S> patch_proj_;
  nn::TensorT<S> pos_emb_, eye_emb_;
  detail::LinearT<S> post_embed_;
  nn::TensorT<S> post_pos_, post_summary_;
  std::vector<detail::EncLayerT<S>> post_layers_;
  detail::LayerNormT<S> post_final_ln_;
  detail::LinearT<S> post_out_;
  detail::LinearT<S> latent_token_;
  std::vector<detail::EncLayerT<S>> enc_layers_;
  detail::LayerNormT<S> enc_final_ln_;
  nn::TensorT<S> dec_query_;
  std::vector<detail::DecLayerT<S>> dec_layers_;
  detail::LayerNormT<S> dec_final_ln_;
  detail::Mlp2T<S> gate_head_;
  std::vector<detail::Mlp2T<S>> action_heads_;
  std::vector<detail::Mlp2T<S>> grip_heads_;
};

using PolicyNet = PolicyNetT<float>;
using PolicyOutput = PolicyOutputT<float>;
using LatentStats = LatentStatsT<float>;

}  // namespace moeact::policy
