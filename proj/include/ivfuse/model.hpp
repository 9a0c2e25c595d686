// SPDX-License-Identifier: Apache-2.0
//
// Fusion network: ViT encoder, comparative fusion module (CFM), merging
// fusion module (MFM) with its FFN residual, and a shallow ViT decoder.
// Forward passes build an autodiff graph over shared parameter leaves.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ivfuse/autodiff.hpp"
#include "ivfuse/imaging.hpp"
#include "ivfuse/rng.hpp"

namespace ivfuse {

struct ModelConfig {
  int patch = 8;
  int embed_dim = 64;
  int encoder_depth = 4;
  int decoder_depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  bool use_cls = false;
  double mask_ratio = 0.75;
  double init_std = 0.02;

  int head_dim() const { return embed_dim / heads; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (patch <= 0) throw ConfigError("model: patch must be positive");
    if (embed_dim % heads != 0) throw ConfigError("model: embed_dim not divisible by heads");
    if (embed_dim % 4 != 0) throw ConfigError("model: embed_dim must be divisible by 4");
    if (encoder_depth < 1 || decoder_depth < 1)
      throw ConfigError("model: depths must be >= 1");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
      throw ConfigError("model: mask_ratio must be in [0, 1)");
  }

  static ModelConfig desk() { return ModelConfig{}; }
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.patch = 16;
    c.embed_dim = 1024;
    c.encoder_depth = 24;
    c.heads = 16;
    return c;
  }
};

struct MaskPlan {
  std::vector<int> kept_indices;   // ascending
  std::vector<int> mask_flags;     // 1 = masked
};

/// Uniform sample without replacement; |kept| = round((1 - ratio) * n).
inline MaskPlan random_mask(int n, double mask_ratio, std::uint64_t seed) {
  const int kept = static_cast<int>(std::lround((1.0 - mask_ratio) * n));
  Rng rng(seed);
  MaskPlan plan;
  plan.kept_indices = rng.sample_without_replacement(n, kept);
  std::sort(plan.kept_indices.begin(), plan.kept_indices.end());
  plan.mask_flags.assign(n, 1);
  for (int i : plan.kept_indices) plan.mask_flags[i] = 0;
  return plan;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <class S>
struct ParamGroup {
  std::string name;
  bool frozen = false;
  std::vector<std::string> order;
  std::map<std::string, nn::NodePtr<S>> by_name;

  nn::NodePtr<S>& add(const std::string& key, nn::Mat<S> value) {
    order.push_back(key);
    auto& slot = by_name[key];
    slot = nn::leaf<S>(std::move(value), true);
    return slot;
  }
  const nn::NodePtr<S>& at(const std::string& key) const {
    auto it = by_name.find(key);
    if (it == by_name.end())
      throw WeightImportError(name + ": unknown parameter '" + key + "'");
    return it->second;
  }
  nn::NodePtr<S>& at(const std::string& key) {
    auto it = by_name.find(key);
    if (it == by_name.end())
      throw WeightImportError(name + ": unknown parameter '" + key + "'");
    return it->second;
  }
};

template <class S>
struct ModelParams {
  ParamGroup<S> encoder, cfm, mfm, ffn, decoder;

  static const std::vector<std::string>& group_names() {
    static const std::vector<std::string> names{"encoder", "cfm", "mfm", "ffn", "decoder"};
    return names;
  }
  ParamGroup<S>& group(const std::string& g) {
    if (g == "encoder") return encoder;
    if (g == "cfm") return cfm;
    if (g == "mfm") return mfm;
    if (g == "ffn") return ffn;
    if (g == "decoder") return decoder;
    throw WeightImportError("unknown parameter group '" + g + "'");
  }
  const ParamGroup<S>& group(const std::string& g) const {
    return const_cast<ModelParams<S>*>(this)->group(g);
  }

  template <class Fn>
  void for_each(Fn&& fn) {
    for (const auto& g : group_names()) {
      auto& grp = group(g);
      for (const auto& key : grp.order) fn(grp, key, grp.by_name.at(key));
    }
  }
};

namespace detail {

template <class S>
nn::Mat<S> trunc_normal_mat(Rng& rng, int r, int c, double stddev) {
  nn::Mat<S> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<S>(rng.trunc_normal(stddev));
  return m;
}

template <class S>
void add_attn(ParamGroup<S>& g, const std::string& p, Rng& rng, int d, double std_) {
  g.add(p + "wq", trunc_normal_mat<S>(rng, d, d, std_));
  g.add(p + "bq", nn::Mat<S>::Zero(1, d));
  g.add(p + "wk", trunc_normal_mat<S>(rng, d, d, std_));
  g.add(p + "bk", nn::Mat<S>::Zero(1, d));
  g.add(p + "wv", trunc_normal_mat<S>(rng, d, d, std_));
  g.add(p + "bv", nn::Mat<S>::Zero(1, d));
  // output projections start at zero so fresh blocks act as identities
  g.add(p + "wo", nn::Mat<S>::Zero(d, d));
  g.add(p + "bo", nn::Mat<S>::Zero(1, d));
}

template <class S>
void add_ln(ParamGroup<S>& g, const std::string& p, int d) {
  g.add(p + "g", nn::Mat<S>::Ones(1, d));
  g.add(p + "b", nn::Mat<S>::Zero(1, d));
}

template <class S>
void add_mlp(ParamGroup<S>& g, const std::string& p, Rng& rng, int d, int hidden,
             double std_) {
  g.add(p + "w1", trunc_normal_mat<S>(rng, d, hidden, std_));
  g.add(p + "b1", nn::Mat<S>::Zero(1, hidden));
  g.add(p + "w2", trunc_normal_mat<S>(rng, hidden, d, std_));
  g.add(p + "b2", nn::Mat<S>::Zero(1, d));
}

template <class S>
void add_block(ParamGroup<S>& g, const std::string& p, Rng& rng, int d, int hidden,
               double std_) {
  add_ln(g, p + "ln1_", d);
  add_attn(g, p, rng, d, std_);
  add_ln(g, p + "ln2_", d);
  add_mlp(g, p + "mlp_", rng, d, hidden, std_);
}

}  // namespace detail

template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.embed_dim;
  const int p2 = cfg.patch * cfg.patch;
  const int hidden = cfg.mlp_hidden();
  const double std_ = cfg.init_std;
  Rng rng(seed);
  ModelParams<S> params;

  auto& enc = params.encoder;
  enc.name = "encoder";
  enc.add("patch_w", detail::trunc_normal_mat<S>(rng, p2, d, std_));
  enc.add("patch_b", nn::Mat<S>::Zero(1, d));
  if (cfg.use_cls) enc.add("cls", detail::trunc_normal_mat<S>(rng, 1, d, std_));
  for (int i = 0; i < cfg.encoder_depth; ++i)
    detail::add_block(enc, "blk" + std::to_string(i) + ".", rng, d, hidden, std_);

  auto& cfm = params.cfm;
  cfm.name = "cfm";
  detail::add_ln(cfm, "ln_q_", d);
  detail::add_ln(cfm, "ln_kv_", d);
  detail::add_attn(cfm, "", rng, d, std_);
  detail::add_ln(cfm, "mlp_ln_", d);
  detail::add_mlp(cfm, "mlp_", rng, d, hidden, std_);

  auto& mfm = params.mfm;
  mfm.name = "mfm";
  detail::add_ln(mfm, "ln_q_", d);
  detail::add_ln(mfm, "ln_kv_", d);
  detail::add_attn(mfm, "", rng, d, std_);

  auto& ffn = params.ffn;
  ffn.name = "ffn";
  detail::add_mlp(ffn, "", rng, d, hidden, std_);

  auto& dec = params.decoder;
  dec.name = "decoder";
  dec.add("mask_token", detail::trunc_normal_mat<S>(rng, 1, d, std_));
  for (int i = 0; i < cfg.decoder_depth; ++i)
    detail::add_block(dec, "blk" + std::to_string(i) + ".", rng, d, hidden, std_);
  detail::add_ln(dec, "ln_f_", d);
  dec.add("out_w", detail::trunc_normal_mat<S>(rng, d, p2, std_));
  dec.add("out_b", nn::Mat<S>::Zero(1, p2));
  return params;
}

/// Zero the perturbing tails of the fusion modules so the untrained fusion
/// layer reproduces the feature mean exactly (the stage-1 target).
template <class S>
void make_fusion_mean_passthrough(ModelParams<S>& params) {
  for (auto* g : {&params.cfm, &params.mfm, &params.ffn}) {
    for (const auto& key : g->order) {
      if (key == "wo" || key == "bo" || key == "mlp_w2" || key == "mlp_b2" ||
          key == "w2" || key == "b2") {
        auto& node = g->by_name.at(key);
        node->value.setZero();
      }
    }
  }
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <class S>
struct TokenSeq {
  nn::NodePtr<S> tokens;
  GridShape grid;
  bool has_cls = false;
  int spatial_count() const { return grid.token_count(); }
};

/// Fixed 2D sinusoidal positional embeddings, n x d (spatial tokens only).
template <class S>
nn::Mat<S> pos_embed_2d(const GridShape& grid, int d) {
  const int half = d / 2;     // per-axis budget
  const int quarter = half / 2;
  nn::Mat<S> pe = nn::Mat<S>::Zero(grid.token_count(), d);
  for (int gr = 0; gr < grid.rows; ++gr) {
    for (int gc = 0; gc < grid.cols; ++gc) {
      const int t = gr * grid.cols + gc;
      for (int k = 0; k < quarter; ++k) {
        const double omega = std::pow(10000.0, -2.0 * k / half);
        pe(t, 2 * k) = static_cast<S>(std::sin(gr * omega));
        pe(t, 2 * k + 1) = static_cast<S>(std::cos(gr * omega));
        pe(t, half + 2 * k) = static_cast<S>(std::sin(gc * omega));
        pe(t, half + 2 * k + 1) = static_cast<S>(std::cos(gc * omega));
      }
    }
  }
  return pe;
}

template <class S>
struct AttnWeights {
  nn::NodePtr<S> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttnWeights from(const ParamGroup<S>& g, const std::string& p) {
    return {g.at(p + "wq"), g.at(p + "bq"), g.at(p + "wk"), g.at(p + "bk"),
            g.at(p + "wv"), g.at(p + "bv"), g.at(p + "wo"), g.at(p + "bo")};
  }
};

/// Scaled dot-product attention; self-attention when q_src == kv_src.
template <class S>
nn::NodePtr<S> multi_head_attention(nn::NodePtr<S> q_src, nn::NodePtr<S> kv_src,
                                    const AttnWeights<S>& w, int heads) {
  const int d = static_cast<int>(q_src->value.cols());
  if (kv_src->value.cols() != d) throw ShapeError("attention: embed dims differ");
  if (d % heads != 0) throw ShapeError("attention: heads must divide embed dim");
  const int dh = d / heads;
  auto q = nn::add_bias(nn::matmul(q_src, w.wq), w.bq);
  auto k = nn::add_bias(nn::matmul(kv_src, w.wk), w.bk);
  auto v = nn::add_bias(nn::matmul(kv_src, w.wv), w.bv);
  const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<nn::NodePtr<S>> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = nn::col_slice(q, h * dh, dh);
    auto kh = nn::col_slice(k, h * dh, dh);
    auto vh = nn::col_slice(v, h * dh, dh);
    auto attn = nn::softmax_rows(nn::scale(nn::matmul_nt(qh, kh), inv_scale));
    outs.push_back(nn::matmul(attn, vh));
  }
  return nn::add_bias(nn::matmul(nn::col_concat(outs), w.wo), w.bo);
}

template <class S>
nn::NodePtr<S> mlp_forward(nn::NodePtr<S> x, const ParamGroup<S>& g, const std::string& p) {
  auto h = nn::gelu(nn::add_bias(nn::matmul(x, g.at(p + "w1")), g.at(p + "b1")));
  return nn::add_bias(nn::matmul(h, g.at(p + "w2")), g.at(p + "b2"));
}

/// Pre-norm residual block: x += MHA(LN(x)); x += MLP(LN(x)).
template <class S>
nn::NodePtr<S> transformer_block(nn::NodePtr<S> x, const ParamGroup<S>& g,
                                 const std::string& p, int heads) {
  auto normed = nn::layernorm(x, g.at(p + "ln1_g"), g.at(p + "ln1_b"));
  auto h1 = nn::add(x, multi_head_attention(normed, normed, AttnWeights<S>::from(g, p), heads));
  auto normed2 = nn::layernorm(h1, g.at(p + "ln2_g"), g.at(p + "ln2_b"));
  return nn::add(h1, mlp_forward(normed2, g, p + "mlp_"));
}

template <class S>
nn::NodePtr<S> run_blocks(nn::NodePtr<S> x, const ParamGroup<S>& g, int depth, int heads) {
  for (int i = 0; i < depth; ++i)
    x = transformer_block(x, g, "blk" + std::to_string(i) + ".", heads);
  return x;
}

/// Patch projection + positional embeddings (+CLS when configured).
template <class S>
TokenSeq<S> embed_image(const Image& img, const ModelParams<S>& params,
                        const ModelConfig& cfg) {
  if (!img.is_gray()) throw InvalidChannelCount("encode: expects a gray image");
  auto [tokens, grid] = patchify(img, cfg.patch);
  auto x = nn::constant<S>(tokens.template cast<S>());
  x = nn::add_bias(nn::matmul(x, params.encoder.at("patch_w")), params.encoder.at("patch_b"));
  x = nn::add(x, nn::constant<S>(pos_embed_2d<S>(grid, cfg.embed_dim)));
  TokenSeq<S> seq{x, grid, false};
  if (cfg.use_cls) {
    seq.tokens = nn::row_concat<S>({params.encoder.at("cls"), x});
    seq.has_cls = true;
  }
  return seq;
}

/// Full encoder; depth_limit < 0 means all encoder blocks.
template <class S>
TokenSeq<S> encode(const Image& img, const ModelParams<S>& params, const ModelConfig& cfg,
                   int depth_limit = -1) {
  const int depth = depth_limit < 0 ? cfg.encoder_depth : depth_limit;
  if (depth > cfg.encoder_depth) throw ConfigError("encode: depth limit out of range");
  TokenSeq<S> seq = embed_image(img, params, cfg);
  seq.tokens = run_blocks(seq.tokens, params.encoder, depth, cfg.heads);
  return seq;
}

/// Encoder over kept tokens only (masked pretraining path).
template <class S>
TokenSeq<S> encode_masked(const Image& img, const MaskPlan& plan,
                          const ModelParams<S>& params, const ModelConfig& cfg) {
  if (cfg.use_cls) throw ConfigError("encode_masked: CLS token unsupported on the MAE path");
  TokenSeq<S> seq = embed_image(img, params, cfg);
  seq.tokens = nn::row_select(seq.tokens, plan.kept_indices);
  seq.tokens = run_blocks(seq.tokens, params.encoder, cfg.encoder_depth, cfg.heads);
  return seq;
}

/// Decoder blocks + per-token projection back to pixel patches (n x patch^2).
template <class S>
nn::NodePtr<S> decode_tokens_raw(const TokenSeq<S>& phi, const ModelParams<S>& params,
                                 const ModelConfig& cfg) {
  nn::NodePtr<S> x = phi.tokens;
  if (phi.has_cls) {
    std::vector<int> spatial(phi.spatial_count());
    for (int i = 0; i < phi.spatial_count(); ++i) spatial[i] = i + 1;
    x = nn::row_select(x, spatial);
  }
  x = run_blocks(x, params.decoder, cfg.decoder_depth, cfg.heads);
  x = nn::layernorm(x, params.decoder.at("ln_f_g"), params.decoder.at("ln_f_b"));
  return nn::add_bias(nn::matmul(x, params.decoder.at("out_w")), params.decoder.at("out_b"));
}

/// Same, reassembled into an H x W image node.
template <class S>
nn::NodePtr<S> decode_tokens(const TokenSeq<S>& phi, const ModelParams<S>& params,
                             const ModelConfig& cfg) {
  return nn::tokens_to_image(decode_tokens_raw(phi, params, cfg), phi.grid.rows,
                             phi.grid.cols, phi.grid.patch);
}

template <class S>
Image decode(const TokenSeq<S>& phi, const ModelParams<S>& params, const ModelConfig& cfg) {
  auto img = decode_tokens(phi, params, cfg);
  Eigen::ArrayXXd plane = img->value.template cast<double>().array();
  return Image({std::move(plane)}, Range::Unit, Colorspace::Gray);  // clamps
}

/// Reconstruct the full token grid from a masked encoding: mask slots take the
/// learned mask token, every slot gets positional embeddings again. Returns
/// per-token pixel patches (n x patch^2).
template <class S>
nn::NodePtr<S> mae_reconstruct_tokens(const TokenSeq<S>& kept, const MaskPlan& plan,
                                      const ModelParams<S>& params, const ModelConfig& cfg) {
  const int n = kept.grid.token_count();
  auto full = nn::assemble_rows(kept.tokens, params.decoder.at("mask_token"),
                                plan.kept_indices, n);
  full = nn::add(full, nn::constant<S>(pos_embed_2d<S>(kept.grid, cfg.embed_dim)));
  TokenSeq<S> seq{full, kept.grid, false};
  return decode_tokens_raw(seq, params, cfg);
}

// ---------------------------------------------------------------------------
// fusion layer
// ---------------------------------------------------------------------------

/// Two symmetric cross-attention branches with shared weights, averaged,
/// followed by an MLP residual. Swapping the inputs swaps the branches, so
/// the output is invariant under modality exchange.
template <class S>
nn::NodePtr<S> cfm_forward(nn::NodePtr<S> phi_i, nn::NodePtr<S> phi_v,
                           const ParamGroup<S>& g, int heads) {
  if (phi_i->value.rows() != phi_v->value.rows() ||
      phi_i->value.cols() != phi_v->value.cols())
    throw ShapeError("cfm_forward: feature shapes differ");
  const auto attn = AttnWeights<S>::from(g, "");
  auto norm_q = [&](nn::NodePtr<S> x) {
    return nn::layernorm(x, g.at("ln_q_g"), g.at("ln_q_b"));
  };
  auto norm_kv = [&](nn::NodePtr<S> x) {
    return nn::layernorm(x, g.at("ln_kv_g"), g.at("ln_kv_b"));
  };
  auto branch_a = nn::add(phi_i, multi_head_attention(norm_q(phi_i), norm_kv(phi_v), attn, heads));
  auto branch_b = nn::add(phi_v, multi_head_attention(norm_q(phi_v), norm_kv(phi_i), attn, heads));
  auto mixed = nn::scale(nn::add(branch_a, branch_b), S(0.5));
  auto normed = nn::layernorm(mixed, g.at("mlp_ln_g"), g.at("mlp_ln_b"));
  return nn::add(mixed, mlp_forward(normed, g, "mlp_"));
}

/// Phi_D queries both modality features; cosine-similarity gates (softmax over
/// the two modalities) decide how much of each attention output is merged back.
template <class S>
nn::NodePtr<S> mfm_forward(nn::NodePtr<S> phi_i, nn::NodePtr<S> phi_v, nn::NodePtr<S> phi_d,
                           const ParamGroup<S>& g, int heads) {
  if (phi_i->value.rows() != phi_v->value.rows() ||
      phi_i->value.rows() != phi_d->value.rows() ||
      phi_i->value.cols() != phi_v->value.cols() ||
      phi_i->value.cols() != phi_d->value.cols())
    throw ShapeError("mfm_forward: feature shapes differ");
  const auto attn = AttnWeights<S>::from(g, "");
  auto q = nn::layernorm(phi_d, g.at("ln_q_g"), g.at("ln_q_b"));
  auto kv_v = nn::layernorm(phi_v, g.at("ln_kv_g"), g.at("ln_kv_b"));
  auto kv_i = nn::layernorm(phi_i, g.at("ln_kv_g"), g.at("ln_kv_b"));
  auto attn_v = multi_head_attention(q, kv_v, attn, heads);
  auto attn_i = multi_head_attention(q, kv_i, attn, heads);

  auto cosine = [&](nn::NodePtr<S> a, nn::NodePtr<S> b) {
    auto dot = nn::rowwise_sum(nn::mul(a, b));
    auto na = nn::sqrt(nn::rowwise_sum(nn::square(a)));
    auto nb = nn::sqrt(nn::rowwise_sum(nn::square(b)));
    return nn::cdiv(dot, nn::add_scalar(nn::mul(na, nb), S(1e-8)));
  };
  auto cos_v = cosine(phi_d, phi_v);
  auto cos_i = cosine(phi_d, phi_i);
  // softmax over the two modalities == sigmoid of the difference
  auto gate_v = nn::sigmoid(nn::sub(cos_v, cos_i));
  auto ones = nn::constant<S>(nn::Mat<S>::Ones(gate_v->value.rows(), 1));
  auto gate_i = nn::sub(ones, gate_v);
  return nn::add(phi_d, nn::add(nn::mul_rows(attn_v, gate_v), nn::mul_rows(attn_i, gate_i)));
}

template <class S>
struct FusedFeatures {
  nn::NodePtr<S> phi_d, phi_m, phi_f;
};

template <class S>
FusedFeatures<S> fuse_features(nn::NodePtr<S> phi_i, nn::NodePtr<S> phi_v,
                               const ModelParams<S>& params, const ModelConfig& cfg) {
  auto phi_d = cfm_forward(phi_i, phi_v, params.cfm, cfg.heads);
  auto phi_m = mfm_forward(phi_i, phi_v, phi_d, params.mfm, cfg.heads);
  auto phi_f = nn::add(phi_m, mlp_forward(phi_m, params.ffn, ""));
  return {phi_d, phi_m, phi_f};
}

enum class ColorMode { Gray, YcbcrReattach };

/// End-to-end inference. Color mode returns the fused Y with the visible
/// image's Cb/Cr planes reattached, in YCbCr space (exact by construction);
/// callers convert to RGB for display.
template <class S>
Image fuse_images(const Image& visible, const Image& infrared, const ModelParams<S>& params,
                  const ModelConfig& cfg, ColorMode mode = ColorMode::Gray) {
  Image vis_ycbcr;
  Image y;
  if (visible.cs == Colorspace::Rgb) {
    vis_ycbcr = convert_colorspace(visible, Colorspace::Ycbcr);
    y = luma(vis_ycbcr);
  } else {
    y = luma(visible);
  }
  Image ir = luma(infrared);
  if (y.height() != ir.height() || y.width() != ir.width())
    throw ShapeError("fuse_images: source pair dims differ");
  auto phi_v = encode(y, params, cfg);
  auto phi_i = encode(ir, params, cfg);
  auto fused = fuse_features(phi_i.tokens, phi_v.tokens, params, cfg);
  TokenSeq<S> seq{fused.phi_f, phi_v.grid, phi_v.has_cls};
  Image fy = decode(seq, params, cfg);
  if (mode == ColorMode::Gray) return fy;
  if (vis_ycbcr.ch.empty())
    throw InvalidConversion("fuse_images: color mode needs an RGB visible image");
  return Image::raw({fy.plane(), vis_ycbcr.ch[1], vis_ycbcr.ch[2]}, Range::Unit,
                    Colorspace::Ycbcr);
}

enum class ProbeMode { Mean, Max };

/// Combine encoder features of the two sources after `layer` blocks and decode.
template <class S>
Image probe_feature_fusion(const Image& visible, const Image& infrared,
                           const ModelParams<S>& params, const ModelConfig& cfg, int layer,
                           ProbeMode mode) {
  if (layer < 0 || layer > cfg.encoder_depth)
    throw ConfigError("probe_feature_fusion: layer out of range");
  auto phi_v = encode(luma(visible), params, cfg, layer);
  auto phi_i = encode(luma(infrared), params, cfg, layer);
  nn::Mat<S> combined = mode == ProbeMode::Mean
                            ? nn::Mat<S>(S(0.5) * (phi_v.tokens->value + phi_i.tokens->value))
                            : nn::Mat<S>(phi_v.tokens->value.cwiseMax(phi_i.tokens->value));
  TokenSeq<S> seq{nn::constant<S>(std::move(combined)), phi_v.grid, phi_v.has_cls};
  return decode(seq, params, cfg);
}

}  // namespace ivfuse
