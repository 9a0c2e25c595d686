// SPDX-License-Identifier: Apache-2.0
//
// Training regimes: masked pretraining of the encoder, decoder pretraining
// against a locked encoder, two-stage guided training of a fusion module
// (feature-space alignment first, image-space fusion loss second), and the
// hierarchical CFM-then-MFM schedule.
#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfuse/checkpoint.hpp"
#include "ivfuse/data.hpp"
#include "ivfuse/losses.hpp"
#include "ivfuse/model.hpp"

namespace ivfuse {

enum class TrainTarget { EncoderMae, Decoder, Cfm, Mfm };

inline const char* target_name(TrainTarget t) {
  switch (t) {
    case TrainTarget::EncoderMae: return "encoder_mae";
    case TrainTarget::Decoder: return "decoder";
    case TrainTarget::Cfm: return "cfm";
    case TrainTarget::Mfm: return "mfm";
  }
  return "?";
}

struct TrainPlan {
  TrainTarget target = TrainTarget::Cfm;
  int total_steps = 100;
  int align_steps = 20;  // stage-1 length, guided targets only
  double lr = 1e-4;
  double weight_decay = 0.05;
  int batch = 4;
  std::uint64_t seed = 0;
  int log_every = 1;

  void validate() const {
    if (total_steps < 0 || align_steps < 0 || align_steps > total_steps)
      throw ConfigError("plan: need 0 <= align_steps <= total_steps");
    if (lr <= 0) throw ConfigError("plan: lr must be positive");
    if (batch < 1) throw ConfigError("plan: batch must be >= 1");
  }
};

struct TrainRecord {
  int step = 0;
  std::string stage;  // align | fusion | recon | mae
  std::string target;
  double total = 0;
  std::map<std::string, double> components;
  double wall_ms = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::string checkpoint_path;

  void append(TrainRecord rec) { records.push_back(std::move(rec)); }

  // Wall times are excluded by default so reruns are byte-identical.
  void write_jsonl(const std::string& path, bool include_wall = false) const {
    std::ofstream os(path);
    if (!os) throw IoError("train log: cannot write " + path);
    for (const auto& r : records) {
      nlohmann::json j = {{"step", r.step},
                          {"stage", r.stage},
                          {"target", r.target},
                          {"loss", r.total}};
      for (const auto& [k, v] : r.components) j[k] = v;
      if (include_wall) j["wall_ms"] = r.wall_ms;
      os << j.dump() << "\n";
    }
  }
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// AdamW with decoupled weight decay, fixed learning rate.
template <class S>
class AdamW {
 public:
  AdamW(double lr, double weight_decay)
      : lr_(static_cast<S>(lr)), wd_(static_cast<S>(weight_decay)) {}

  /// One update for a single tensor, keyed for persistent state.
  void update(const std::string& key, nn::Mat<S>& theta, const nn::Mat<S>& grad,
              int step_index) {
    auto& [m, v] = state_[key];
    if (m.rows() != theta.rows() || m.cols() != theta.cols()) {
      m = nn::Mat<S>::Zero(theta.rows(), theta.cols());
      v = nn::Mat<S>::Zero(theta.rows(), theta.cols());
    }
    m = beta1_ * m + (S(1) - beta1_) * grad;
    v = (beta2_ * v.array() + (S(1) - beta2_) * grad.array().square()).matrix();
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), step_index));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), step_index));
    theta.array() -= lr_ * wd_ * theta.array();  // decoupled decay
    theta.array() -=
        lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }

  /// Update every non-frozen parameter in the listed groups; frozen groups
  /// and unlisted groups stay bit-identical.
  void step(ModelParams<S>& params, const std::set<std::string>& groups) {
    ++t_;
    for (const auto& gname : ModelParams<S>::group_names()) {
      if (!groups.count(gname)) continue;
      auto& grp = params.group(gname);
      if (grp.frozen) throw ConfigError("optimizer: group '" + gname + "' is frozen");
      for (const auto& key : grp.order) {
        auto& node = grp.by_name.at(key);
        if (node->grad.rows() != node->value.rows() ||
            node->grad.cols() != node->value.cols())
          continue;  // parameter absent from this step's graph
        update(gname + "/" + key, node->value, node->grad, t_);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  S lr_, wd_;
  S beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
  int t_ = 0;
  std::map<std::string, std::pair<nn::Mat<S>, nn::Mat<S>>> state_;
};

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Frozen groups drop out of the autodiff graph entirely.
template <class S>
void apply_frozen_flags(ModelParams<S>& params) {
  params.for_each([](ParamGroup<S>& g, const std::string&, const nn::NodePtr<S>& node) {
    node->requires_grad = !g.frozen;
  });
}

template <class S>
void clear_grads(ModelParams<S>& params) {
  params.for_each([](ParamGroup<S>&, const std::string&, const nn::NodePtr<S>& node) {
    node->grad.resize(0, 0);
  });
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t x = seed;
  x = x * 6364136223846793005ULL + a * 1442695040888963407ULL + b + 1013904223ULL;
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

/// Deterministic epoch-reshuffled index stream.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

  std::size_t next() {
    if (at_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return order_[at_++];
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(mix_seed(seed_, 0x73687566666c65ULL, epoch_));
    rng.shuffle(order_);
    at_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t at_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// training regimes
// ---------------------------------------------------------------------------

/// Masked self-supervised pretraining of encoder + decoder. The loss is the
/// mean absolute error on masked patches (full-image when mask_ratio == 0).
template <class S>
TrainLog pretrain_encoder_mae(const std::vector<Image>& corpus, ModelParams<S>& params,
                              const ModelConfig& cfg, const TrainPlan& plan) {
  plan.validate();
  if (plan.target != TrainTarget::EncoderMae)
    throw ConfigError("pretrain_encoder_mae: plan target mismatch");
  if (corpus.empty()) throw DataError("pretrain_encoder_mae: empty corpus");
  detail::apply_frozen_flags(params);
  AdamW<S> opt(plan.lr, plan.weight_decay);
  detail::IndexStream stream(corpus.size(), plan.seed);
  TrainLog log;
  for (int step = 0; step < plan.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::clear_grads(params);
    nn::NodePtr<S> batch_loss;
    for (int b = 0; b < plan.batch; ++b) {
      const Image& img = corpus[stream.next()];
      auto [pixels, grid] = patchify(img, cfg.patch);
      const int n = grid.token_count();
      MaskPlan mask =
          random_mask(n, cfg.mask_ratio, detail::mix_seed(plan.seed, step, b));
      auto kept = encode_masked(img, mask, params, cfg);
      auto recon = mae_reconstruct_tokens(kept, mask, params, cfg);
      std::vector<int> masked;
      for (int i = 0; i < n; ++i)
        if (mask.mask_flags[i]) masked.push_back(i);
      if (masked.empty())
        for (int i = 0; i < n; ++i) masked.push_back(i);  // degenerate: full image
      auto target = nn::constant<S>(nn::Mat<S>(pixels.template cast<S>()));
      auto loss = nn::mean_all(nn::abs(
          nn::sub(nn::row_select(recon, masked), nn::row_select(target, masked))));
      batch_loss = batch_loss ? nn::add(batch_loss, loss) : loss;
    }
    batch_loss = nn::scale(batch_loss, S(1) / static_cast<S>(plan.batch));
    nn::backward(batch_loss);
    opt.step(params, {"encoder", "decoder"});
    if (step % plan.log_every == 0 || step + 1 == plan.total_steps) {
      TrainRecord rec;
      rec.step = step;
      rec.stage = "mae";
      rec.target = target_name(plan.target);
      rec.total = static_cast<double>(batch_loss->value(0, 0));
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      log.append(std::move(rec));
    }
  }
  return log;
}

/// Reconstruction training of the decoder only; the encoder must be frozen.
template <class S>
TrainLog pretrain_decoder(const std::vector<Image>& corpus, ModelParams<S>& params,
                          const ModelConfig& cfg, const TrainPlan& plan) {
  plan.validate();
  if (plan.target != TrainTarget::Decoder)
    throw ConfigError("pretrain_decoder: plan target mismatch");
  if (!params.encoder.frozen)
    throw ConfigError("pretrain_decoder: encoder must be frozen");
  if (corpus.empty()) throw DataError("pretrain_decoder: empty corpus");
  detail::apply_frozen_flags(params);
  AdamW<S> opt(plan.lr, plan.weight_decay);
  detail::IndexStream stream(corpus.size(), plan.seed);
  TrainLog log;
  for (int step = 0; step < plan.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::clear_grads(params);
    nn::NodePtr<S> batch_loss;
    for (int b = 0; b < plan.batch; ++b) {
      const Image& img = corpus[stream.next()];
      auto phi = encode(img, params, cfg);
      auto recon = decode_tokens(phi, params, cfg);
      auto loss = loss_decoder_graph<S>(
          recon, img.plane().matrix().template cast<S>());
      batch_loss = batch_loss ? nn::add(batch_loss, loss) : loss;
    }
    batch_loss = nn::scale(batch_loss, S(1) / static_cast<S>(plan.batch));
    nn::backward(batch_loss);
    opt.step(params, {"decoder"});
    if (step % plan.log_every == 0 || step + 1 == plan.total_steps) {
      TrainRecord rec;
      rec.step = step;
      rec.stage = "recon";
      rec.target = target_name(plan.target);
      rec.total = static_cast<double>(batch_loss->value(0, 0));
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      log.append(std::move(rec));
    }
  }
  return log;
}

struct GuidedOptions {
  LossWeights weights;
  /// Ablation-only escape hatch: lets the CFM stay trainable during the MFM
  /// phase (the "active CFM" comparison).
  bool allow_active_cfm = false;
  int step_offset = 0;  // merged-log numbering for hierarchical runs
};

/// Algorithm: t < align_steps minimizes feature alignment against the
/// modality mean, afterwards the fusion loss of the decoded output. With
/// target=cfm the CFM output feeds the decoder directly (MFM bypassed).
template <class S>
TrainLog guided_train(const std::vector<LoadedPair>& corpus, ModelParams<S>& params,
                      const ModelConfig& cfg, const TrainPlan& plan,
                      const GuidedOptions& options = {}) {
  plan.validate();
  if (plan.target != TrainTarget::Cfm && plan.target != TrainTarget::Mfm)
    throw ConfigError("guided_train: target must be cfm or mfm");
  if (!params.encoder.frozen || !params.decoder.frozen)
    throw ConfigError("guided_train: encoder and decoder must be frozen");
  const bool train_mfm = plan.target == TrainTarget::Mfm;
  if (train_mfm && !params.cfm.frozen && !options.allow_active_cfm)
    throw ConfigError("guided_train: cfm must be frozen while training mfm");
  if (corpus.empty()) throw DataError("guided_train: empty corpus");
  detail::apply_frozen_flags(params);
  AdamW<S> opt(plan.lr, plan.weight_decay);
  detail::IndexStream stream(corpus.size(), plan.seed);
  std::set<std::string> groups = train_mfm ? std::set<std::string>{"mfm", "ffn"}
                                           : std::set<std::string>{"cfm"};
  if (train_mfm && options.allow_active_cfm && !params.cfm.frozen) groups.insert("cfm");

  TrainLog log;
  for (int step = 0; step < plan.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool align_stage = step < plan.align_steps;
    detail::clear_grads(params);
    nn::NodePtr<S> batch_loss;
    std::map<std::string, double> components;
    for (int b = 0; b < plan.batch; ++b) {
      const LoadedPair& pair = corpus[stream.next()];
      auto phi_v = encode(pair.visible, params, cfg);
      auto phi_i = encode(pair.infrared, params, cfg);
      nn::NodePtr<S> phi_out;
      if (train_mfm) {
        phi_out = fuse_features(phi_i.tokens, phi_v.tokens, params, cfg).phi_f;
      } else {
        phi_out = cfm_forward(phi_i.tokens, phi_v.tokens, params.cfm, cfg.heads);
      }
      nn::NodePtr<S> loss;
      if (align_stage) {
        loss = loss_align_graph(phi_out, phi_i.tokens, phi_v.tokens);
      } else {
        TokenSeq<S> seq{phi_out, phi_v.grid, phi_v.has_cls};
        auto fused = decode_tokens(seq, params, cfg);
        auto parts = loss_fusion_graph(fused, pair.visible, pair.infrared, options.weights);
        loss = parts.total;
        components["l_int"] += static_cast<double>(parts.l_int->value(0, 0)) / plan.batch;
        components["l_grad"] += static_cast<double>(parts.l_grad->value(0, 0)) / plan.batch;
        components["l_lap"] += static_cast<double>(parts.l_lap->value(0, 0)) / plan.batch;
      }
      batch_loss = batch_loss ? nn::add(batch_loss, loss) : loss;
    }
    batch_loss = nn::scale(batch_loss, S(1) / static_cast<S>(plan.batch));
    nn::backward(batch_loss);
    opt.step(params, groups);
    if (step % plan.log_every == 0 || step + 1 == plan.total_steps) {
      TrainRecord rec;
      rec.step = options.step_offset + step;
      rec.stage = align_stage ? "align" : "fusion";
      rec.target = target_name(plan.target);
      rec.total = static_cast<double>(batch_loss->value(0, 0));
      rec.components = std::move(components);
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      log.append(std::move(rec));
    }
  }
  return log;
}

/// CFM two-stage run, freeze CFM, MFM two-stage run; merged log.
template <class S>
TrainLog hierarchical_train(const std::vector<LoadedPair>& corpus, ModelParams<S>& params,
                            const ModelConfig& cfg, const TrainPlan& cfm_plan,
                            const TrainPlan& mfm_plan, const LossWeights& weights = {}) {
  if (cfm_plan.target != TrainTarget::Cfm || mfm_plan.target != TrainTarget::Mfm)
    throw ConfigError("hierarchical_train: plans must target cfm then mfm");
  GuidedOptions options;
  options.weights = weights;
  TrainLog log = guided_train(corpus, params, cfg, cfm_plan, options);
  params.cfm.frozen = true;
  options.step_offset = cfm_plan.total_steps;
  TrainLog mfm_log = guided_train(corpus, params, cfg, mfm_plan, options);
  for (auto& rec : mfm_log.records) log.append(std::move(rec));
  log.checkpoint_path = mfm_log.checkpoint_path;
  return log;
}

}  // namespace ivfuse
