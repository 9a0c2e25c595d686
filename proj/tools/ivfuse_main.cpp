// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: synthetic data generation, pretraining, guided
// training, fusion inference, evaluation, and the ablation studies.
//
// Exit codes: 0 ok, 2 config error, 3 missing prerequisite artifact,
// 4 data mismatch.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivfuse/checkpoint.hpp"
#include "ivfuse/data.hpp"
#include "ivfuse/metrics.hpp"
#include "ivfuse/model.hpp"
#include "ivfuse/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ivfuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitData = 4;

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  std::string data_root = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "out";
  LossWeights loss;
  std::uint64_t seed = 0;
  int crop = 0;  // 0 = center-crop each image to patch-divisible size
  TrainPlan mae_plan, decoder_plan, cfm_plan, mfm_plan;
};

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + where);
}

TrainPlan parse_plan(const json& j, TrainPlan plan, const std::string& where) {
  reject_unknown(j, {"total_steps", "align_steps", "lr", "weight_decay", "batch", "seed",
                     "log_every"},
                 where);
  if (j.contains("total_steps")) plan.total_steps = j.at("total_steps").get<int>();
  if (j.contains("align_steps")) plan.align_steps = j.at("align_steps").get<int>();
  if (j.contains("lr")) plan.lr = j.at("lr").get<double>();
  if (j.contains("weight_decay")) plan.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("batch")) plan.batch = j.at("batch").get<int>();
  if (j.contains("seed")) plan.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("log_every")) plan.log_every = j.at("log_every").get<int>();
  plan.validate();
  return plan;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  reject_unknown(j, {"model", "paths", "loss", "seed", "crop", "plans"}, "top level");

  RunConfig cfg;
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"patch", "embed_dim", "encoder_depth", "decoder_depth", "heads",
                    "mlp_ratio", "use_cls", "mask_ratio", "init_std"},
                   "model");
    if (m.contains("patch")) cfg.model.patch = m.at("patch").get<int>();
    if (m.contains("embed_dim")) cfg.model.embed_dim = m.at("embed_dim").get<int>();
    if (m.contains("encoder_depth"))
      cfg.model.encoder_depth = m.at("encoder_depth").get<int>();
    if (m.contains("decoder_depth"))
      cfg.model.decoder_depth = m.at("decoder_depth").get<int>();
    if (m.contains("heads")) cfg.model.heads = m.at("heads").get<int>();
    if (m.contains("mlp_ratio")) cfg.model.mlp_ratio = m.at("mlp_ratio").get<double>();
    if (m.contains("use_cls")) cfg.model.use_cls = m.at("use_cls").get<bool>();
    if (m.contains("mask_ratio")) cfg.model.mask_ratio = m.at("mask_ratio").get<double>();
    if (m.contains("init_std")) cfg.model.init_std = m.at("init_std").get<double>();
    cfg.model.validate();
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown(p, {"data_root", "checkpoint_dir", "output_dir"}, "paths");
    if (p.contains("data_root")) cfg.data_root = p.at("data_root").get<std::string>();
    if (p.contains("checkpoint_dir"))
      cfg.checkpoint_dir = p.at("checkpoint_dir").get<std::string>();
    if (p.contains("output_dir")) cfg.output_dir = p.at("output_dir").get<std::string>();
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"alpha", "beta"}, "loss");
    if (l.contains("alpha")) cfg.loss.alpha = l.at("alpha").get<double>();
    if (l.contains("beta")) cfg.loss.beta = l.at("beta").get<double>();
    cfg.loss.validate();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("crop")) cfg.crop = j.at("crop").get<int>();

  cfg.mae_plan.target = TrainTarget::EncoderMae;
  cfg.mae_plan.align_steps = 0;
  cfg.decoder_plan.target = TrainTarget::Decoder;
  cfg.decoder_plan.align_steps = 0;
  cfg.cfm_plan.target = TrainTarget::Cfm;
  cfg.mfm_plan.target = TrainTarget::Mfm;
  for (TrainPlan* p : {&cfg.mae_plan, &cfg.decoder_plan, &cfg.cfm_plan, &cfg.mfm_plan})
    p->seed = cfg.seed;
  if (j.contains("plans")) {
    const json& p = j.at("plans");
    reject_unknown(p, {"mae", "decoder", "cfm", "mfm"}, "plans");
    if (p.contains("mae")) cfg.mae_plan = parse_plan(p.at("mae"), cfg.mae_plan, "plans.mae");
    if (p.contains("decoder"))
      cfg.decoder_plan = parse_plan(p.at("decoder"), cfg.decoder_plan, "plans.decoder");
    if (p.contains("cfm")) cfg.cfm_plan = parse_plan(p.at("cfm"), cfg.cfm_plan, "plans.cfm");
    if (p.contains("mfm")) cfg.mfm_plan = parse_plan(p.at("mfm"), cfg.mfm_plan, "plans.mfm");
  }
  return cfg;
}

json plan_to_json(const TrainPlan& p) {
  return {{"total_steps", p.total_steps}, {"align_steps", p.align_steps},
          {"lr", p.lr},                   {"weight_decay", p.weight_decay},
          {"batch", p.batch},             {"seed", p.seed},
          {"log_every", p.log_every}};
}

/// Reproducibility echo: the fully resolved configuration, defaults included.
void write_resolved_config(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.output_dir);
  json j;
  j["command"] = command;
  j["model"] = config_to_json(cfg.model);
  j["paths"] = {{"data_root", cfg.data_root},
                {"checkpoint_dir", cfg.checkpoint_dir},
                {"output_dir", cfg.output_dir}};
  j["loss"] = {{"alpha", cfg.loss.alpha}, {"beta", cfg.loss.beta}};
  j["seed"] = cfg.seed;
  j["crop"] = cfg.crop;
  j["plans"] = {{"mae", plan_to_json(cfg.mae_plan)},
                {"decoder", plan_to_json(cfg.decoder_plan)},
                {"cfm", plan_to_json(cfg.cfm_plan)},
                {"mfm", plan_to_json(cfg.mfm_plan)}};
  std::ofstream os(fs::path(cfg.output_dir) / ("resolved_config." + command + ".json"));
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

Image prepare(const Image& img, int patch, int crop) {
  Image out = luma(img);
  if (crop > 0) {
    if (crop % patch != 0) throw ConfigError("crop must be patch-divisible");
    if (crop > out.height() || crop > out.width())
      throw ConfigError("crop larger than image");
    out = ivfuse::crop(out, (out.height() - crop) / 2, (out.width() - crop) / 2, crop,
                       crop);
  } else {
    out = center_crop_divisible(out, patch);
  }
  return out;
}

std::vector<Image> reconstruction_corpus(const RunConfig& cfg) {
  const PairSet set = scan_pairs(cfg.data_root);
  if (set.records.empty()) throw DataError("no image pairs under " + cfg.data_root);
  std::vector<Image> corpus;
  for (const auto& rec : set.records) {
    const LoadedPair pair = load_pair(rec);
    corpus.push_back(prepare(pair.visible, cfg.model.patch, cfg.crop));
    corpus.push_back(prepare(pair.infrared, cfg.model.patch, cfg.crop));
  }
  return corpus;
}

std::vector<LoadedPair> fusion_corpus(const RunConfig& cfg) {
  const PairSet set = scan_pairs(cfg.data_root);
  if (set.records.empty()) throw DataError("no image pairs under " + cfg.data_root);
  std::vector<LoadedPair> corpus;
  for (const auto& rec : set.records) {
    LoadedPair pair = load_pair(rec);
    pair.visible = prepare(pair.visible, cfg.model.patch, cfg.crop);
    pair.infrared = prepare(pair.infrared, cfg.model.patch, cfg.crop);
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

void require_checkpoint(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw IoError("missing checkpoint: " + dir + "/manifest.json");
}

void append_log(const TrainLog& log, const std::string& path, bool append) {
  TrainLog copy = log;
  int offset = 0;
  if (append && fs::exists(path)) {
    std::ifstream is(path);
    for (std::string line; std::getline(is, line);) ++offset;
  }
  for (auto& rec : copy.records) rec.step += offset;
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write log " + path);
  for (const auto& r : copy.records) {
    json j = {{"step", r.step}, {"stage", r.stage}, {"target", r.target},
              {"loss", r.total}};
    for (const auto& [k, v] : r.components) j[k] = v;
    os << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& out) {
  const PairSet set = synth_pairs(n, size, seed, out);
  std::cout << "wrote " << set.records.size() << " pairs to " << out << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& stage, bool resume) {
  RunConfig cfg = parse_config(config_path);
  write_resolved_config(cfg, "pretrain-" + stage);
  const auto corpus = reconstruction_corpus(cfg);
  const std::string log_path =
      (fs::path(cfg.output_dir) / ("pretrain_" + stage + ".jsonl")).string();

  ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
  if (stage == "mae") {
    if (resume) {
      require_checkpoint(cfg.checkpoint_dir);
      load_checkpoint(params, cfg.model, cfg.checkpoint_dir);
      params.encoder.frozen = false;
      params.decoder.frozen = false;
    }
    const TrainLog log = pretrain_encoder_mae(corpus, params, cfg.model, cfg.mae_plan);
    save_checkpoint(params, cfg.model, cfg.checkpoint_dir);
    append_log(log, log_path, resume);
    std::cout << "mae pretraining done, final loss " << log.records.back().total << "\n";
  } else {
    // decoder stage builds on an existing encoder checkpoint
    require_checkpoint(cfg.checkpoint_dir);
    load_checkpoint(params, cfg.model, cfg.checkpoint_dir,
                    resume ? std::vector<std::string>{} : std::vector<std::string>{"encoder"});
    params.encoder.frozen = true;
    params.decoder.frozen = false;
    const TrainLog log = pretrain_decoder(corpus, params, cfg.model, cfg.decoder_plan);
    save_checkpoint(params, cfg.model, cfg.checkpoint_dir);
    append_log(log, log_path, resume);
    std::cout << "decoder pretraining done, final loss " << log.records.back().total
              << "\n";
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, bool hierarchical,
              const std::string& target) {
  RunConfig cfg = parse_config(config_path);
  write_resolved_config(cfg, "train");
  const auto corpus = fusion_corpus(cfg);
  require_checkpoint(cfg.checkpoint_dir);

  ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
  load_checkpoint(params, cfg.model, cfg.checkpoint_dir);
  params.encoder.frozen = true;
  params.decoder.frozen = true;

  GuidedOptions options;
  options.weights = cfg.loss;
  TrainLog log;
  if (hierarchical) {
    log = hierarchical_train(corpus, params, cfg.model, cfg.cfm_plan, cfg.mfm_plan,
                             cfg.loss);
  } else if (target == "cfm") {
    params.cfm.frozen = false;
    log = guided_train(corpus, params, cfg.model, cfg.cfm_plan, options);
  } else if (target == "mfm") {
    log = guided_train(corpus, params, cfg.model, cfg.mfm_plan, options);
  } else {
    throw ConfigError("train: pass --hierarchical or --target {cfm,mfm}");
  }
  save_checkpoint(params, cfg.model, cfg.checkpoint_dir);
  const std::string log_path = (fs::path(cfg.output_dir) / "train.jsonl").string();
  append_log(log, log_path, /*append=*/false);
  std::cout << "training done, final loss " << log.records.back().total << "\n";
  return kExitOk;
}

Image load_for_fusion(const std::string& path) { return read_png(path); }

int cmd_fuse(const std::string& checkpoint, const std::string& vi, const std::string& ir,
             const std::string& out, const std::string& color,
             const std::string& config_path) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = parse_config(config_path);
  require_checkpoint(checkpoint);
  ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
  load_checkpoint(params, cfg.model, checkpoint);
  const ColorMode mode =
      color == "ycbcr-reattach" ? ColorMode::YcbcrReattach : ColorMode::Gray;

  auto fuse_one = [&](const std::string& vp, const std::string& ip,
                      const std::string& op) {
    Image v = load_for_fusion(vp);
    Image i = load_for_fusion(ip);
    // crop both to a common patch-divisible window
    const int h = std::min(v.height(), i.height()) / cfg.model.patch * cfg.model.patch;
    const int w = std::min(v.width(), i.width()) / cfg.model.patch * cfg.model.patch;
    if (h == 0 || w == 0) throw DataError("fuse: image smaller than one patch");
    v = crop(v, (v.height() - h) / 2, (v.width() - w) / 2, h, w);
    i = crop(i, (i.height() - h) / 2, (i.width() - w) / 2, h, w);
    Image fused = fuse_images(v, i, params, cfg.model, mode);
    if (fused.cs == Colorspace::Ycbcr)
      fused = convert_colorspace(fused, Colorspace::Rgb);
    write_png(op, fused);
  };

  if (fs::is_directory(vi)) {
    if (!fs::is_directory(ir)) throw DataError("fuse: --ir must be a directory too");
    std::map<std::string, fs::path> sv, si;
    for (const auto& e : fs::directory_iterator(vi))
      if (e.path().extension() == ".png") sv[e.path().stem().string()] = e.path();
    for (const auto& e : fs::directory_iterator(ir))
      if (e.path().extension() == ".png") si[e.path().stem().string()] = e.path();
    std::string unmatched;
    for (const auto& [k, _] : sv)
      if (!si.count(k)) unmatched += " " + k;
    for (const auto& [k, _] : si)
      if (!sv.count(k)) unmatched += " " + k;
    if (!unmatched.empty()) throw DataError("fuse: unmatched stems:" + unmatched);
    if (sv.empty()) throw DataError("fuse: no PNG pairs found");
    fs::create_directories(out);
    for (const auto& [stem, vp] : sv)
      fuse_one(vp.string(), si.at(stem).string(),
               (fs::path(out) / (stem + ".png")).string());
    std::cout << "fused " << sv.size() << " pairs into " << out << "\n";
  } else {
    if (!out.empty() && out.find(".png") == std::string::npos)
      fs::create_directories(out);
    fuse_one(vi, ir, out);
    std::cout << "wrote " << out << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& vi, const std::string& ir, const std::string& fused,
             const std::string& out_report) {
  MetricReport report = evaluate(vi, ir, fused);
  report.dataset = vi;
  report.method = fused;
  write_report_csv(report, out_report + ".csv");
  write_report_json(report, out_report + ".json");
  std::cout << "evaluated " << report.rows.size() << " images; mean cc "
            << report.aggregate.cc << ", psnr " << report.aggregate.psnr << "\n";
  return kExitOk;
}

// two-stage vs direct study: same seeds, 25+25 against 50-direct
int ablate_two_stage(const RunConfig& cfg) {
  const auto corpus = fusion_corpus(cfg);
  require_checkpoint(cfg.checkpoint_dir);

  auto run = [&](int align_steps) {
    ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
    load_checkpoint(params, cfg.model, cfg.checkpoint_dir);
    params.encoder.frozen = true;
    params.decoder.frozen = true;
    params.cfm.frozen = false;
    TrainPlan plan = cfg.cfm_plan;
    plan.total_steps = 50;
    plan.align_steps = align_steps;
    GuidedOptions options;
    options.weights = cfg.loss;
    return guided_train(corpus, params, cfg.model, plan, options);
  };
  const TrainLog two_stage = run(25);
  const TrainLog direct = run(0);

  fs::create_directories(cfg.output_dir);
  const fs::path csv = fs::path(cfg.output_dir) / "ablate_two_stage.csv";
  std::ofstream os(csv);
  os << "curve,step,stage,loss\n";
  for (const auto& r : two_stage.records)
    os << "two_stage," << r.step << "," << r.stage << "," << r.total << "\n";
  for (const auto& r : direct.records)
    os << "direct," << r.step << "," << r.stage << "," << r.total << "\n";
  std::cout << "two-stage final " << two_stage.records.back().total << ", direct final "
            << direct.records.back().total << " -> " << csv.string() << "\n";
  return kExitOk;
}

// frozen-CFM (hierarchical contract) vs active-CFM comparison
int ablate_hierarchy(const RunConfig& cfg) {
  const auto corpus = fusion_corpus(cfg);
  require_checkpoint(cfg.checkpoint_dir);

  auto base_params = [&]() {
    ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
    load_checkpoint(params, cfg.model, cfg.checkpoint_dir);
    params.encoder.frozen = true;
    params.decoder.frozen = true;
    params.cfm.frozen = false;
    return params;
  };

  auto frozen_params = base_params();
  const TrainLog frozen_log = hierarchical_train(corpus, frozen_params, cfg.model,
                                                 cfg.cfm_plan, cfg.mfm_plan, cfg.loss);

  auto active_params = base_params();
  GuidedOptions options;
  options.weights = cfg.loss;
  TrainLog active_log = guided_train(corpus, active_params, cfg.model, cfg.cfm_plan,
                                     options);
  options.allow_active_cfm = true;
  options.step_offset = cfg.cfm_plan.total_steps;
  TrainLog active_mfm = guided_train(corpus, active_params, cfg.model, cfg.mfm_plan,
                                     options);
  for (auto& rec : active_mfm.records) active_log.append(std::move(rec));

  fs::create_directories(cfg.output_dir);
  const fs::path csv = fs::path(cfg.output_dir) / "ablate_hierarchy.csv";
  std::ofstream os(csv);
  os << "variant,step,stage,target,loss\n";
  for (const auto& r : frozen_log.records)
    os << "frozen_cfm," << r.step << "," << r.stage << "," << r.target << "," << r.total
       << "\n";
  for (const auto& r : active_log.records)
    os << "active_cfm," << r.step << "," << r.stage << "," << r.target << "," << r.total
       << "\n";
  std::cout << "frozen-cfm final " << frozen_log.records.back().total
            << ", active-cfm final " << active_log.records.back().total << " -> "
            << csv.string() << "\n";
  return kExitOk;
}

// decode feature-domain mean/max at every encoder depth
int ablate_feature_probe(const RunConfig& cfg) {
  const auto corpus = fusion_corpus(cfg);
  require_checkpoint(cfg.checkpoint_dir);
  ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
  load_checkpoint(params, cfg.model, cfg.checkpoint_dir);

  const LoadedPair& pair = corpus.front();
  fs::create_directories(cfg.output_dir);
  for (int layer = 0; layer <= cfg.model.encoder_depth; ++layer) {
    for (const auto mode : {ProbeMode::Mean, ProbeMode::Max}) {
      const Image img = probe_feature_fusion(pair.visible, pair.infrared, params,
                                             cfg.model, layer, mode);
      const std::string name = std::string("probe_") +
                               (mode == ProbeMode::Mean ? "mean" : "max") + "_layer" +
                               std::to_string(layer) + ".png";
      write_png((fs::path(cfg.output_dir) / name).string(), img);
    }
  }
  std::cout << "wrote " << 2 * (cfg.model.encoder_depth + 1) << " probe images to "
            << cfg.output_dir << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& study) {
  RunConfig cfg = parse_config(config_path);
  write_resolved_config(cfg, "ablate-" + study);
  if (study == "two-stage") return ablate_two_stage(cfg);
  if (study == "hierarchy") return ablate_hierarchy(cfg);
  if (study == "feature-probe") return ablate_feature_probe(cfg);
  throw ConfigError("ablate: unknown study " + study);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"infrared/visible image fusion toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic pair corpus");
  int synth_n = 16, synth_size = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "data";
  synth->add_option("--n", synth_n, "number of pairs")->capture_default_str();
  synth->add_option("--size", synth_size, "image side length")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "mae or decoder pretraining");
  std::string pre_config, pre_stage;
  bool pre_resume = false;
  pretrain->add_option("--config", pre_config, "JSON config file")->required();
  pretrain->add_option("--stage", pre_stage, "mae | decoder")
      ->required()
      ->check(CLI::IsMember({"mae", "decoder"}));
  pretrain->add_flag("--resume", pre_resume, "continue from the existing checkpoint");

  // train
  auto* train = app.add_subcommand("train", "guided fusion-layer training");
  std::string train_config, train_target;
  bool train_hier = false;
  train->add_option("--config", train_config, "JSON config file")->required();
  train->add_flag("--hierarchical", train_hier, "cfm stage then mfm stage");
  train->add_option("--target", train_target, "cfm | mfm")
      ->check(CLI::IsMember({"cfm", "mfm"}));

  // fuse
  auto* fuse = app.add_subcommand("fuse", "fuse a pair or a directory of pairs");
  std::string fuse_ckpt, fuse_vi, fuse_ir, fuse_out, fuse_color = "gray", fuse_config;
  fuse->add_option("--checkpoint", fuse_ckpt, "checkpoint directory")->required();
  fuse->add_option("--vi", fuse_vi, "visible PNG or directory")->required();
  fuse->add_option("--ir", fuse_ir, "infrared PNG or directory")->required();
  fuse->add_option("--out", fuse_out, "output PNG or directory")->required();
  fuse->add_option("--color", fuse_color, "gray | ycbcr-reattach")
      ->capture_default_str()
      ->check(CLI::IsMember({"gray", "ycbcr-reattach"}));
  fuse->add_option("--config", fuse_config, "JSON config file (model dims)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score fused images against sources");
  std::string eval_vi, eval_ir, eval_fused, eval_out = "report";
  eval_cmd->add_option("--vi", eval_vi, "visible directory")->required();
  eval_cmd->add_option("--ir", eval_ir, "infrared directory")->required();
  eval_cmd->add_option("--fused", eval_fused, "fused directory")->required();
  eval_cmd->add_option("--out-report", eval_out, "report path prefix")
      ->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "reproduce the ablation studies");
  std::string ab_config, ab_study;
  ablate->add_option("--config", ab_config, "JSON config file")->required();
  ablate->add_option("--study", ab_study, "two-stage | hierarchy | feature-probe")
      ->required()
      ->check(CLI::IsMember({"two-stage", "hierarchy", "feature-probe"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_n, synth_size, synth_seed, synth_out);
    if (*pretrain) return cmd_pretrain(pre_config, pre_stage, pre_resume);
    if (*train) return cmd_train(train_config, train_hier, train_target);
    if (*fuse)
      return cmd_fuse(fuse_ckpt, fuse_vi, fuse_ir, fuse_out, fuse_color, fuse_config);
    if (*eval_cmd) return cmd_eval(eval_vi, eval_ir, eval_fused, eval_out);
    if (*ablate) return cmd_ablate(ab_config, ab_study);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const WeightImportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
