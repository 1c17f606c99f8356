#include "maskspec/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace maskspec::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key " + where + "." + key);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config: bad value for ") + key);
    }
  }
}

json frontend_json(const audio::FrontendConfig& c) {
  return json{{"n_mels", c.n_mels},       {"win_ms", c.win_ms},
              {"hop_ms", c.hop_ms},       {"clip_seconds", c.clip_seconds},
              {"fmin_hz", c.fmin_hz},     {"fmax_hz", c.fmax_hz},
              {"log_floor", c.log_floor}, {"sample_rate", c.sample_rate}};
}

json grid_json(const grid::GridConfig& c) {
  return json{{"segment_frames", c.segment_frames}, {"frame_width", c.frame_width}};
}

json mask_json(const masking::MaskConfig& c) {
  return json{{"p", c.p}, {"p_prime", c.p_prime}, {"patch_ratio", c.patch_ratio}};
}

json quant_json(const QuantConfig& c) {
  return json{{"k_s", c.k_s},
              {"k_t", c.k_t},
              {"max_iters", c.max_iters},
              {"tol", c.tol},
              {"spectral_projection", c.spectral_projection},
              {"spectral_proj_dim", c.spectral_proj_dim},
              {"temporal_source", c.temporal_source}};
}

json model_json(const ModelArch& c) {
  return json{{"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"dropout_rate", c.dropout_rate}};
}

json plan_json(const train::TrainPlan& c) {
  return json{{"phase_a_steps", c.phase_a_steps},
              {"joint_steps", c.joint_steps},
              {"batch_size", c.batch_size},
              {"lambda", c.lambda}};
}

json schedule_json(const train::LrScheduleConfig& c) {
  return json{{"lr_start", c.lr_start},
              {"lr_peak", c.lr_peak},
              {"lr_end", c.lr_end},
              {"warmup_frac", c.warmup_frac}};
}

json optimizer_json(const train::OptimizerConfig& c) {
  return json{{"beta1", c.beta1},         {"beta2", c.beta2},
              {"eps", c.eps},             {"weight_decay", c.weight_decay},
              {"clip_norm", c.clip_norm}, {"clip_enabled", c.clip_enabled}};
}

json probe_json(const probe::ProbeConfig& c) {
  return json{{"n_classes", c.n_classes},
              {"head", c.head == probe::ProbeConfig::Head::kLinear ? "linear" : "mlp-1-hidden"},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_end", c.lr_end},
              {"folds", c.folds},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay}};
}

void apply_overrides(RunConfig& cfg, const json& j) {
  check_keys(j, "root",
             {"profile", "seed", "frontend", "grid", "mask", "quantizer", "model", "plan",
              "schedule", "optimizer", "probe"});
  get_if(j, "seed", cfg.seed);
  if (j.contains("frontend")) {
    const json& f = j["frontend"];
    check_keys(f, "frontend",
               {"n_mels", "win_ms", "hop_ms", "clip_seconds", "fmin_hz", "fmax_hz", "log_floor",
                "sample_rate"});
    get_if(f, "n_mels", cfg.frontend.n_mels);
    get_if(f, "win_ms", cfg.frontend.win_ms);
    get_if(f, "hop_ms", cfg.frontend.hop_ms);
    get_if(f, "clip_seconds", cfg.frontend.clip_seconds);
    get_if(f, "fmin_hz", cfg.frontend.fmin_hz);
    get_if(f, "fmax_hz", cfg.frontend.fmax_hz);
    get_if(f, "log_floor", cfg.frontend.log_floor);
    get_if(f, "sample_rate", cfg.frontend.sample_rate);
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    check_keys(g, "grid", {"segment_frames", "frame_width"});
    get_if(g, "segment_frames", cfg.grid.segment_frames);
    get_if(g, "frame_width", cfg.grid.frame_width);
  }
  if (j.contains("mask")) {
    const json& m = j["mask"];
    check_keys(m, "mask", {"p", "p_prime", "patch_ratio"});
    get_if(m, "p", cfg.mask.p);
    get_if(m, "p_prime", cfg.mask.p_prime);
    get_if(m, "patch_ratio", cfg.mask.patch_ratio);
  }
  if (j.contains("quantizer")) {
    const json& q = j["quantizer"];
    check_keys(q, "quantizer",
               {"k_s", "k_t", "max_iters", "tol", "spectral_projection", "spectral_proj_dim",
                "temporal_source"});
    get_if(q, "k_s", cfg.quantizer.k_s);
    get_if(q, "k_t", cfg.quantizer.k_t);
    get_if(q, "max_iters", cfg.quantizer.max_iters);
    get_if(q, "tol", cfg.quantizer.tol);
    get_if(q, "spectral_projection", cfg.quantizer.spectral_projection);
    get_if(q, "spectral_proj_dim", cfg.quantizer.spectral_proj_dim);
    get_if(q, "temporal_source", cfg.quantizer.temporal_source);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"d_model", "n_layers", "n_heads", "mlp_ratio", "dropout_rate"});
    get_if(m, "d_model", cfg.model.d_model);
    get_if(m, "n_layers", cfg.model.n_layers);
    get_if(m, "n_heads", cfg.model.n_heads);
    get_if(m, "mlp_ratio", cfg.model.mlp_ratio);
    get_if(m, "dropout_rate", cfg.model.dropout_rate);
  }
  if (j.contains("plan")) {
    const json& p = j["plan"];
    check_keys(p, "plan", {"phase_a_steps", "joint_steps", "batch_size", "lambda"});
    get_if(p, "phase_a_steps", cfg.plan.phase_a_steps);
    get_if(p, "joint_steps", cfg.plan.joint_steps);
    get_if(p, "batch_size", cfg.plan.batch_size);
    get_if(p, "lambda", cfg.plan.lambda);
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    check_keys(s, "schedule", {"lr_start", "lr_peak", "lr_end", "warmup_frac"});
    get_if(s, "lr_start", cfg.schedule.lr_start);
    get_if(s, "lr_peak", cfg.schedule.lr_peak);
    get_if(s, "lr_end", cfg.schedule.lr_end);
    get_if(s, "warmup_frac", cfg.schedule.warmup_frac);
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    check_keys(o, "optimizer",
               {"beta1", "beta2", "eps", "weight_decay", "clip_norm", "clip_enabled"});
    get_if(o, "beta1", cfg.optimizer.beta1);
    get_if(o, "beta2", cfg.optimizer.beta2);
    get_if(o, "eps", cfg.optimizer.eps);
    get_if(o, "weight_decay", cfg.optimizer.weight_decay);
    get_if(o, "clip_norm", cfg.optimizer.clip_norm);
    get_if(o, "clip_enabled", cfg.optimizer.clip_enabled);
  }
  if (j.contains("probe")) {
    const json& p = j["probe"];
    check_keys(p, "probe",
               {"n_classes", "head", "epochs", "lr", "lr_end", "folds", "batch_size",
                "weight_decay"});
    get_if(p, "n_classes", cfg.probe.n_classes);
    if (p.contains("head")) {
      const std::string head = p["head"].get<std::string>();
      if (head == "linear")
        cfg.probe.head = probe::ProbeConfig::Head::kLinear;
      else if (head == "mlp-1-hidden")
        cfg.probe.head = probe::ProbeConfig::Head::kMlp;
      else
        throw ConfigError("config: unknown probe head " + head);
    }
    get_if(p, "epochs", cfg.probe.epochs);
    get_if(p, "lr", cfg.probe.lr);
    get_if(p, "lr_end", cfg.probe.lr_end);
    get_if(p, "folds", cfg.probe.folds);
    get_if(p, "batch_size", cfg.probe.batch_size);
    get_if(p, "weight_decay", cfg.probe.weight_decay);
  }
}

}  // namespace

RunConfig profile_defaults(const std::string& profile) {
  RunConfig cfg;  // defaults are the published hyperparameters
  cfg.profile = profile;
  if (profile == "paper-scale") {
    cfg.probe.epochs = 300;
    return cfg;
  }
  if (profile == "desk-scale") {
    cfg.model.d_model = 64;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 4;
    cfg.plan.phase_a_steps = 200;
    cfg.plan.joint_steps = 300;
    cfg.plan.batch_size = 4;
    cfg.schedule.lr_peak = 2e-3;
    cfg.probe.epochs = 50;
    return cfg;
  }
  throw ConfigError("config: unknown profile " + profile);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  std::string profile = "desk-scale";
  if (j.contains("profile")) profile = j["profile"].get<std::string>();
  RunConfig cfg = profile_defaults(profile);
  apply_overrides(cfg, j);
  validate(cfg);
  return cfg;
}

void save_run_config(const RunConfig& cfg, const fs::path& path) {
  json j{{"profile", cfg.profile},
         {"seed", cfg.seed},
         {"frontend", frontend_json(cfg.frontend)},
         {"grid", grid_json(cfg.grid)},
         {"mask", mask_json(cfg.mask)},
         {"quantizer", quant_json(cfg.quantizer)},
         {"model", model_json(cfg.model)},
         {"plan", plan_json(cfg.plan)},
         {"schedule", schedule_json(cfg.schedule)},
         {"optimizer", optimizer_json(cfg.optimizer)},
         {"probe", probe_json(cfg.probe)}};
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

grid::GridConfig derived_grid_config(const RunConfig& cfg) {
  grid::GridConfig g = cfg.grid;
  g.n_mels = cfg.frontend.n_mels;
  return g;
}

model::ModelConfig derived_model_config(const RunConfig& cfg) {
  const grid::GridConfig g = derived_grid_config(cfg);
  model::ModelConfig mc;
  mc.d_model = cfg.model.d_model;
  mc.n_layers = cfg.model.n_layers;
  mc.n_heads = cfg.model.n_heads;
  mc.mlp_ratio = cfg.model.mlp_ratio;
  mc.dropout_rate = cfg.model.dropout_rate;
  mc.k_s = cfg.quantizer.k_s;
  mc.k_t = cfg.quantizer.k_t;
  mc.r_s = g.patches_per_segment();
  mc.r_t = g.frames_per_segment();
  mc.n_max = cfg.frontend.n_frames() / g.segment_frames;
  mc.patch_dim = g.patch_dim();
  return mc;
}

train::TrainerConfig derived_trainer_config(const RunConfig& cfg) {
  train::TrainerConfig tc;
  tc.plan = cfg.plan;
  tc.plan.seed = cfg.seed;
  tc.lr = cfg.schedule;
  tc.opt = cfg.optimizer;
  tc.mask = cfg.mask;
  return tc;
}

void validate(const RunConfig& cfg) {
  cfg.frontend.validate();
  const grid::GridConfig g = derived_grid_config(cfg);
  g.validate_for(cfg.frontend.n_frames());
  cfg.mask.validate();
  cfg.quantizer.validate();
  derived_model_config(cfg).validate();
  cfg.plan.validate();
  train::LrScheduleConfig sched = cfg.schedule;
  sched.total_steps = std::max<long long>(cfg.plan.total_steps(), 1);
  sched.validate();
  cfg.optimizer.validate();
  cfg.probe.validate();
}

uint64_t feature_hash(const RunConfig& cfg) {
  const std::string canon = json{{"frontend", frontend_json(cfg.frontend)},
                                 {"grid", grid_json(derived_grid_config(cfg))},
                                 {"quantizer", quant_json(cfg.quantizer)}}
                                .dump();
  return fnv1a64(canon.data(), canon.size());
}

uint64_t model_hash(const RunConfig& cfg) {
  const model::ModelConfig mc = derived_model_config(cfg);
  const std::string canon = json{{"d_model", mc.d_model},
                                 {"n_layers", mc.n_layers},
                                 {"n_heads", mc.n_heads},
                                 {"mlp_ratio", mc.mlp_ratio},
                                 {"dropout_rate", mc.dropout_rate},
                                 {"k_s", mc.k_s},
                                 {"k_t", mc.k_t},
                                 {"r_s", mc.r_s},
                                 {"r_t", mc.r_t},
                                 {"n_max", mc.n_max},
                                 {"patch_dim", mc.patch_dim}}
                                .dump();
  return fnv1a64(canon.data(), canon.size());
}

uint64_t trainer_hash(const RunConfig& cfg) {
  const std::string canon = json{{"plan", plan_json(cfg.plan)},
                                 {"schedule", schedule_json(cfg.schedule)},
                                 {"optimizer", optimizer_json(cfg.optimizer)},
                                 {"mask", mask_json(cfg.mask)}}
                                .dump();
  return fnv1a64(canon.data(), canon.size());
}

train::ArtifactHashes artifact_hashes(const RunConfig& cfg) {
  return {feature_hash(cfg), model_hash(cfg), trainer_hash(cfg)};
}

}  // namespace maskspec::config
