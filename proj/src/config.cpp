#include "udaforge/config.hpp"

#include "binio.hpp"
#include "json_util.hpp"

namespace udaforge {

using nlohmann::json;

// shared with toyscenes.cpp
json scene_spec_to_json_obj(const SceneSpec& s);
SceneSpec scene_spec_from_json_obj(const json& j, const char* ctx);

namespace {

json train_to_json(const TrainConfig& t) {
  return json{{"total_steps", t.total_steps},
              {"warmup_steps", t.warmup_steps},
              {"batch_size", t.batch_size},
              {"lr_start", t.lr_start},
              {"lr_end", t.lr_end},
              {"lr_power", t.lr_power},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"loss", json{{"w_s", t.loss.w_s}, {"w_t", t.loss.w_t}, {"w_prime", t.loss.w_prime}}},
              {"mask", json{{"t_u", t.mask.t_u},
                            {"t_r", t.mask.t_r},
                            {"connectivity", t.mask.connectivity},
                            {"max_growth_rounds", t.mask.max_growth_rounds}}},
              {"enable_adv", t.enable_adv},
              {"enable_self_teach", t.enable_self_teach},
              {"enable_region_growing", t.enable_region_growing},
              {"enable_disc_weighting", t.enable_disc_weighting},
              {"enable_class_weighting", t.enable_class_weighting},
              {"seed", t.seed},
              {"checkpoint_every", t.checkpoint_every}};
}

TrainConfig train_from_json(const json& j, const char* ctx) {
  jsonu::check_keys(j, ctx,
                    {"total_steps", "warmup_steps", "batch_size", "lr_start", "lr_end", "lr_power",
                     "momentum", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "loss",
                     "mask", "enable_adv", "enable_self_teach", "enable_region_growing",
                     "enable_disc_weighting", "enable_class_weighting", "seed",
                     "checkpoint_every"});
  TrainConfig t;
  t.total_steps = jsonu::get_int(j, ctx, "total_steps", t.total_steps);
  t.warmup_steps = j.contains("warmup_steps")
                       ? jsonu::get_int(j, ctx, "warmup_steps", t.warmup_steps)
                       : t.total_steps / 4;
  t.batch_size = jsonu::get_int(j, ctx, "batch_size", t.batch_size);
  t.lr_start = jsonu::get_num(j, ctx, "lr_start", t.lr_start);
  t.lr_end = jsonu::get_num(j, ctx, "lr_end", t.lr_end);
  t.lr_power = jsonu::get_num(j, ctx, "lr_power", t.lr_power);
  t.momentum = jsonu::get_num(j, ctx, "momentum", t.momentum);
  t.weight_decay = jsonu::get_num(j, ctx, "weight_decay", t.weight_decay);
  t.adam_beta1 = jsonu::get_num(j, ctx, "adam_beta1", t.adam_beta1);
  t.adam_beta2 = jsonu::get_num(j, ctx, "adam_beta2", t.adam_beta2);
  t.adam_eps = jsonu::get_num(j, ctx, "adam_eps", t.adam_eps);
  if (j.contains("loss")) {
    jsonu::check_keys(j["loss"], "train.loss", {"w_s", "w_t", "w_prime"});
    t.loss.w_s = jsonu::get_num(j["loss"], "train.loss", "w_s", t.loss.w_s);
    t.loss.w_t = jsonu::get_num(j["loss"], "train.loss", "w_t", t.loss.w_t);
    t.loss.w_prime = jsonu::get_num(j["loss"], "train.loss", "w_prime", t.loss.w_prime);
  }
  if (j.contains("mask")) {
    jsonu::check_keys(j["mask"], "train.mask", {"t_u", "t_r", "connectivity", "max_growth_rounds"});
    t.mask.t_u = jsonu::get_num(j["mask"], "train.mask", "t_u", t.mask.t_u);
    t.mask.t_r = jsonu::get_num(j["mask"], "train.mask", "t_r", t.mask.t_r);
    t.mask.connectivity = jsonu::get_int(j["mask"], "train.mask", "connectivity",
                                         t.mask.connectivity);
    t.mask.max_growth_rounds = jsonu::get_int(j["mask"], "train.mask", "max_growth_rounds",
                                              t.mask.max_growth_rounds);
  }
  t.enable_adv = jsonu::get_bool(j, ctx, "enable_adv", t.enable_adv);
  t.enable_self_teach = jsonu::get_bool(j, ctx, "enable_self_teach", t.enable_self_teach);
  t.enable_region_growing =
      jsonu::get_bool(j, ctx, "enable_region_growing", t.enable_region_growing);
  t.enable_disc_weighting =
      jsonu::get_bool(j, ctx, "enable_disc_weighting", t.enable_disc_weighting);
  t.enable_class_weighting =
      jsonu::get_bool(j, ctx, "enable_class_weighting", t.enable_class_weighting);
  t.seed = jsonu::get_u64(j, ctx, "seed", t.seed);
  t.checkpoint_every = jsonu::get_int(j, ctx, "checkpoint_every", t.checkpoint_every);
  t.validate();
  return t;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j{{"scene", scene_spec_to_json_obj(cfg.scene)}, {"train", train_to_json(cfg.train)}};
  if (!cfg.source.empty()) j["source"] = cfg.source;
  if (!cfg.target.empty()) j["target"] = cfg.target;
  if (!cfg.out.empty()) j["out"] = cfg.out;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j = jsonu::parse(text, "run config");
  jsonu::check_keys(j, "run config", {"scene", "train", "source", "target", "out"});
  RunConfig cfg;
  if (j.contains("scene")) cfg.scene = scene_spec_from_json_obj(j["scene"], "scene");
  if (j.contains("train")) cfg.train = train_from_json(j["train"], "train");
  cfg.source = jsonu::get_str(j, "run config", "source", "");
  cfg.target = jsonu::get_str(j, "run config", "target", "");
  cfg.out = jsonu::get_str(j, "run config", "out", "");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(binio::slurp(path, "run config"));
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  binio::spew(path, run_config_to_json(cfg), "run config");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"supervised",      "adversarial-only",
                                                 "no-region-growing", "no-disc-weighting",
                                                 "no-class-weighting", "full"};
  return names;
}

void apply_preset(TrainConfig& cfg, const std::string& name) {
  cfg.enable_adv = true;
  cfg.enable_self_teach = true;
  cfg.enable_region_growing = true;
  cfg.enable_disc_weighting = true;
  cfg.enable_class_weighting = true;
  if (name == "full") return;
  if (name == "supervised") {
    cfg.enable_adv = false;
    cfg.enable_self_teach = false;
    cfg.enable_region_growing = false;
    cfg.enable_disc_weighting = false;
    cfg.enable_class_weighting = false;
  } else if (name == "adversarial-only") {
    cfg.enable_self_teach = false;
    cfg.enable_region_growing = false;
    cfg.enable_disc_weighting = false;
    cfg.enable_class_weighting = false;
  } else if (name == "no-region-growing") {
    cfg.enable_region_growing = false;
  } else if (name == "no-disc-weighting") {
    cfg.enable_disc_weighting = false;
  } else if (name == "no-class-weighting") {
    cfg.enable_class_weighting = false;
  } else {
    std::string all;
    for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
    fail("usage", "unknown preset \"" + name + "\" (options: " + all + ")");
  }
}

}  // namespace udaforge
