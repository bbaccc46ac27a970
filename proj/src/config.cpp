#include "mito/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace mito {

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw std::runtime_error("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw std::runtime_error("unknown config key: " + section + "." + key);
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_interval(const json& j, const char* key, Interval& out) {
  if (j.contains(key)) {
    const auto arr = j.at(key).get<std::vector<double>>();
    if (arr.size() != 2) throw std::runtime_error(std::string("config key ") + key + " needs [lo, hi]");
    out = {arr[0], arr[1]};
  }
}

}  // namespace

PipelineConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed config JSON: " + std::string(e.what()));
  }
  check_keys(j, {"dataset", "split", "model", "augment", "train", "inference", "mining",
                 "cam_threshold", "evaluation_radius", "reinit_each_round"},
             "(root)");

  PipelineConfig cfg;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d,
               {"annotation_file", "image_dir", "patch_size", "random_negatives_per_unlabeled",
                "min_annotation_distance", "seed"},
               "dataset");
    get(d, "annotation_file", cfg.dataset.annotation_file);
    get(d, "image_dir", cfg.dataset.image_dir);
    get(d, "patch_size", cfg.dataset.extract.patch_size);
    get(d, "random_negatives_per_unlabeled", cfg.dataset.extract.random_negatives_per_unlabeled);
    get(d, "min_annotation_distance", cfg.dataset.extract.min_annotation_distance);
    get(d, "seed", cfg.dataset.extract.seed);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    check_keys(s, {"val_fraction", "seed"}, "split");
    get(s, "val_fraction", cfg.split.val_fraction);
    get(s, "seed", cfg.split.seed);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"backbone", "input_size", "num_ranks", "channels", "norm_mean", "norm_std",
                   "target_layer", "seed"},
               "model");
    get(m, "backbone", cfg.model.backbone);
    get(m, "input_size", cfg.model.input_size);
    get(m, "num_ranks", cfg.model.num_ranks);
    get(m, "channels", cfg.model.channels);
    get(m, "norm_mean", cfg.model.norm_mean);
    get(m, "norm_std", cfg.model.norm_std);
    get(m, "target_layer", cfg.model.target_layer);
    get(m, "seed", cfg.model.seed);
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    check_keys(a,
               {"enable_rotation", "rotation_deg", "enable_flip", "enable_elastic",
                "elastic_alpha", "elastic_sigma", "enable_grid_distortion", "grid_steps",
                "grid_limit", "enable_affine", "affine_scale", "affine_shear_deg",
                "affine_translate_frac", "enable_color_jitter", "brightness", "contrast",
                "saturation", "hue", "enable_blur", "blur_sigma", "enable_noise", "noise_sigma",
                "enable_stain", "stain_scale_range", "stain_shift_range", "mixup_alpha"},
               "augment");
    get(a, "enable_rotation", cfg.augment.enable_rotation);
    get_interval(a, "rotation_deg", cfg.augment.rotation_deg);
    get(a, "enable_flip", cfg.augment.enable_flip);
    get(a, "enable_elastic", cfg.augment.enable_elastic);
    get_interval(a, "elastic_alpha", cfg.augment.elastic_alpha);
    get_interval(a, "elastic_sigma", cfg.augment.elastic_sigma);
    get(a, "enable_grid_distortion", cfg.augment.enable_grid_distortion);
    get(a, "grid_steps", cfg.augment.grid_steps);
    get(a, "grid_limit", cfg.augment.grid_limit);
    get(a, "enable_affine", cfg.augment.enable_affine);
    get_interval(a, "affine_scale", cfg.augment.affine_scale);
    get(a, "affine_shear_deg", cfg.augment.affine_shear_deg);
    get(a, "affine_translate_frac", cfg.augment.affine_translate_frac);
    get(a, "enable_color_jitter", cfg.augment.enable_color_jitter);
    get(a, "brightness", cfg.augment.brightness);
    get(a, "contrast", cfg.augment.contrast);
    get(a, "saturation", cfg.augment.saturation);
    get(a, "hue", cfg.augment.hue);
    get(a, "enable_blur", cfg.augment.enable_blur);
    get_interval(a, "blur_sigma", cfg.augment.blur_sigma);
    get(a, "enable_noise", cfg.augment.enable_noise);
    get_interval(a, "noise_sigma", cfg.augment.noise_sigma);
    get(a, "enable_stain", cfg.augment.enable_stain);
    get_interval(a, "stain_scale_range", cfg.augment.stain_scale_range);
    get_interval(a, "stain_shift_range", cfg.augment.stain_shift_range);
    get(a, "mixup_alpha", cfg.augment.mixup_alpha);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"epochs_per_round", "batch_size", "momentum", "lr_max", "lr_min",
                "restart_period", "restart_multiplier", "ousm_drop_fraction", "weight_decay",
                "seed"},
               "train");
    get(t, "epochs_per_round", cfg.train.epochs_per_round);
    get(t, "batch_size", cfg.train.batch_size);
    get(t, "momentum", cfg.train.momentum);
    get(t, "lr_max", cfg.train.lr_max);
    get(t, "lr_min", cfg.train.lr_min);
    get(t, "restart_period", cfg.train.restart_period);
    get(t, "restart_multiplier", cfg.train.restart_multiplier);
    get(t, "ousm_drop_fraction", cfg.train.ousm_drop_fraction);
    get(t, "weight_decay", cfg.train.weight_decay);
    get(t, "seed", cfg.train.seed);
  }
  if (j.contains("inference")) {
    const json& i = j["inference"];
    check_keys(i, {"window", "step", "prob_threshold", "nms_threshold", "batch_size"},
               "inference");
    get(i, "window", cfg.inference.window);
    get(i, "step", cfg.inference.step);
    get(i, "prob_threshold", cfg.inference.prob_threshold);
    get(i, "nms_threshold", cfg.inference.nms_threshold);
    get(i, "batch_size", cfg.inference.batch_size);
  }
  if (j.contains("mining")) {
    const json& m = j["mining"];
    check_keys(m,
               {"hard_negative_low", "hard_negative_high", "cap_false_positive",
                "cap_false_negative", "cap_hard_negative", "max_rounds", "dedupe_distance"},
               "mining");
    get(m, "hard_negative_low", cfg.mining.hard_negative_low);
    get(m, "hard_negative_high", cfg.mining.hard_negative_high);
    get(m, "cap_false_positive", cfg.mining.cap_false_positive);
    get(m, "cap_false_negative", cfg.mining.cap_false_negative);
    get(m, "cap_hard_negative", cfg.mining.cap_hard_negative);
    get(m, "max_rounds", cfg.mining.max_rounds);
    get(m, "dedupe_distance", cfg.mining.dedupe_distance);
  }
  get(j, "cam_threshold", cfg.cam_threshold);
  get(j, "evaluation_radius", cfg.evaluation_radius);
  get(j, "reinit_each_round", cfg.reinit_each_round);

  validate_config(cfg);
  return cfg;
}

PipelineConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

void validate_config(const PipelineConfig& cfg) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::runtime_error("invalid config value: " + key + " (" + why + ")");
  };
  if (cfg.split.val_fraction <= 0.0 || cfg.split.val_fraction >= 1.0)
    fail("split.val_fraction", "must lie in (0,1)");
  if (cfg.dataset.extract.patch_size < 8) fail("dataset.patch_size", "too small");
  if (cfg.dataset.extract.random_negatives_per_unlabeled < 0)
    fail("dataset.random_negatives_per_unlabeled", "must be >= 0");
  if (cfg.model.input_size < 32 || cfg.model.input_size % 8 != 0)
    fail("model.input_size", "must be >= 32 and divisible by 8");
  if (cfg.model.num_ranks < 2) fail("model.num_ranks", "must be >= 2");
  if (cfg.augment.mixup_alpha <= 0.0) fail("augment.mixup_alpha", "must be positive");
  if (cfg.augment.rotation_deg.lo > cfg.augment.rotation_deg.hi)
    fail("augment.rotation_deg", "empty range");
  if (cfg.augment.stain_scale_range.lo > cfg.augment.stain_scale_range.hi)
    fail("augment.stain_scale_range", "empty range");
  if (cfg.train.epochs_per_round < 1) fail("train.epochs_per_round", "must be >= 1");
  if (cfg.train.batch_size < 2) fail("train.batch_size", "must be >= 2");
  if (cfg.train.ousm_drop_fraction < 0.0 || cfg.train.ousm_drop_fraction >= 0.5)
    fail("train.ousm_drop_fraction", "must lie in [0, 0.5)");
  if (cfg.train.lr_max <= cfg.train.lr_min || cfg.train.lr_min < 0.0)
    fail("train.lr_max", "need lr_max > lr_min >= 0");
  if (cfg.train.restart_period < 1) fail("train.restart_period", "must be >= 1");
  if (cfg.inference.step <= 0 || cfg.inference.step > cfg.inference.window)
    fail("inference.step", "must lie in (0, window]");
  if (cfg.inference.prob_threshold <= 0.0 || cfg.inference.prob_threshold >= 1.0)
    fail("inference.prob_threshold", "must lie in (0,1)");
  if (cfg.inference.nms_threshold <= 0.0 || cfg.inference.nms_threshold >= 1.0)
    fail("inference.nms_threshold", "must lie in (0,1)");
  if (cfg.inference.batch_size < 1) fail("inference.batch_size", "must be >= 1");
  if (cfg.mining.hard_negative_low < 0.0 ||
      cfg.mining.hard_negative_high > 1.0 ||
      cfg.mining.hard_negative_low >= cfg.mining.hard_negative_high)
    fail("mining.hard_negative_low", "band must be a nonempty subinterval of [0,1]");
  if (cfg.mining.cap_false_positive < 0 || cfg.mining.cap_false_negative < 0 ||
      cfg.mining.cap_hard_negative < 0)
    fail("mining.cap_false_positive", "caps must be >= 0");
  if (cfg.mining.max_rounds < 1) fail("mining.max_rounds", "must be >= 1");
  if (cfg.cam_threshold <= 0.0 || cfg.cam_threshold > 1.0)
    fail("cam_threshold", "must lie in (0,1]");
  if (cfg.evaluation_radius <= 0.0) fail("evaluation_radius", "must be positive");
}

std::string serialize_config(const PipelineConfig& cfg) {
  json j;
  j["dataset"] = {{"annotation_file", cfg.dataset.annotation_file},
                  {"image_dir", cfg.dataset.image_dir},
                  {"patch_size", cfg.dataset.extract.patch_size},
                  {"random_negatives_per_unlabeled",
                   cfg.dataset.extract.random_negatives_per_unlabeled},
                  {"min_annotation_distance", cfg.dataset.extract.min_annotation_distance},
                  {"seed", cfg.dataset.extract.seed}};
  j["split"] = {{"val_fraction", cfg.split.val_fraction}, {"seed", cfg.split.seed}};
  j["model"] = {{"backbone", cfg.model.backbone},
                {"input_size", cfg.model.input_size},
                {"num_ranks", cfg.model.num_ranks},
                {"channels", cfg.model.channels},
                {"norm_mean", cfg.model.norm_mean},
                {"norm_std", cfg.model.norm_std},
                {"target_layer", cfg.model.target_layer},
                {"seed", cfg.model.seed}};
  const AugmentConfig& a = cfg.augment;
  j["augment"] = {{"enable_rotation", a.enable_rotation},
                  {"rotation_deg", {a.rotation_deg.lo, a.rotation_deg.hi}},
                  {"enable_flip", a.enable_flip},
                  {"enable_elastic", a.enable_elastic},
                  {"elastic_alpha", {a.elastic_alpha.lo, a.elastic_alpha.hi}},
                  {"elastic_sigma", {a.elastic_sigma.lo, a.elastic_sigma.hi}},
                  {"enable_grid_distortion", a.enable_grid_distortion},
                  {"grid_steps", a.grid_steps},
                  {"grid_limit", a.grid_limit},
                  {"enable_affine", a.enable_affine},
                  {"affine_scale", {a.affine_scale.lo, a.affine_scale.hi}},
                  {"affine_shear_deg", a.affine_shear_deg},
                  {"affine_translate_frac", a.affine_translate_frac},
                  {"enable_color_jitter", a.enable_color_jitter},
                  {"brightness", a.brightness},
                  {"contrast", a.contrast},
                  {"saturation", a.saturation},
                  {"hue", a.hue},
                  {"enable_blur", a.enable_blur},
                  {"blur_sigma", {a.blur_sigma.lo, a.blur_sigma.hi}},
                  {"enable_noise", a.enable_noise},
                  {"noise_sigma", {a.noise_sigma.lo, a.noise_sigma.hi}},
                  {"enable_stain", a.enable_stain},
                  {"stain_scale_range", {a.stain_scale_range.lo, a.stain_scale_range.hi}},
                  {"stain_shift_range", {a.stain_shift_range.lo, a.stain_shift_range.hi}},
                  {"mixup_alpha", a.mixup_alpha}};
  j["train"] = {{"epochs_per_round", cfg.train.epochs_per_round},
                {"batch_size", cfg.train.batch_size},
                {"momentum", cfg.train.momentum},
                {"lr_max", cfg.train.lr_max},
                {"lr_min", cfg.train.lr_min},
                {"restart_period", cfg.train.restart_period},
                {"restart_multiplier", cfg.train.restart_multiplier},
                {"ousm_drop_fraction", cfg.train.ousm_drop_fraction},
                {"weight_decay", cfg.train.weight_decay},
                {"seed", cfg.train.seed}};
  j["inference"] = {{"window", cfg.inference.window},
                    {"step", cfg.inference.step},
                    {"prob_threshold", cfg.inference.prob_threshold},
                    {"nms_threshold", cfg.inference.nms_threshold},
                    {"batch_size", cfg.inference.batch_size}};
  j["mining"] = {{"hard_negative_low", cfg.mining.hard_negative_low},
                 {"hard_negative_high", cfg.mining.hard_negative_high},
                 {"cap_false_positive", cfg.mining.cap_false_positive},
                 {"cap_false_negative", cfg.mining.cap_false_negative},
                 {"cap_hard_negative", cfg.mining.cap_hard_negative},
                 {"max_rounds", cfg.mining.max_rounds},
                 {"dedupe_distance", cfg.mining.dedupe_distance}};
  j["cam_threshold"] = cfg.cam_threshold;
  j["evaluation_radius"] = cfg.evaluation_radius;
  j["reinit_each_round"] = cfg.reinit_each_round;
  return j.dump(2);
}

}  // namespace mito
