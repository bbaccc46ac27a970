#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mito/cam.hpp"
#include "mito/config.hpp"
#include "mito/dataset.hpp"
#include "mito/eval.hpp"
#include "mito/fixtures.hpp"
#include "mito/mining.hpp"
#include "mito/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string output_dir = "out";
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "pipeline config JSON");
  if (config_required) c->required();
  cmd->add_option("--output", opts.output_dir, "output directory");
  cmd->add_option("--workers", opts.workers, "thread cap (default: logical cores)");
}

mito::PipelineConfig load_config(const CommonOpts& opts) {
  if (opts.workers > 0) omp_set_num_threads(opts.workers);
  auto cfg = mito::parse_config(opts.config_path);
  fs::create_directories(opts.output_dir);
  std::ofstream(fs::path(opts.output_dir) / "effective_config.json")
      << mito::serialize_config(cfg) << "\n";
  return cfg;
}

void save_split(const mito::DatasetSplit& split, const std::string& path) {
  json j{{"train_images", split.train_images},
         {"val_images", split.val_images},
         {"seed", split.seed}};
  std::ofstream(path) << j.dump(2) << "\n";
}

mito::DatasetSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  json j;
  in >> j;
  mito::DatasetSplit split;
  split.train_images = j.at("train_images").get<std::vector<std::string>>();
  split.val_images = j.at("val_images").get<std::vector<std::string>>();
  split.seed = j.at("seed").get<std::uint64_t>();
  return split;
}

mito::DatasetSplit make_or_load_split(const mito::PipelineConfig& cfg, const mito::Dataset& ds,
                                      const std::string& output_dir) {
  const fs::path split_path = fs::path(output_dir) / "split.json";
  if (fs::exists(split_path)) return load_split(split_path.string());
  auto split = mito::split_dataset(ds.images, cfg.split.val_fraction, cfg.split.seed);
  save_split(split, split_path.string());
  return split;
}

json report_to_json(const mito::RoundReport& r) {
  return json{{"round", r.round},
              {"added_false_positive", r.added_false_positive},
              {"added_false_negative", r.added_false_negative},
              {"added_hard_negative", r.added_hard_negative},
              {"train_size", r.train_size},
              {"val_size", r.val_size},
              {"val_detection_f1", r.val_detection_f1}};
}

int cmd_extract(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto ds = mito::load_dataset(cfg.dataset.annotation_file, cfg.dataset.image_dir);
  const auto split = make_or_load_split(cfg, ds, opts.output_dir);
  const auto patches = mito::extract_initial_patches(ds, split, cfg.dataset.extract);
  mito::save_patch_set(patches.train, (fs::path(opts.output_dir) / "patches_train").string());
  mito::save_patch_set(patches.val, (fs::path(opts.output_dir) / "patches_val").string());
  std::cout << "extracted " << patches.train.size() << " train and " << patches.val.size()
            << " val patches\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto train_set =
      mito::load_patch_set((fs::path(opts.output_dir) / "patches_train").string());
  const auto val_set = mito::load_patch_set((fs::path(opts.output_dir) / "patches_val").string());
  mito::Classifier model(cfg.model);
  std::ofstream log(fs::path(opts.output_dir) / "train_log.jsonl");
  const auto result = mito::train_round(train_set, val_set, model, cfg.train, cfg.augment, &log);
  model.save_checkpoint((fs::path(opts.output_dir) / "checkpoint").string());
  std::cout << "best epoch " << result.selected_epoch << " (val F1 "
            << (result.selected_epoch > 0
                    ? result.history[static_cast<std::size_t>(result.selected_epoch - 1)].val_f1
                    : 0.0)
            << "), checkpoint " << result.best_checkpoint_id << "\n";
  return 0;
}

int cmd_mine_loop(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto ds = mito::load_dataset(cfg.dataset.annotation_file, cfg.dataset.image_dir);
  const auto split = make_or_load_split(cfg, ds, opts.output_dir);
  auto patches = mito::extract_initial_patches(ds, split, cfg.dataset.extract);

  mito::ActiveLoopConfig loop;
  loop.train = cfg.train;
  loop.augment = cfg.augment;
  loop.inference = cfg.inference;
  loop.mining = cfg.mining;
  loop.cam_threshold = cfg.cam_threshold;
  loop.eval_radius = cfg.evaluation_radius;
  loop.patch_size = cfg.dataset.extract.patch_size;
  loop.reinit_each_round = cfg.reinit_each_round;

  auto factory = [&cfg](std::uint64_t seed) {
    auto desc = cfg.model;
    desc.seed = seed ^ cfg.model.seed;
    return mito::Classifier(desc);
  };

  std::ofstream log(fs::path(opts.output_dir) / "mine_loop_log.jsonl");
  json reports = json::array();
  auto on_round = [&](const mito::RoundReport& r, const mito::Classifier& model) {
    model.save_checkpoint(
        (fs::path(opts.output_dir) / ("round_" + std::to_string(r.round))).string());
    reports.push_back(report_to_json(r));
    std::ofstream(fs::path(opts.output_dir) / "round_reports.json") << reports.dump(2) << "\n";
  };

  const auto result = mito::run_active_loop(ds, split, patches, factory, loop, &log, on_round);

  auto best = factory(cfg.train.seed);
  best.set_params(result.best_params);
  best.save_checkpoint((fs::path(opts.output_dir) / "best").string());
  std::cout << "best round " << result.best_round << " checkpoint "
            << result.best_checkpoint_id << "\n";
  return 0;
}

int cmd_infer(const CommonOpts& opts, const std::string& checkpoint,
              const std::string& only_image) {
  const auto cfg = load_config(opts);
  const auto ds = mito::load_dataset(cfg.dataset.annotation_file, cfg.dataset.image_dir);
  const auto model = mito::Classifier::load_checkpoint(
      checkpoint.empty() ? (fs::path(opts.output_dir) / "best").string() : checkpoint);
  fs::create_directories(fs::path(opts.output_dir) / "detections");
  for (const auto& im : ds.images) {
    if (!only_image.empty() && im.id != only_image) continue;
    const auto dets = mito::detect(im.pixels, model, cfg.inference, cfg.cam_threshold);
    mito::write_detections(
        im.id, dets,
        (fs::path(opts.output_dir) / "detections" / (im.id + ".json")).string());
  }
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& detections_dir) {
  const auto cfg = load_config(opts);
  const auto ds = mito::load_dataset(cfg.dataset.annotation_file, cfg.dataset.image_dir);
  const fs::path det_dir = detections_dir.empty()
                               ? fs::path(opts.output_dir) / "detections"
                               : fs::path(detections_dir);
  std::vector<mito::GroupedMatch> grouped;
  for (const auto& im : ds.images) {
    const fs::path det_file = det_dir / (im.id + ".json");
    if (!fs::exists(det_file))
      throw std::runtime_error("missing detections file: " + det_file.string());
    const auto [_, dets] = mito::read_detections(det_file.string());
    std::vector<mito::Annotation> mitoses;
    for (const auto& a : ds.annotations)
      if (a.image_id == im.id && a.category == mito::AnnotationCategory::mitosis)
        mitoses.push_back(a);
    grouped.push_back(
        {im.tumor_type, mito::match_detections(dets, mitoses, cfg.evaluation_radius)});
  }
  const auto rows = mito::per_domain_report(grouped);
  json jrows = json::array();
  for (const auto& r : rows)
    jrows.push_back({{"group", r.group},
                     {"tp", r.tp},
                     {"fp", r.fp},
                     {"fn", r.fn},
                     {"precision", r.metrics.precision},
                     {"recall", r.metrics.recall},
                     {"f1", r.metrics.f1},
                     {"n_images", r.n_images}});
  std::ofstream(fs::path(opts.output_dir) / "report.json") << jrows.dump(2) << "\n";
  const std::string table = mito::format_report_table(rows);
  std::ofstream(fs::path(opts.output_dir) / "report.txt") << table;
  std::cout << table;
  return 0;
}

int cmd_overlay(const CommonOpts& opts, const std::string& detections_dir) {
  const auto cfg = load_config(opts);
  const auto ds = mito::load_dataset(cfg.dataset.annotation_file, cfg.dataset.image_dir);
  const fs::path det_dir = detections_dir.empty()
                               ? fs::path(opts.output_dir) / "detections"
                               : fs::path(detections_dir);
  fs::create_directories(fs::path(opts.output_dir) / "overlays");
  for (const auto& im : ds.images) {
    const fs::path det_file = det_dir / (im.id + ".json");
    if (!fs::exists(det_file)) continue;
    const auto [_, dets] = mito::read_detections(det_file.string());
    std::vector<mito::Annotation> anns;
    for (const auto& a : ds.annotations)
      if (a.image_id == im.id) anns.push_back(a);
    mito::render_overlay(
        im.pixels, dets, anns, {}, 0.0,
        (fs::path(opts.output_dir) / "overlays" / (im.id + ".png")).string());
  }
  return 0;
}

int cmd_fixture(const std::string& output_dir, const mito::FixtureSpec& spec) {
  const auto fx = mito::generate_fixture(spec);
  mito::write_fixture(fx, output_dir);
  std::cout << "wrote " << fx.dataset.images.size() << " images, "
            << fx.dataset.annotations.size() << " annotations to " << output_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-CNN mitosis detection pipeline"};
  app.require_subcommand(1);

  CommonOpts extract_opts, train_opts, loop_opts, infer_opts, eval_opts, overlay_opts;
  std::string checkpoint, only_image, detections_dir, overlay_det_dir;

  add_common(app.add_subcommand("extract", "build initial patch sets"), extract_opts);
  add_common(app.add_subcommand("train", "run one training round"), train_opts);
  add_common(app.add_subcommand("mine-loop", "full active-learning loop"), loop_opts);
  auto* infer = app.add_subcommand("infer", "sliding-window detection per image");
  add_common(infer, infer_opts);
  infer->add_option("--checkpoint", checkpoint, "checkpoint path prefix");
  infer->add_option("--image", only_image, "restrict to one image id");
  auto* evaluate = app.add_subcommand("evaluate", "score detections against annotations");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--detections", detections_dir, "detections directory");
  auto* overlay = app.add_subcommand("overlay", "render detection overlays");
  add_common(overlay, overlay_opts);
  overlay->add_option("--detections", overlay_det_dir, "detections directory");

  auto* fixture = app.add_subcommand("fixture", "generate a synthetic dataset");
  std::string fixture_out = "fixture";
  mito::FixtureSpec spec;
  fixture->add_option("--output", fixture_out, "output directory");
  fixture->add_option("--images", spec.n_images, "number of images");
  fixture->add_option("--size", spec.image_size, "image side length");
  fixture->add_option("--seed", spec.seed, "rng seed");
  fixture->add_option("--noise", spec.label_noise_fraction, "label noise fraction");
  fixture->add_option("--unlabeled", spec.unlabeled_fraction, "unlabeled image fraction");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("extract")) return cmd_extract(extract_opts);
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("mine-loop")) return cmd_mine_loop(loop_opts);
    if (app.got_subcommand("infer")) return cmd_infer(infer_opts, checkpoint, only_image);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_opts, detections_dir);
    if (app.got_subcommand("overlay")) return cmd_overlay(overlay_opts, overlay_det_dir);
    if (app.got_subcommand("fixture")) return cmd_fixture(fixture_out, spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
