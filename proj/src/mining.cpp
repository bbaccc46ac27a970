#include "mito/mining.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace mito {

CrossRefResult cross_reference(const std::vector<ScoredWindow>& positive_windows,
                               const std::vector<Annotation>& annotations) {
  std::vector<const Annotation*> mitoses;
  for (const auto& a : annotations)
    if (a.category == AnnotationCategory::mitosis) mitoses.push_back(&a);

  CrossRefResult res;
  std::vector<bool> covered(mitoses.size(), false);
  for (const auto& sw : positive_windows) {
    bool has_mitosis = false;
    for (std::size_t m = 0; m < mitoses.size(); ++m) {
      if (sw.box.contains(mitoses[m]->x, mitoses[m]->y)) {
        has_mitosis = true;
        covered[m] = true;
      }
    }
    res.outcomes.push_back(
        {sw.box, sw.probability, has_mitosis ? Outcome::true_positive : Outcome::false_positive});
  }
  for (std::size_t m = 0; m < mitoses.size(); ++m)
    if (!covered[m]) res.missed.push_back(*mitoses[m]);
  return res;
}

std::vector<Patch> mine_patches(const CrossRefResult& xref,
                                const std::vector<ScoredWindow>& all_scored,
                                const std::vector<Annotation>& annotations, const RoiImage& image,
                                const MiningConfig& cfg, int round, int patch_size) {
  std::vector<Patch> mined;

  auto make_patch = [&](int cx, int cy, PatchLabel label, Provenance prov) {
    Patch p;
    p.pixels = crop_patch(image, cx, cy, patch_size);
    p.label = label;
    p.source_image = image.id;
    p.center_x = cx;
    p.center_y = cy;
    p.provenance = prov;
    p.round_added = round;
    return p;
  };

  // False positives: highest probability first, up to the cap.
  std::vector<const WindowOutcome*> fps;
  for (const auto& o : xref.outcomes)
    if (o.outcome == Outcome::false_positive) fps.push_back(&o);
  std::stable_sort(fps.begin(), fps.end(), [](const WindowOutcome* a, const WindowOutcome* b) {
    return a->probability > b->probability;
  });
  for (std::size_t i = 0; i < fps.size() && i < static_cast<std::size_t>(cfg.cap_false_positive);
       ++i) {
    const WindowBox& b = fps[i]->window;
    mined.push_back(make_patch(b.x + b.size / 2, b.y + b.size / 2, PatchLabel::negative,
                               Provenance::false_positive));
  }

  // Missed mitoses, hardest (lowest best covering probability) first.
  std::vector<std::pair<double, const Annotation*>> misses;
  for (const auto& m : xref.missed) {
    double best = 0.0;
    for (const auto& sw : all_scored)
      if (sw.box.contains(m.x, m.y)) best = std::max(best, sw.probability);
    misses.emplace_back(best, &m);
  }
  std::stable_sort(misses.begin(), misses.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0;
       i < misses.size() && i < static_cast<std::size_t>(cfg.cap_false_negative); ++i) {
    mined.push_back(make_patch(misses[i].second->x, misses[i].second->y, PatchLabel::positive,
                               Provenance::false_negative));
  }

  // Hard negatives: sub-threshold but confidently scored, no mitosis inside.
  std::vector<const Annotation*> mitoses;
  for (const auto& a : annotations)
    if (a.category == AnnotationCategory::mitosis) mitoses.push_back(&a);
  std::vector<const ScoredWindow*> hard;
  for (const auto& sw : all_scored) {
    if (sw.probability < cfg.hard_negative_low || sw.probability >= cfg.hard_negative_high)
      continue;
    bool has_mitosis = false;
    for (const Annotation* m : mitoses)
      if (sw.box.contains(m->x, m->y)) has_mitosis = true;
    if (!has_mitosis) hard.push_back(&sw);
  }
  std::stable_sort(hard.begin(), hard.end(), [](const ScoredWindow* a, const ScoredWindow* b) {
    return a->probability > b->probability;
  });
  for (std::size_t i = 0; i < hard.size() && i < static_cast<std::size_t>(cfg.cap_hard_negative);
       ++i) {
    const WindowBox& b = hard[i]->box;
    mined.push_back(make_patch(b.x + b.size / 2, b.y + b.size / 2, PatchLabel::negative,
                               Provenance::hard_negative));
  }
  return mined;
}

namespace {

struct DedupeIndex {
  // Centers of existing patches keyed by (image, label).
  std::map<std::pair<std::string, PatchLabel>, std::vector<std::pair<int, int>>> centers;

  explicit DedupeIndex(const PatchSet& set) {
    for (const auto& p : set.patches)
      centers[{p.source_image, p.label}].emplace_back(p.center_x, p.center_y);
  }

  bool is_duplicate(const Patch& p, double min_dist) const {
    auto it = centers.find({p.source_image, p.label});
    if (it == centers.end()) return false;
    for (const auto& [cx, cy] : it->second)
      if (std::hypot(cx - p.center_x, cy - p.center_y) < min_dist) return true;
    return false;
  }

  void add(const Patch& p) {
    centers[{p.source_image, p.label}].emplace_back(p.center_x, p.center_y);
  }
};

}  // namespace

ActiveLoopResult run_active_loop(const Dataset& ds, const DatasetSplit& split,
                                 SplitPatches& patches, const ModelFactory& factory,
                                 const ActiveLoopConfig& cfg, std::ostream* log,
                                 const RoundCallback& on_round) {
  if (patches.train.patches.empty() || patches.val.patches.empty())
    throw std::runtime_error("run_active_loop: initial patch sets must be nonempty");

  ActiveLoopResult result;
  Classifier model = factory(cfg.train.seed);
  double best_f1 = -1.0;
  double prev_f1 = -1.0;

  // Annotations are checked against the split so val mines stay in val.
  auto mitoses_of = [&](const std::string& id) {
    std::vector<Annotation> out;
    for (const auto& a : ds.annotations)
      if (a.image_id == id && a.category == AnnotationCategory::mitosis) out.push_back(a);
    return out;
  };

  for (int round = 1; round <= cfg.mining.max_rounds; ++round) {
    if (cfg.reinit_each_round && round > 1)
      model = factory(cfg.train.seed + static_cast<std::uint64_t>(round));

    TrainConfig round_train = cfg.train;
    round_train.seed = cfg.train.seed + static_cast<std::uint64_t>(round) * 1000003ull;
    train_round(patches.train, patches.val, model, round_train, cfg.augment, log);

    RoundReport report;
    report.round = round;

    long tp = 0, fp = 0, fn = 0;
    auto process_split = [&](const std::vector<std::string>& ids, PatchSet& target,
                             bool is_val) {
      DedupeIndex index(target);
      for (const auto& id : ids) {
        const RoiImage* im = ds.find_image(id);
        if (!im) throw std::runtime_error("split references unknown image '" + id + "'");
        const auto windows = tile_image(im->width(), im->height(), cfg.inference.window,
                                        cfg.inference.step);
        const auto scored = score_windows(model, im->pixels, windows, cfg.inference.batch_size);
        const auto positives = threshold_windows(scored, cfg.inference.prob_threshold);
        const auto anns = mitoses_of(id);
        const auto xref = cross_reference(positives, anns);
        auto mined = mine_patches(xref, scored, anns, *im, cfg.mining, round, cfg.patch_size);
        for (auto& p : mined) {
          if (index.is_duplicate(p, cfg.mining.dedupe_distance)) continue;
          index.add(p);
          switch (p.provenance) {
            case Provenance::false_positive: ++report.added_false_positive; break;
            case Provenance::false_negative: ++report.added_false_negative; break;
            case Provenance::hard_negative: ++report.added_hard_negative; break;
            default: break;
          }
          target.patches.push_back(std::move(p));
        }
        if (is_val) {
          // Detection-level round metric on validation images.
          const auto kept = nms(positives, cfg.inference.nms_threshold);
          std::vector<Detection> dets(kept.size());
          for (std::size_t i = 0; i < kept.size(); ++i) {
            Image crop(kept[i].box.size, kept[i].box.size);
            for (int row = 0; row < kept[i].box.size; ++row)
              std::copy_n(im->pixels.px(kept[i].box.x, kept[i].box.y + row),
                          static_cast<std::size_t>(kept[i].box.size) * 3, crop.px(0, row));
            const Cam cam = gradcampp(model, crop, kept[i].box);
            auto det = hotspot_centroid(cam, cfg.cam_threshold, kept[i].probability);
            dets[i] = det ? *det
                          : Detection{kept[i].box.x + kept[i].box.size / 2.0,
                                      kept[i].box.y + kept[i].box.size / 2.0,
                                      kept[i].probability, kept[i].box};
          }
          const auto match = match_detections(dets, anns, cfg.eval_radius);
          tp += match.tp;
          fp += match.fp;
          fn += match.fn;
        }
      }
    };

    process_split(split.train_images, patches.train, false);
    process_split(split.val_images, patches.val, true);

    report.train_size = patches.train.size();
    report.val_size = patches.val.size();
    report.val_detection_f1 = prf1(tp, fp, fn).f1;
    result.reports.push_back(report);

    if (log) {
      nlohmann::json line{{"round", report.round},
                          {"added_false_positive", report.added_false_positive},
                          {"added_false_negative", report.added_false_negative},
                          {"added_hard_negative", report.added_hard_negative},
                          {"train_size", report.train_size},
                          {"val_size", report.val_size},
                          {"val_detection_f1", report.val_detection_f1}};
      (*log) << line.dump() << "\n";
    }

    if (report.val_detection_f1 > best_f1) {
      best_f1 = report.val_detection_f1;
      result.best_params = model.get_params();
      result.best_round = round;
      result.best_checkpoint_id = model.checkpoint_id();
    }

    if (on_round) on_round(report, model);

    // Strict improvement required to continue.
    if (round > 1 && report.val_detection_f1 <= prev_f1) break;
    prev_f1 = report.val_detection_f1;
  }
  return result;
}

}  // namespace mito
