#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mito/fixtures.hpp"
#include "mito/mining.hpp"

using namespace mito;

namespace {

Annotation mito_at(int x, int y, AnnotationCategory cat = AnnotationCategory::mitosis) {
  Annotation a;
  a.image_id = "im";
  a.x = x;
  a.y = y;
  a.category = cat;
  return a;
}

RoiImage flat_image(int size) {
  RoiImage im;
  im.id = "im";
  im.pixels = Image::solid(size, size, 210, 170, 190);
  return im;
}

}  // namespace

TEST_CASE("cross_reference assigns window outcomes and missed mitoses") {
  const std::vector<ScoredWindow> positives = {{{0, 0, 240}, 0.9}, {{300, 300, 240}, 0.88}};
  const std::vector<Annotation> anns = {mito_at(120, 120), mito_at(500, 500),
                                        mito_at(10, 10, AnnotationCategory::imposter)};
  const auto xref = cross_reference(positives, anns);
  REQUIRE(xref.outcomes.size() == 2);
  CHECK(xref.outcomes[0].outcome == Outcome::true_positive);  // contains (120,120)
  CHECK(xref.outcomes[1].outcome == Outcome::true_positive);  // contains (500,500)
  CHECK(xref.missed.empty());

  SUBCASE("positive window containing no mitosis is a false positive") {
    const auto r = cross_reference({{{600, 0, 240}, 0.85}}, anns);
    REQUIRE(r.outcomes.size() == 1);
    CHECK(r.outcomes[0].outcome == Outcome::false_positive);
    CHECK(r.missed.size() == 2);  // both mitoses uncovered
  }
  SUBCASE("imposters never count as coverage targets") {
    const auto r = cross_reference({{{0, 0, 240}, 0.9}}, {mito_at(10, 10, AnnotationCategory::imposter)});
    CHECK(r.outcomes[0].outcome == Outcome::false_positive);
    CHECK(r.missed.empty());  // imposters cannot be missed mitoses
  }
  SUBCASE("mitosis with no covering positive window is missed") {
    const auto r = cross_reference({}, {mito_at(500, 500)});
    CHECK(r.outcomes.empty());
    REQUIRE(r.missed.size() == 1);
    CHECK(r.missed[0].x == 500);
  }
}

TEST_CASE("mine_patches follows caps, sorting, and the hard-negative band") {
  const auto image = flat_image(1600);
  MiningConfig cfg;
  cfg.cap_false_positive = 2;
  const int patch_size = 240;

  SUBCASE("3 FPs with cap 2 keeps the most confident two") {
    CrossRefResult xref;
    xref.outcomes = {{{0, 0, 240}, 0.86, Outcome::false_positive},
                     {{400, 0, 240}, 0.95, Outcome::false_positive},
                     {{800, 0, 240}, 0.90, Outcome::false_positive}};
    const auto mined = mine_patches(xref, {}, {}, image, cfg, 3, patch_size);
    REQUIRE(mined.size() == 2);
    CHECK(mined[0].center_x == 400 + 120);  // probability 0.95 first
    CHECK(mined[1].center_x == 800 + 120);
    for (const auto& p : mined) {
      CHECK(p.label == PatchLabel::negative);
      CHECK(p.provenance == Provenance::false_positive);
      CHECK(p.round_added == 3);
      CHECK(p.pixels.width == patch_size);
    }
  }
  SUBCASE("missed mitosis becomes a centered positive patch") {
    CrossRefResult xref;
    xref.missed = {mito_at(500, 600)};
    const auto mined = mine_patches(xref, {}, xref.missed, image, cfg, 1, patch_size);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0].label == PatchLabel::positive);
    CHECK(mined[0].provenance == Provenance::false_negative);
    CHECK(mined[0].center_x == 500);
    CHECK(mined[0].center_y == 600);
  }
  SUBCASE("band windows with no mitosis are hard negatives") {
    const std::vector<ScoredWindow> all = {{{0, 0, 240}, 0.6},     // in band -> mined
                                           {{400, 0, 240}, 0.49},  // below band
                                           {{800, 0, 240}, 0.84},  // at threshold: excluded
                                           {{0, 400, 240}, 0.7}};  // contains a mitosis
    const std::vector<Annotation> anns = {mito_at(100, 500)};
    const auto mined = mine_patches({}, all, anns, image, cfg, 2, patch_size);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0].provenance == Provenance::hard_negative);
    CHECK(mined[0].label == PatchLabel::negative);
    CHECK(mined[0].center_x == 120);
  }
  SUBCASE("hard negatives sorted by descending probability under the cap") {
    MiningConfig tight = cfg;
    tight.cap_hard_negative = 2;
    const std::vector<ScoredWindow> all = {{{0, 0, 240}, 0.55},
                                           {{400, 0, 240}, 0.80},
                                           {{800, 0, 240}, 0.66}};
    const auto mined = mine_patches({}, all, {}, image, tight, 1, patch_size);
    REQUIRE(mined.size() == 2);
    CHECK(mined[0].center_x == 400 + 120);
    CHECK(mined[1].center_x == 800 + 120);
  }
  SUBCASE("false negatives keep the lowest-covering-probability first up to the cap") {
    MiningConfig tight = cfg;
    tight.cap_false_negative = 1;
    CrossRefResult xref;
    xref.missed = {mito_at(200, 200), mito_at(1000, 1000)};
    // Sub-threshold windows covering each miss with different best scores.
    const std::vector<ScoredWindow> all = {{{100, 100, 240}, 0.4}, {{900, 900, 240}, 0.8}};
    const auto mined = mine_patches(xref, all, xref.missed, image, tight, 1, patch_size);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0].center_x == 200);  // weakest coverage mined first
  }
}

TEST_CASE("active loop on the synthetic fixture honors its contracts") {
  FixtureSpec spec;
  spec.n_images = 8;
  spec.image_size = 320;
  spec.min_objects = 1;
  spec.max_objects = 3;
  spec.max_imposters = 1;
  spec.unlabeled_fraction = 0.25;
  spec.seed = 21;
  const auto fixture = generate_fixture(spec);
  const auto& ds = fixture.dataset;

  std::vector<RoiImage> labeled;
  for (const auto& im : ds.images)
    if (im.labeled) labeled.push_back(im);
  auto split = split_dataset(labeled, 0.34, 3);

  ExtractConfig ext;
  ext.patch_size = 96;
  ext.random_negatives_per_unlabeled = 6;
  ext.min_annotation_distance = 60;
  ext.seed = 5;
  auto patches = extract_initial_patches(ds, split, ext);

  ActiveLoopConfig cfg;
  cfg.patch_size = 96;
  cfg.train.epochs_per_round = 6;
  cfg.train.batch_size = 16;
  cfg.train.restart_period = 6;
  cfg.train.lr_max = 5e-3;
  cfg.train.seed = 11;
  cfg.augment = AugmentConfig::disabled();
  cfg.augment.enable_flip = true;
  cfg.augment.enable_rotation = true;
  cfg.inference.window = 96;
  cfg.inference.step = 48;
  cfg.inference.prob_threshold = 0.84;
  cfg.mining.max_rounds = 2;
  cfg.mining.cap_false_positive = 10;
  cfg.mining.cap_false_negative = 10;
  cfg.mining.cap_hard_negative = 5;

  const auto before_train = patches.train.size();
  const auto before_val = patches.val.size();
  std::ostringstream log;
  const auto res = run_active_loop(
      ds, split, patches, [](std::uint64_t seed) { return build_tiny_cnn(seed, 96, 2); }, cfg,
      &log);

  REQUIRE(!res.reports.empty());
  CHECK(res.reports.size() <= 2);

  SUBCASE("sizes are monotone non-decreasing and consistent") {
    std::size_t prev_train = before_train, prev_val = before_val;
    for (const auto& r : res.reports) {
      CHECK(r.train_size >= prev_train);
      CHECK(r.val_size >= prev_val);
      prev_train = r.train_size;
      prev_val = r.val_size;
    }
    CHECK(patches.train.size() == res.reports.back().train_size);
  }
  SUBCASE("no train/val leakage by source image") {
    const std::set<std::string> train_ids(split.train_images.begin(), split.train_images.end());
    const std::set<std::string> val_ids(split.val_images.begin(), split.val_images.end());
    for (const auto& p : patches.train.patches)
      if (p.provenance != Provenance::random_negative) CHECK(train_ids.count(p.source_image) == 1);
    for (const auto& p : patches.val.patches) CHECK(val_ids.count(p.source_image) == 1);
  }
  SUBCASE("provenance implies label") {
    auto audit = [](const PatchSet& set) {
      for (const auto& p : set.patches) {
        if (p.provenance == Provenance::false_negative) CHECK(p.label == PatchLabel::positive);
        if (p.provenance == Provenance::false_positive || p.provenance == Provenance::hard_negative)
          CHECK(p.label == PatchLabel::negative);
      }
    };
    audit(patches.train);
    audit(patches.val);
  }
  SUBCASE("best round is the argmax of val detection F1") {
    double best = -1.0;
    int best_round = 0;
    for (const auto& r : res.reports)
      if (r.val_detection_f1 > best) {
        best = r.val_detection_f1;
        best_round = r.round;
      }
    CHECK(res.best_round == best_round);
    CHECK(!res.best_checkpoint_id.empty());
    CHECK(!res.best_params.empty());
  }
  SUBCASE("mined patches are deduplicated at 15 px per image and label") {
    auto audit = [](const PatchSet& set) {
      for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t j = i + 1; j < set.size(); ++j) {
          const auto& a = set.patches[i];
          const auto& b = set.patches[j];
          if (a.round_added == 0 && b.round_added == 0) continue;  // initial set, no dedupe
          if (a.source_image != b.source_image || a.label != b.label) continue;
          CHECK(std::hypot(a.center_x - b.center_x, a.center_y - b.center_y) >= 15.0);
        }
    };
    audit(patches.train);
    audit(patches.val);
  }
  SUBCASE("log has one round record per round") {
    // The stream interleaves epoch lines from training with round lines.
    int round_lines = 0;
    std::istringstream in(log.str());
    for (std::string line; std::getline(in, line);)
      if (line.find("\"round\"") != std::string::npos) ++round_lines;
    CHECK(round_lines == static_cast<int>(res.reports.size()));
  }
}

TEST_CASE("stopping rule: halts at the first non-increase") {
  // The rule itself is pure bookkeeping; exercise it through the loop's
  // documented trace semantics: F1 (0.60, 0.70, 0.68) stops after round 3
  // and returns round 2. Verified here against a reference re-implementation
  // of the rule used by run_active_loop.
  const std::vector<double> f1 = {0.60, 0.70, 0.68, 0.90};
  int rounds_run = 0;
  double prev = -1.0;
  for (std::size_t i = 0; i < f1.size() && i < 6; ++i) {
    ++rounds_run;
    if (f1[i] <= prev) break;  // strict improvement required
    prev = f1[i];
  }
  CHECK(rounds_run == 3);
  int best_round = 0;
  double best = -1.0;
  for (int i = 0; i < rounds_run; ++i)
    if (f1[i] > best) {
      best = f1[i];
      best_round = i + 1;
    }
  CHECK(best_round == 2);
}

