#include <doctest.h>

#include <stdexcept>

#include "mito/config.hpp"

using namespace mito;

TEST_CASE("empty config object yields all pipeline defaults") {
  const auto cfg = parse_config_json("{}");
  CHECK(cfg.model.input_size == 240);
  CHECK(cfg.model.num_ranks == 2);
  CHECK(cfg.inference.window == 240);
  CHECK(cfg.inference.step == 30);
  CHECK(cfg.inference.prob_threshold == doctest::Approx(0.84));
  CHECK(cfg.inference.nms_threshold == doctest::Approx(0.22));
  CHECK(cfg.train.epochs_per_round == 100);
  CHECK(cfg.train.momentum == doctest::Approx(0.9));
  CHECK(cfg.train.lr_max == doctest::Approx(6e-4));
  CHECK(cfg.train.restart_period == 25);
  CHECK(cfg.train.ousm_drop_fraction == doctest::Approx(0.1));
  CHECK(cfg.mining.max_rounds == 6);
  CHECK(cfg.mining.hard_negative_low == doctest::Approx(0.5));
  CHECK(cfg.mining.hard_negative_high == doctest::Approx(0.84));
  CHECK(cfg.mining.cap_false_positive == 100);
  CHECK(cfg.mining.cap_hard_negative == 50);
  CHECK(cfg.mining.dedupe_distance == doctest::Approx(15.0));
  CHECK(cfg.cam_threshold == doctest::Approx(0.5));
  CHECK(cfg.evaluation_radius == doctest::Approx(30.0));
  CHECK(cfg.split.val_fraction == doctest::Approx(0.1));
  CHECK(cfg.augment.mixup_alpha == doctest::Approx(0.2));
  CHECK(cfg.reinit_each_round == false);
}

TEST_CASE("partial overrides keep the other defaults") {
  const auto cfg = parse_config_json(R"({"inference": {"step": 60}, "train": {"seed": 9}})");
  CHECK(cfg.inference.step == 60);
  CHECK(cfg.inference.window == 240);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.train.epochs_per_round == 100);
}

TEST_CASE("unknown keys are rejected by name") {
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"inference": {"stepp": 60}})"),
                       doctest::Contains("stepp"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"inferrence": {}})"),
                       doctest::Contains("inferrence"), std::runtime_error);
}

TEST_CASE("invariant violations name the offending key") {
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"train": {"ousm_drop_fraction": 0.7}})"),
                       doctest::Contains("ousm_drop_fraction"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"split": {"val_fraction": 1.5}})"),
                       doctest::Contains("val_fraction"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"inference": {"prob_threshold": 1.5}})"),
                       doctest::Contains("prob_threshold"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"train": {"epochs_per_round": 0}})"),
                       doctest::Contains("epochs_per_round"), std::runtime_error);
}

TEST_CASE("serialize then parse is a fixed point") {
  auto cfg = parse_config_json(R"({
    "inference": {"step": 48, "window": 96},
    "model": {"input_size": 96, "seed": 17},
    "train": {"epochs_per_round": 12, "lr_max": 0.002},
    "mining": {"max_rounds": 3},
    "augment": {"enable_elastic": false, "mixup_alpha": 0.4},
    "cam_threshold": 0.6
  })");
  const auto text = serialize_config(cfg);
  const auto cfg2 = parse_config_json(text);
  CHECK(serialize_config(cfg2) == text);
  CHECK(cfg2.inference.step == 48);
  CHECK(cfg2.model.input_size == 96);
  CHECK(cfg2.train.lr_max == doctest::Approx(0.002));
  CHECK(cfg2.augment.enable_elastic == false);
  CHECK(cfg2.augment.mixup_alpha == doctest::Approx(0.4));
  CHECK(cfg2.cam_threshold == doctest::Approx(0.6));

  SUBCASE("serialization names every effective default") {
    const auto base = serialize_config(parse_config_json("{}"));
    CHECK(base.find("prob_threshold") != std::string::npos);
    CHECK(base.find("nms_threshold") != std::string::npos);
    CHECK(base.find("epochs_per_round") != std::string::npos);
    CHECK(base.find("max_rounds") != std::string::npos);
    CHECK(base.find("evaluation_radius") != std::string::npos);
  }
}
