#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "crossflow/config_io.hpp"
#include "crossflow/domain.hpp"

using namespace crossflow;

namespace {

bool has_error(const std::vector<ConfigError>& errs, const std::string& field,
               const std::string& reason) {
  for (const auto& e : errs)
    if (e.field == field && e.reason == reason) return true;
  return false;
}

}  // namespace

TEST(ValidateConfig, DefaultsAreValid) {
  ScenarioConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.7);
  EXPECT_DOUBLE_EQ(cfg.dt, 0.1);
  EXPECT_DOUBLE_EQ(cfg.intersection.control_zone_length, 150.0);
  EXPECT_DOUBLE_EQ(cfg.intersection.speed_limit, 20.0);
  EXPECT_DOUBLE_EQ(cfg.intersection.msr, 2.0);
  EXPECT_DOUBLE_EQ(cfg.intersection.msl, 25.0);
  EXPECT_TRUE(validate_config(cfg).empty());
}

TEST(ValidateConfig, LambdaOutOfRange) {
  ScenarioConfig cfg;
  cfg.lambda = 1.3;
  const auto errs = validate_config(cfg);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_TRUE(has_error(errs, "lambda", "out of [0,1]"));
}

TEST(ValidateConfig, SplitMustSumToOne) {
  ScenarioConfig cfg;
  cfg.intention_split = {0.5, 0.5, 0.5};
  EXPECT_TRUE(has_error(validate_config(cfg), "intention_split", "sum != 1"));
}

TEST(ValidateConfig, ReportsEveryViolation) {
  ScenarioConfig cfg;
  cfg.dt = 0.0;
  cfg.lambda = -0.1;
  cfg.inflow_per_arm[2] = -5.0;
  cfg.intersection.msr = 0.0;
  const auto errs = validate_config(cfg);
  EXPECT_TRUE(has_error(errs, "dt", "must be > 0"));
  EXPECT_TRUE(has_error(errs, "lambda", "out of [0,1]"));
  EXPECT_TRUE(has_error(errs, "inflow_per_arm[2]", "must be >= 0"));
  EXPECT_TRUE(has_error(errs, "intersection.msr", "must be > 0"));
  EXPECT_EQ(errs.size(), 4u);
}

TEST(ValidateConfig, StraightPathMustSpanZone) {
  ScenarioConfig cfg;
  cfg.intersection.turn_path_length.straight = 20.0;
  EXPECT_FALSE(validate_config(cfg).empty());
}

TEST(ValidateConfig, NanIsRejected) {
  ScenarioConfig cfg;
  cfg.lambda = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(has_error(validate_config(cfg), "lambda", "out of [0,1]"));
}

TEST(ValidateConfig, IntentionWithoutLane) {
  ScenarioConfig cfg;
  cfg.intersection.lanes_per_arm = 2;
  cfg.intersection.lane_intentions = {Intention::Right, Intention::Straight};
  EXPECT_FALSE(validate_config(cfg).empty());
  cfg.intention_split = {0.5, 0.5, 0.0};
  EXPECT_TRUE(validate_config(cfg).empty());
}

TEST(ScenarioConfig, DefaultAuctionConstant) {
  ScenarioConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.effective_c(), 2.0 * 150.0 / 20.0 + 15.0);
  cfg.c_const = 40.0;
  EXPECT_DOUBLE_EQ(cfg.effective_c(), 40.0);
}

TEST(ConfigIo, RoundTripIsBitExact) {
  ScenarioConfig cfg;
  cfg.inflow_per_arm = {4000.0 / 3.0, 1.0 / 3.0, 0.1, 2500.0};
  cfg.intention_split = {0.1, 0.7, 0.2};
  cfg.lambda = 0.123456789012345678;
  cfg.dt = 0.05;
  cfg.c_const = 31.25;
  cfg.seed = 0xFFFFFFFFFFFFFFFFULL;
  cfg.controller = ControllerKind::TrafficLight;
  cfg.vehicle_template.length = 4.2;
  cfg.intersection.speed_limit = 25.0;
  cfg.intersection.lane_intentions = {Intention::Left, Intention::Straight, Intention::Right};
  cfg.traffic_light.green = 12.5;

  const auto text = dump_config(cfg);
  const auto back = parse_config(text);
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(ConfigIo, MissingKeysKeepDefaults) {
  const auto cfg = parse_config(R"({"seed": 7, "intersection": {"speed_limit": 25}})");
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_DOUBLE_EQ(cfg.intersection.speed_limit, 25.0);
  EXPECT_DOUBLE_EQ(cfg.intersection.control_zone_length, 150.0);
  EXPECT_FALSE(cfg.c_const.has_value());
}

TEST(ConfigIo, UnknownKeyRejected) {
  EXPECT_THROW(parse_config(R"({"lamda": 0.5})"), ConfigParseError);
  EXPECT_THROW(parse_config(R"({"intersection": {"width": 3}})"), ConfigParseError);
  EXPECT_THROW(parse_config(R"({"controller": "magic"})"), ConfigParseError);
  EXPECT_THROW(parse_config("{not json"), ConfigParseError);
}

TEST(ConfigIo, HashChangesWithContent) {
  ScenarioConfig a, b;
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(hex64(0x1234abcdULL), "000000001234abcd");
}

TEST(Names, ControllerParsing) {
  EXPECT_EQ(parse_controller("gameopt"), ControllerKind::GameOpt);
  EXPECT_EQ(parse_controller("fifo"), ControllerKind::FifoAuction);
  EXPECT_EQ(parse_controller("light"), ControllerKind::TrafficLight);
  EXPECT_FALSE(parse_controller("other").has_value());
  EXPECT_EQ(to_string(ControllerKind::FifoAuction), "fifo");
}
