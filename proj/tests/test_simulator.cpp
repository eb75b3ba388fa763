#include <gtest/gtest.h>

#include <cmath>

#include "crossflow/simulator.hpp"

using namespace crossflow;

namespace {

ScenarioConfig quiet(ControllerKind c = ControllerKind::GameOpt) {
  ScenarioConfig cfg;
  cfg.controller = c;
  cfg.inflow_per_arm = {0.0, 0.0, 0.0, 0.0};
  return cfg;
}

VehicleState approaching(int arm, Intention intent, double s, double v, bool granted = false) {
  VehicleState x;
  x.arm = arm;
  x.intention = intent;
  x.lane = ScenarioConfig{}.intersection.lane_for(intent);
  x.s = s;
  x.v = v;
  x.granted = granted;
  return x;
}

CommandSet one(VehicleId id, double u) {
  CommandSet c;
  c.commands.push_back({id, u});
  return c;
}

}  // namespace

TEST(Fuel, IdleFloor) { EXPECT_NEAR(fuel_step(0.0, 0.0, 1.0), 1.67e-4, 1e-15); }

TEST(Fuel, CruiseAtSpeedLimit) { EXPECT_NEAR(fuel_step(20.0, 0.0, 1.0), 1.84e-3, 1e-15); }

TEST(Fuel, BrakingNeverExceedsCoasting) {
  for (double v : {0.0, 3.0, 10.0, 20.0})
    for (double a : {-5.0, -1.0, -0.1}) EXPECT_LE(fuel_step(v, a, 0.1), fuel_step(v, 0.0, 0.1));
}

TEST(Spawn, PoissonMeanMatchesRate) {
  auto cfg = quiet();
  cfg.inflow_per_arm[0] = 2500.0;
  cfg.duration = 1e5;
  Simulator sim(cfg);
  const std::size_t steps = 1000000;
  for (std::size_t k = 0; k < steps; ++k) sim.spawn_step();
  const double expected = 2500.0 / 3600.0 * 0.1 * static_cast<double>(steps);
  EXPECT_NEAR(static_cast<double>(sim.spawned()) / expected, 1.0, 0.01);
}

TEST(Spawn, ZeroRateNeverSpawns) {
  Simulator sim(quiet());
  for (int k = 0; k < 10000; ++k) sim.spawn_step();
  EXPECT_EQ(sim.spawned(), 0u);
  EXPECT_TRUE(sim.active().empty());
}

TEST(Spawn, BlockedEntryDefersToQueue) {
  auto cfg = quiet();
  cfg.inflow_per_arm[0] = 3600.0 * 5.0;
  cfg.intention_split = {0.0, 1.0, 0.0};
  Simulator sim(cfg);
  sim.insert(approaching(0, Intention::Straight, cfg.intersection.control_zone_length, 0.0));
  for (int k = 0; k < 20; ++k) sim.spawn_step();
  EXPECT_GT(sim.queued(), 0u);
  EXPECT_EQ(sim.active().size(), 1u);
  EXPECT_EQ(sim.spawned(), sim.active().size() + sim.queued());
}

TEST(Spawn, EntryAtSpeedLimitFromControlZoneEdge) {
  auto cfg = quiet();
  cfg.inflow_per_arm[2] = 3600.0;
  Simulator sim(cfg);
  while (sim.active().empty()) sim.spawn_step();
  const auto& v = sim.active().front();
  EXPECT_EQ(v.arm, 2);
  EXPECT_DOUBLE_EQ(v.s, cfg.intersection.control_zone_length);
  EXPECT_DOUBLE_EQ(v.v, cfg.intersection.speed_limit);
  EXPECT_EQ(v.lane, cfg.intersection.lane_for(v.intention));
}

TEST(Step, ConstantSpeed) {
  Simulator sim(quiet());
  const auto id = sim.insert(approaching(0, Intention::Straight, 100.0, 10.0)).id;
  sim.step(one(id, 10.0));
  EXPECT_NEAR(sim.active().front().s, 99.0, 1e-12);
  EXPECT_DOUBLE_EQ(sim.active().front().v, 10.0);
  EXPECT_NEAR(sim.clock(), 0.1, 1e-15);
}

TEST(Step, AverageSpeedAdvancement) {
  Simulator sim(quiet());
  const auto id = sim.insert(approaching(0, Intention::Straight, 100.0, 10.0)).id;
  sim.step(one(id, 10.3));
  EXPECT_NEAR(sim.active().front().s, 100.0 - 1.015, 1e-12);
  EXPECT_DOUBLE_EQ(sim.active().front().v, 10.3);
}

TEST(Step, CrossesStopLine) {
  Simulator sim(quiet());
  const auto id = sim.insert(approaching(1, Intention::Left, 0.5, 20.0, true)).id;
  sim.step(one(id, 20.0));
  const auto& v = sim.active().front();
  EXPECT_EQ(v.phase, Phase::Crossing);
  EXPECT_NEAR(v.zone_distance, 1.5, 1e-12);
  EXPECT_NEAR(v.cross_time, 0.1, 1e-12);
  EXPECT_EQ(sim.counters().unreserved_entries, 0u);
}

TEST(Step, ClockIsExactMultipleOfDt) {
  Simulator sim(quiet());
  for (int k = 0; k < 1234; ++k) sim.tick();
  EXPECT_EQ(sim.clock(), 1234 * 0.1);
  EXPECT_EQ(sim.cycle(), 1234u);
}

TEST(Controllers, EmptyZoneGivesNoCommands) {
  Simulator sim(quiet());
  EXPECT_TRUE(sim.control().commands.commands.empty());
}

TEST(Controllers, SingleFarVehicleStationaryPointClipped) {
  for (auto c : {ControllerKind::GameOpt, ControllerKind::FifoAuction}) {
    Simulator sim(quiet(c));
    const auto id = sim.insert(approaching(0, Intention::Straight, 140.0, 10.0)).id;
    const auto res = sim.control();
    ASSERT_TRUE(res.commands.find(id)) << to_string(c);
    EXPECT_NEAR(*res.commands.find(id), std::min(17.0, 10.0 + 3.0 * 0.1), 1e-9) << to_string(c);
  }
}

TEST(Controllers, FifoRanksEarlierSpawnFirst) {
  SimOptions opt;
  opt.record_bids = true;
  Simulator sim(quiet(ControllerKind::FifoAuction), opt);
  auto late = approaching(0, Intention::Straight, 20.0, 5.0);
  late.spawn_time = 7.0;
  auto early = approaching(1, Intention::Straight, 120.0, 15.0);
  early.spawn_time = 3.0;
  const auto late_id = sim.insert(late).id;
  const auto early_id = sim.insert(early).id;
  sim.control();
  ASSERT_EQ(sim.bid_log().size(), 2u);
  for (const auto& row : sim.bid_log()) {
    if (row.rec.id == early_id) EXPECT_EQ(row.rec.rank, 1u);
    if (row.rec.id == late_id) EXPECT_EQ(row.rec.rank, 2u);
  }
}

TEST(Controllers, FifoTieBreaksById) {
  SimOptions opt;
  opt.record_bids = true;
  Simulator sim(quiet(ControllerKind::FifoAuction), opt);
  const auto a = sim.insert(approaching(2, Intention::Left, 60.0, 10.0)).id;
  const auto b = sim.insert(approaching(0, Intention::Left, 30.0, 10.0)).id;
  sim.control();
  for (const auto& row : sim.bid_log()) EXPECT_EQ(row.rec.rank, row.rec.id == a ? 1u : 2u) << b;
}

TEST(TrafficLight, DefaultTableTiming) {
  const auto t = default_phase_table({});
  ASSERT_EQ(t.phases().size(), 4u);
  EXPECT_DOUBLE_EQ(t.cycle_length(), 72.0);
  auto s = t.state_at(0.0);
  EXPECT_EQ(s.phase, 0u);
  EXPECT_FALSE(s.clearance);
  s = t.state_at(16.0);
  EXPECT_EQ(s.phase, 0u);
  EXPECT_TRUE(s.clearance);
  s = t.state_at(18.0);
  EXPECT_EQ(s.phase, 1u);
  EXPECT_FALSE(s.clearance);
  EXPECT_EQ(t.state_at(72.0 + 40.0).phase, 2u);
}

TEST(TrafficLight, PhasesNeverPermitConflictingGroups) {
  const auto t = default_phase_table({});
  for (const auto& ph : t.phases())
    for (int a = 0; a < kNumGroups; ++a)
      for (int b = 0; b < kNumGroups; ++b)
        if (ph.permitted.test(static_cast<std::size_t>(a)) && ph.permitted.test(static_cast<std::size_t>(b)))
          EXPECT_FALSE(conflicts(LaneGroup::from_index(a), LaneGroup::from_index(b)));
}

TEST(TrafficLight, RejectsConflictingPhase) {
  TrafficLightPhase ph;
  ph.permitted.set(static_cast<std::size_t>(LaneGroup{0, Intention::Straight}.index()));
  ph.permitted.set(static_cast<std::size_t>(LaneGroup{2, Intention::Straight}.index()));
  EXPECT_THROW(TrafficLightPhaseTable({ph}), std::invalid_argument);
  EXPECT_THROW(TrafficLightPhaseTable(std::vector<TrafficLightPhase>{}), std::invalid_argument);
}

TEST(TrafficLight, ClearanceHoldsEveryLane) {
  auto cfg = quiet(ControllerKind::TrafficLight);
  Simulator sim(cfg);
  while (sim.clock() < 15.0 - 1e-9) sim.tick();
  // arm 0 is green until 15 s, then clears until 18 s
  for (int arm = 0; arm < kNumArms; ++arm)
    for (auto intent : {Intention::Right, Intention::Straight, Intention::Left})
      sim.insert(approaching(arm, intent, 1.0, 0.0));
  while (sim.clock() < 18.0 - 1e-9) {
    sim.tick();
    for (const auto& v : sim.active()) {
      EXPECT_EQ(v.phase, Phase::Approaching) << "t=" << sim.clock();
      EXPECT_FALSE(v.granted) << "t=" << sim.clock();
    }
  }
  // phase 1 green: arm 1 straight moves
  for (int k = 0; k < 20; ++k) sim.tick();
  bool moved = false;
  for (const auto& v : sim.active())
    if (v.arm == 1 && v.intention == Intention::Straight) moved = v.phase != Phase::Approaching || v.v > 0.0;
  for (const auto& v : sim.departed())
    if (v.arm == 1 && v.intention == Intention::Straight) moved = true;
  EXPECT_TRUE(moved);
  EXPECT_EQ(sim.safety_events().size(), 0u);
}

TEST(TrafficLight, RedLaneStopsBeforeLine) {
  auto cfg = quiet(ControllerKind::TrafficLight);
  Simulator sim(cfg);
  // arm 2 is red during the first phase; braking from 20 m/s needs 40 m
  const auto id = sim.insert(approaching(2, Intention::Straight, 60.0, 20.0)).id;
  double first_brake = -1.0;
  while (sim.clock() < 14.0) {
    const double before = sim.active().front().v;
    sim.tick();
    if (first_brake < 0.0 && sim.active().front().v < before) first_brake = sim.clock();
  }
  const auto& v = sim.active().front();
  EXPECT_EQ(v.id, id);
  EXPECT_EQ(v.phase, Phase::Approaching);
  EXPECT_NEAR(v.v, 0.0, 1e-9);
  EXPECT_GT(v.s, 0.0);
  ASSERT_GE(first_brake, 0.0);
  EXPECT_LE(first_brake, (60.0 - 20.0 * 20.0 / 10.0) / 20.0 + 0.1);
}

TEST(Run, ZeroInflowGivesZeroMetrics) {
  auto cfg = quiet();
  cfg.duration = 30.0;
  const auto r = run(cfg);
  EXPECT_EQ(r.metrics.throughput, 0.0);
  EXPECT_EQ(r.metrics.mean_time_to_goal, 0.0);
  EXPECT_EQ(r.metrics.total_fuel, 0.0);
  EXPECT_EQ(r.metrics.mean_fuel_per_vehicle, 0.0);
  EXPECT_EQ(r.metrics.spawned, 0u);
  EXPECT_EQ(r.metrics.departed, 0u);
  EXPECT_EQ(r.metrics.safety_violations, 0u);
  EXPECT_EQ(r.metrics.cycles, 300u);
}

TEST(Run, ThroughputIsDeparturesPerMinute) {
  ScenarioConfig cfg;
  cfg.duration = 120.0;
  cfg.inflow_per_arm.fill(1000.0);
  const auto r = run(cfg);
  ASSERT_GT(r.metrics.departed, 0u);
  EXPECT_DOUBLE_EQ(r.metrics.throughput, static_cast<double>(r.metrics.departed) / 2.0);
}

TEST(Run, DeterministicCsv) {
  ScenarioConfig cfg;
  cfg.duration = 60.0;
  cfg.seed = 9;
  cfg.inflow_per_arm.fill(1500.0);
  SimOptions opt;
  opt.record_bids = true;
  std::string first;
  for (int rep = 0; rep < 2; ++rep) {
    Simulator sim(cfg, opt);
    sim.run_to_end();
    const auto all = vehicles_csv(sim) + cycles_csv(sim) + bids_csv(sim);
    if (rep == 0) first = all;
    else EXPECT_EQ(all, first);
  }
}

TEST(Run, CsvLayout) {
  ScenarioConfig cfg;
  cfg.duration = 10.0;
  Simulator sim(cfg);
  sim.run_to_end();
  const auto v = vehicles_csv(sim);
  EXPECT_EQ(v.substr(0, v.find("\r\n")), "id,arm,lane,intention,spawn_time,cross_time,depart_time,fuel");
  const auto c = cycles_csv(sim);
  EXPECT_EQ(c.substr(0, c.find("\r\n")),
            "time,n_in_zone,n_approaching,n_crossing,solver_status,fallback,rows,lateral_rows,iterations");
  EXPECT_EQ(std::count(c.begin(), c.end(), '\n'), 101);
}

TEST(SimulatorProperty, ConservationAndInvariantsEveryCycle) {
  for (auto c : {ControllerKind::GameOpt, ControllerKind::FifoAuction, ControllerKind::TrafficLight}) {
    ScenarioConfig cfg;
    cfg.controller = c;
    cfg.duration = 90.0;
    cfg.seed = 3;
    cfg.inflow_per_arm = {2500.0, 1500.0, 2500.0, 1500.0};
    Simulator sim(cfg);
    while (!sim.done()) {
      sim.tick();
      ASSERT_EQ(sim.spawned(), sim.departed().size() + sim.active().size() + sim.queued()) << to_string(c);
      ASSERT_TRUE(sim.state_invariants_hold()) << to_string(c) << " t=" << sim.clock();
    }
    EXPECT_EQ(sim.safety_events().size(), 0u) << to_string(c);
    EXPECT_EQ(sim.counters().conservation_errors, 0u);
    EXPECT_EQ(sim.counters().unreserved_entries, 0u);
  }
}

TEST(SimulatorProperty, ThroughputNeverExceedsSpawnRate) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    ScenarioConfig cfg;
    cfg.duration = 120.0;
    cfg.seed = seed;
    cfg.inflow_per_arm.fill(1500.0);
    Simulator sim(cfg);
    sim.run_to_end();
    EXPECT_LE(sim.departed().size(), sim.spawned());
  }
}

TEST(SimulatorProperty, ConflictingGroupsNeverCrossTogether) {
  ScenarioConfig cfg;
  cfg.duration = 120.0;
  cfg.seed = 4;
  cfg.inflow_per_arm.fill(2000.0);
  Simulator sim(cfg);
  while (!sim.done()) {
    sim.tick();
    std::vector<const VehicleState*> crossing;
    for (const auto& v : sim.active())
      if (v.phase == Phase::Crossing) crossing.push_back(&v);
    for (std::size_t a = 0; a < crossing.size(); ++a)
      for (std::size_t b = a + 1; b < crossing.size(); ++b)
        ASSERT_FALSE(conflicts(classify(*crossing[a]), classify(*crossing[b]))) << "t=" << sim.clock();
  }
}

TEST(Outputs, MetricsJsonRoundTrip) {
  MetricsReport m;
  m.throughput = 12.5;
  m.mean_time_to_goal = 33.25;
  m.total_fuel = 1.5;
  m.mean_fuel_per_vehicle = 0.0625;
  m.solver_latency = {1.0, 0.5, 3.0};
  m.departed = 7;
  m.spawned = 9;
  const auto back = metrics_from_json(metrics_json(m));
  EXPECT_EQ(back.throughput, m.throughput);
  EXPECT_EQ(back.mean_time_to_goal, m.mean_time_to_goal);
  EXPECT_EQ(back.mean_fuel_per_vehicle, m.mean_fuel_per_vehicle);
  EXPECT_EQ(back.solver_latency.max, 3.0);
  EXPECT_EQ(back.departed, 7u);
  EXPECT_EQ(back.spawned, 9u);
}

TEST(TravelTime, AccelerateThenCruise) {
  EXPECT_DOUBLE_EQ(travel_time(0.0, 5.0, 3.0, 20.0), 0.0);
  EXPECT_NEAR(travel_time(100.0, 20.0, 3.0, 20.0), 5.0, 1e-12);
  // 0 -> 20 m/s takes 20/3 s over 200/3 m
  EXPECT_NEAR(travel_time(200.0 / 3.0 + 20.0, 0.0, 3.0, 20.0), 20.0 / 3.0 + 1.0, 1e-12);
  EXPECT_NEAR(travel_time(6.0, 0.0, 3.0, 20.0), 2.0, 1e-12);
}
