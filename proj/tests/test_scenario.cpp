#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "dergrid/scenario.hpp"

using namespace dergrid;

namespace {

std::string fixture(const std::string& name) { return std::string(DERGRID_DATA_DIR) + "/feeders/" + name; }

// One-node feeder with a given class and peak.
NetworkModel single_node(double peak, ConsumerClass cls = ConsumerClass::residential) {
    NetworkModel m;
    m.buses.push_back({"s", {Phase::A}, 240.0, true});
    m.buses.push_back({"b", {Phase::A}, 240.0, false});
    m.lines.push_back({"l", "s", "b", {Phase::A}, 0.01, 0.01});
    Node n;
    n.bus_id = "b";
    n.kind = NodeKind::consumer;
    n.consumer_class = cls;
    n.peak_load = peak;
    m.nodes.push_back(n);
    m.finalize();
    return m;
}

// Flat-ish one-day profile whose daily peak is `peak`.
LibraryProfile flat_profile(const std::string& id, double peak, ConsumerClass cls = ConsumerClass::residential) {
    LibraryProfile p;
    p.id = id;
    p.cls = cls;
    p.nonthermal_kw.assign(kStepsPerDay, peak / 2);
    p.thermal_kw.assign(kStepsPerDay, 0.0);
    p.nonthermal_kw[70] = peak;
    return p;
}

std::vector<NodeLoad> flat_loads(std::size_t count, double nonthermal_kwh_per_day) {
    std::vector<NodeLoad> loads(count);
    for (std::size_t i = 0; i < count; ++i) {
        loads[i].node = 1;
        loads[i].fixed_kw.assign(kStepsPerDay, nonthermal_kwh_per_day / 24.0);
        loads[i].thermal_kw.assign(kStepsPerDay, 0.0);
    }
    return loads;
}

ScenarioConfig test_config() {
    ScenarioConfig c;
    c.horizon.days = 14;
    c.horizon.start_day = 0;
    c.year = 2050;
    YearSettings y;
    y.ev_percent = 25;
    y.pv_percent = 30;
    y.storage_spread_percent = 70;
    y.residential_uplift_percent = 5;
    y.commercial_uplift_percent = 15;
    y.thermal_addition_percent = 10;
    c.years[2050] = y;
    c.flex_presets["enhanced"] = {{2050, 0.3}};
    c.flex_case = "enhanced";
    return c;
}

}  // namespace

TEST(Scenario, BaselinePicksProfileWithinToleranceAndScales) {
    auto net = single_node(5.0);
    ProfileLibrary lib;
    lib.profiles.push_back(flat_profile("near", 5.3));
    lib.profiles.push_back(flat_profile("far", 7.0));
    Rng rng(1);
    auto loads = synthesize_baseline_loads(net, lib, rng);
    ASSERT_EQ(loads.size(), 1u);
    EXPECT_EQ(loads[0].profile_id, "near");
    EXPECT_NEAR(loads[0].fixed_kw[0], 5.3 / 2 * 5.0 / 5.3, 1e-12);
    EXPECT_NEAR(average_daily_peak(loads[0].fixed_kw), 5.0, 1e-12);
    EXPECT_GE(loads[0].power_factor, 0.9);
    EXPECT_LE(loads[0].power_factor, 0.95);
}

TEST(Scenario, BaselineOutsideToleranceErrorsOrFallsBack) {
    auto net = single_node(5.0);
    ProfileLibrary lib;
    lib.profiles.push_back(flat_profile("six", 6.0));
    Rng rng(1);
    EXPECT_THROW(synthesize_baseline_loads(net, lib, rng), ScenarioError);
    auto loads = synthesize_baseline_loads(net, lib, rng, 0.10, true);
    EXPECT_EQ(loads[0].profile_id, "six");
    ProfileLibrary wrong_class;
    wrong_class.profiles.push_back(flat_profile("c", 5.0, ConsumerClass::commercial));
    EXPECT_THROW(synthesize_baseline_loads(net, wrong_class, rng), ScenarioError);
}

TEST(Scenario, BaselineIsDeterministic) {
    auto net = load_network_file(fixture("sub11.json"));
    Horizon h{7, 0};
    auto lib = make_synthetic_library(net, h, LibraryConfig{});
    Rng a(42), b(42);
    auto la = synthesize_baseline_loads(net, lib, a);
    auto lb = synthesize_baseline_loads(net, lib, b);
    for (std::size_t i = 0; i < la.size(); ++i) {
        EXPECT_EQ(la[i].profile_id, lb[i].profile_id);
        EXPECT_EQ(la[i].fixed_kw, lb[i].fixed_kw);
        EXPECT_NEAR(average_daily_peak(std::vector<double>(la[i].fixed_kw.size())), 0.0, 0.0);
        std::vector<double> total(la[i].fixed_kw.size());
        for (std::size_t t = 0; t < total.size(); ++t) total[t] = la[i].demand(t);
        EXPECT_NEAR(average_daily_peak(total), net.nodes[la[i].node].peak_load, 1e-9);
    }
}

TEST(Scenario, UpliftScalesNonThermalEnergy) {
    auto net = single_node(5.0);
    auto loads = flat_loads(1, 1000.0);
    ElectrificationPlan plan;
    plan.residential_uplift_percent = 10;
    ProfileLibrary lib;
    Rng rng(3);
    apply_electrification(loads, plan, lib, net, rng);
    EXPECT_NEAR(energy_kwh(loads[0].fixed_kw), 1100.0, 1e-9);
}

TEST(Scenario, ThermalConversionDividesByEfficiency) {
    std::vector<double> thermal(kStepsPerDay, 3000.0 / 24.0);
    EXPECT_NEAR(energy_kwh(thermal_to_electric(thermal, 3.0)), 1000.0, 1e-9);
    EXPECT_THROW(thermal_to_electric(thermal, 0.0), ConfigError);
}

TEST(Scenario, ElectrificationStopsAtFirstCrossing) {
    // Appliances of about 1000 kWh electric each; target 5000 kWh.
    auto net = single_node(5.0);
    ProfileLibrary lib;
    lib.reference_peak_kw = 5.0;
    for (int i = 0; i < 3; ++i) {
        ThermalProfile t;
        t.id = "sh" + std::to_string(i);
        t.kind = ThermalKind::space_heating;
        t.thermal_kw.assign(kStepsPerDay, (2900.0 + 100.0 * i) / 24.0);
        lib.thermal.push_back(t);
        t.id = "wh" + std::to_string(i);
        t.kind = ThermalKind::water_heating;
        t.thermal_kw.assign(kStepsPerDay, (2400.0 + 100.0 * i) / 24.0);
        lib.thermal.push_back(t);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto loads = flat_loads(10, 100.0);
        ElectrificationPlan plan;
        plan.thermal_target_kwh = 5000.0;
        plan.space_heating_efficiency = 3.0;
        plan.water_heating_efficiency = 2.5;
        Rng rng(seed);
        apply_electrification(loads, plan, lib, net, rng);
        int assignments = 0;
        double added = 0.0;
        for (const auto& l : loads) {
            assignments += l.space_heating + l.water_heating;
            added += energy_kwh(l.thermal_kw);
        }
        EXPECT_GE(added, 5000.0);
        EXPECT_LT(added - 5000.0, 1040.0 + 1e-9);
        EXPECT_GE(assignments, 4);
        EXPECT_LE(assignments, 6);
    }
    auto few = flat_loads(1, 100.0);
    ElectrificationPlan big;
    big.thermal_target_kwh = 1e6;
    Rng rng(1);
    EXPECT_THROW(apply_electrification(few, big, lib, net, rng), ScenarioError);
}

TEST(Scenario, EvFeasibilityArithmetic) {
    EvEvent e;
    e.start = 18 * 4;
    e.end = kStepsPerDay + 7 * 4;
    e.energy_kwh = 40.0;
    const double cap = static_cast<double>(e.end - e.start) * kStepHours * 6.3;
    EXPECT_GE(cap, 40.0);
    EXPECT_LT(4.0 * 6.3, 100.0);
}

TEST(Scenario, InfeasibleEvDistributionIsRejected) {
    EvSamplerConfig c;
    c.work_arrival_mean_h = 10;
    c.work_arrival_sd_h = 0.01;
    c.work_departure_mean_h = 14;
    c.work_departure_sd_h = 0.01;
    c.energy_mean_kwh = 100;
    c.energy_cv = 0.01;
    c.daily_probability = 1.0;
    Rng rng(5);
    EXPECT_THROW(generate_ev_events(c, EvLocation::work, Horizon{3, 0}, 6.3, 1.0, rng), ScenarioError);
}

TEST(Scenario, EvEventsFeasibleAndNonOverlapping) {
    EvSamplerConfig c;
    Rng rng(9);
    for (auto where : {EvLocation::home, EvLocation::work}) {
        auto evs = generate_ev_events(c, where, Horizon{30, 0}, 6.3, std::sqrt(0.86), rng);
        ASSERT_FALSE(evs.empty());
        for (std::size_t i = 0; i < evs.size(); ++i) {
            const auto& e = evs[i];
            EXPECT_LT(e.start, e.end);
            EXPECT_LE(e.end, 30 * kStepsPerDay);
            EXPECT_LE(e.energy_kwh, static_cast<double>(e.end - e.start) * kStepHours * 6.3 * std::sqrt(0.86) + 1e-9);
            if (i > 0) EXPECT_GE(e.start, evs[i - 1].end);
            const double arr_h = static_cast<double>(e.start % kStepsPerDay) / kStepsPerHour;
            if (where == EvLocation::home) {
                EXPECT_GE(arr_h, 12.0);
            } else {
                EXPECT_LE(arr_h, 12.0);
                EXPECT_EQ(e.start / kStepsPerDay, (e.end - 1) / kStepsPerDay);
            }
        }
    }
}

TEST(Scenario, EvEnergyMeanMonteCarlo) {
    EvSamplerConfig c;
    Rng rng(2024);
    double sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) sum += sample_ev_energy(c, rng);
    EXPECT_NEAR(sum / n / c.energy_mean_kwh, 1.0, 0.05);
}

TEST(Scenario, ResidentialChargerCapIsStrictFloor) {
    EXPECT_EQ(residential_charger_cap(12.0), 0);
    EXPECT_EQ(residential_charger_cap(12.2), 1);
    EXPECT_EQ(residential_charger_cap(24.3), 1);
    EXPECT_EQ(residential_charger_cap(24.4), 2);

    auto net = single_node(12.0);
    NodeLoad l;
    l.node = net.consumer_nodes[0];
    l.fixed_kw.assign(kStepsPerDay * 3, 1.0);
    l.thermal_kw.assign(kStepsPerDay * 3, 0.0);
    std::vector<NodeLoad> loads{l};
    Rng rng(1);
    EXPECT_THROW(assign_evs(net, loads, EvSamplerConfig{}, Horizon{3, 0}, 6.3, 1.0, 10.0, rng), ScenarioError);
    auto none = assign_evs(net, loads, EvSamplerConfig{}, Horizon{3, 0}, 6.3, 1.0, 0.0, rng);
    EXPECT_TRUE(none.events.empty());
}

TEST(Scenario, ChargerCapHoldsInGeneratedScenarios) {
    auto net = load_network_file(fixture("sub11.json"));
    auto cfg = test_config();
    auto lib = make_synthetic_library(net, cfg.horizon, cfg.library);
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        auto sc = generate_scenario(net, cfg, lib, seed);
        std::map<std::size_t, std::set<int>> chargers;
        for (const auto& e : sc.ev_events) chargers[e.consumer].insert(e.charger);
        for (const auto& [c, set] : chargers)
            if (sc.loads[c].cls == ConsumerClass::residential)
                EXPECT_LE(static_cast<int>(set.size()), residential_charger_cap(net.nodes[sc.loads[c].node].peak_load));
    }
}

TEST(Scenario, CommercialSelectionProportionalToPeak) {
    std::vector<std::size_t> cand{0, 1};
    std::vector<double> peaks{10.0, 30.0};
    Rng rng(77);
    int hits[2] = {0, 0};
    for (int i = 0; i < 40000; ++i) ++hits[pick_by_peak(cand, peaks, rng)];
    EXPECT_NEAR(static_cast<double>(hits[1]) / hits[0], 3.0, 0.15);
}

TEST(Scenario, PvSizedToRatioOfNodeEnergy) {
    std::vector<double> shape(kStepsPerDay, 0.0);
    for (int k = 32; k < 64; ++k) shape[static_cast<std::size_t>(k)] = 0.5;  // 4 kWh per kW
    std::vector<double> energy{10000.0};
    Rng rng(4);
    auto pv = assign_pv(energy, shape, 1.0, rng, 0.5, 0.5);
    ASSERT_EQ(pv.size(), 1u);
    EXPECT_NEAR(pv[0].capacity_kw * energy_kwh(shape), 5000.0, 1e-9);
}

TEST(Scenario, PvTargetReachedWithinOneNode) {
    std::vector<double> shape(kStepsPerDay, 0.0);
    for (int k = 32; k < 64; ++k) shape[static_cast<std::size_t>(k)] = 0.5;
    std::vector<double> energy;
    for (int i = 0; i < 40; ++i) energy.push_back(50.0 + 3.0 * i);
    const double rooftop = 4000.0;
    const double target = pv_target_from_rooftop(rooftop);
    EXPECT_NEAR(target, 920.0, 1e-9);
    Rng a(8), b(8);
    auto pv = assign_pv(energy, shape, target, a);
    auto pv2 = assign_pv(energy, shape, target, b);
    EXPECT_EQ(pv, pv2);
    double total = 0.0, last = 0.0;
    for (const auto& u : pv) {
        total += u.capacity_kw * energy_kwh(shape);
        last = std::max(last, u.capacity_kw * energy_kwh(shape));
        EXPECT_GE(u.ratio, 0.4);
        EXPECT_LE(u.ratio, 0.9);
    }
    EXPECT_GE(total, target);
    EXPECT_LT(total - target, last);
    std::vector<double> tiny{1.0};
    EXPECT_THROW(assign_pv(tiny, shape, 100.0, a), ScenarioError);
}

TEST(Scenario, StorageSizingAndSpread) {
    std::vector<double> shape(kStepsPerDay * 2, 0.0);
    for (int d = 0; d < 2; ++d)
        for (int k = 32; k < 72; ++k) shape[static_cast<std::size_t>(d * kStepsPerDay + k)] = 0.5;  // 5 kWh/day per kW
    std::vector<PvUnit> pv;
    for (std::size_t i = 0; i < 10; ++i) pv.push_back({i, 4.0, 0.5});  // 20 kWh/day
    StorageConfig fixed;
    fixed.size_min = fixed.size_max = 0.6;
    Rng rng(1);
    auto one = assign_storage(std::span(pv).first(1), shape, 100.0, fixed, rng);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_NEAR(one[0].capacity_kwh, 12.0, 1e-12);
    EXPECT_NEAR(one[0].max_power_kw(), 6.0, 1e-12);
    EXPECT_NEAR(one[0].charge_efficiency * one[0].discharge_efficiency, 0.86, 1e-12);
    EXPECT_NEAR(one[0].initial_kwh, 6.0, 1e-12);

    auto all = assign_storage(pv, shape, 100.0, StorageConfig{}, rng);
    EXPECT_EQ(all.size(), 10u);
    auto seventy = assign_storage(pv, shape, 70.0, StorageConfig{}, rng);
    EXPECT_EQ(seventy.size(), 7u);
    double total = 0.0;
    for (const auto& s : seventy) {
        total += s.capacity_kwh;
        EXPECT_GE(s.capacity_kwh, 0.4 * 20.0 - 1e-9);
        EXPECT_LE(s.capacity_kwh, 0.8 * 20.0 + 1e-9);
    }
    auto respread = assign_storage(pv, shape, 100.0, StorageConfig{}, rng, total);
    double total2 = 0.0;
    for (const auto& s : respread) total2 += s.capacity_kwh;
    EXPECT_NEAR(total2 / total, 1.0, 1e-3);
    EXPECT_THROW(assign_storage(std::span<const PvUnit>{}, shape, 50.0, StorageConfig{}, rng), ScenarioError);
}

TEST(Scenario, TariffPeakCentredAndEvTouShare) {
    std::vector<double> demand(kStepsPerDay * 3, 1.0);
    for (int d = 0; d < 3; ++d) demand[static_cast<std::size_t>(d * kStepsPerDay + 18 * 4 + 2)] = 5.0;  // 18:30
    std::vector<int> chargers(20, 0);
    for (int i = 0; i < 10; ++i) chargers[static_cast<std::size_t>(2 * i)] = 1;
    Rng rng(3);
    auto a = assign_tariffs(demand, TariffBook{}, chargers, rng);
    EXPECT_EQ(a.peak_hour, 18);
    int tou = 0;
    for (std::size_t i = 0; i < chargers.size(); ++i) {
        tou += a.ev_tou_consumer[i];
        if (a.ev_tou_consumer[i]) EXPECT_EQ(chargers[i], 1);
    }
    EXPECT_EQ(tou, 4);
    // 5 h peak centred at 18:30 -> 16:00 to 21:00, part-peak 15-16 and 21-24.
    const auto& r = a.residential;
    EXPECT_EQ(r.tiers[16 * 4 - 1], Tier::part_peak);
    EXPECT_EQ(r.tiers[16 * 4], Tier::peak);
    EXPECT_EQ(r.tiers[21 * 4 - 1], Tier::peak);
    EXPECT_EQ(r.tiers[21 * 4], Tier::part_peak);
    EXPECT_EQ(r.tiers[95], Tier::part_peak);
    EXPECT_EQ(r.tiers[15 * 4 - 1], Tier::off_peak);
    EXPECT_EQ(r.tiers[0], Tier::off_peak);

    std::vector<int> none(20, 0);
    auto b = assign_tariffs(demand, TariffBook{}, none, rng);
    for (bool f : b.ev_tou_consumer) EXPECT_FALSE(f);
}

TEST(Scenario, GenerationIsDeterministicAndMeetsTargets) {
    auto net = load_network_file(fixture("sub11.json"));
    auto cfg = test_config();
    auto lib = make_synthetic_library(net, cfg.horizon, cfg.library);
    auto a = generate_scenario(net, cfg, lib, 99);
    auto b = generate_scenario(net, cfg, lib, 99);
    EXPECT_EQ(scenario_to_json(a).dump(), scenario_to_json(b).dump());
    auto c = generate_scenario(net, cfg, lib, 100);
    EXPECT_NE(scenario_to_json(a).dump(), scenario_to_json(c).dump());

    double ev = 0.0, max_event = 0.0;
    for (const auto& e : a.ev_events) {
        ev += e.energy_kwh;
        max_event = std::max(max_event, e.energy_kwh);
    }
    EXPECT_GE(ev, a.ev_target_kwh);
    double pv = 0.0;
    for (const auto& u : a.pv) pv += u.capacity_kw * energy_kwh(a.pv_shape);
    EXPECT_GE(pv, a.pv_target_kwh);
    EXPECT_FALSE(a.storage.empty());
    for (const auto& f : a.flexible) EXPECT_DOUBLE_EQ(f.phi, 0.3);
    double added = 0.0;
    for (const auto& l : a.loads) added += l.added_thermal_kwh;
    EXPECT_GE(added, a.thermal_target_kwh);
}

TEST(Scenario, LibraryDirectoryRoundTrip) {
    auto net = load_network_file(fixture("sub11.json"));
    Horizon h{2, 10};
    LibraryConfig lc;
    lc.residential_profiles = 4;
    lc.commercial_profiles = 2;
    lc.thermal_profiles = 2;
    auto lib = make_synthetic_library(net, h, lc);
    const auto dir = std::filesystem::temp_directory_path() / "dergrid_lib_test";
    std::filesystem::remove_all(dir);
    write_library(dir, lib);
    auto back = load_library(dir, Horizon{2, 0});
    ASSERT_EQ(back.profiles.size(), lib.profiles.size());
    for (std::size_t i = 0; i < lib.profiles.size(); ++i) EXPECT_EQ(back.profiles[i].nonthermal_kw, lib.profiles[i].nonthermal_kw);
    EXPECT_EQ(back.pv_shape, lib.pv_shape);
    EXPECT_THROW(load_library(dir, Horizon{3, 0}), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(Scenario, ConfigValidation) {
    EXPECT_THROW(parse_scenario_config(nlohmann::json::parse(R"({"charger_kw": 0})")), ConfigError);
    EXPECT_THROW(parse_scenario_config(nlohmann::json::parse(R"({"tariffs": {"residential": {"peak": 0.1, "part_peak": 0.2}}})")),
                 ConfigError);
    auto c = parse_scenario_config(nlohmann::json::parse(
        R"({"year": 2030, "years": {"2030": {"ev_percent": 5}}, "flex_presets": {"enhanced": {"2030": 0.1}}, "flex_case": "enhanced"})"));
    EXPECT_DOUBLE_EQ(c.year_settings().ev_percent, 5.0);
    EXPECT_DOUBLE_EQ(c.phi(), 0.1);
    c.flex_case = "none";
    EXPECT_DOUBLE_EQ(c.phi(), 0.0);
}
