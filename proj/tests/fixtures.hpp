#pragma once

// Hand-built scenarios for controller tests.

#include <vector>

#include "dergrid/scenario.hpp"

namespace fixtures {

using namespace dergrid;

inline TariffSchedule flat_tariff(double price) {
    TariffSchedule s;
    s.spec = {"flat", price, price, price};
    s.tiers.fill(Tier::off_peak);
    return s;
}

/// Peak tier on steps [a, b) of every day, off-peak elsewhere.
inline TariffSchedule two_tier(double off, double peak, int a, int b) {
    TariffSchedule s;
    s.spec = {"two-tier", peak, off, off};
    s.tiers.fill(Tier::off_peak);
    for (int k = a; k < b; ++k) s.tiers[static_cast<std::size_t>(k)] = Tier::peak;
    return s;
}

/// `n` consumers with flat zero demand, no devices and a flat tariff.
inline Scenario blank(long days, std::size_t n = 1) {
    Scenario sc;
    sc.horizon = {days, 0};
    sc.ev_efficiency = 1.0;
    const auto T = static_cast<std::size_t>(sc.horizon.steps());
    for (std::size_t i = 0; i < n; ++i) {
        NodeLoad l;
        l.node = i + 1;
        l.fixed_kw.assign(T, 0.0);
        l.thermal_kw.assign(T, 0.0);
        l.power_factor = 0.95;
        sc.loads.push_back(l);
    }
    sc.pv_shape.assign(T, 0.0);
    sc.tariffs.residential = flat_tariff(0.2);
    sc.tariffs.commercial = flat_tariff(0.2);
    sc.tariffs.ev_tou = flat_tariff(0.1);
    sc.tariffs.ev_tou_consumer.assign(n, false);
    return sc;
}

inline StorageUnit storage(std::size_t consumer, double capacity, double eff = 1.0, double initial = -1.0) {
    StorageUnit s;
    s.consumer = consumer;
    s.capacity_kwh = capacity;
    s.c_rate = 0.5;
    s.charge_efficiency = eff;
    s.discharge_efficiency = eff;
    s.initial_kwh = initial < 0.0 ? 0.5 * capacity : initial;
    return s;
}

inline EvEvent ev(std::size_t consumer, long start, long end, double kwh, double cmax = 6.3) {
    EvEvent e;
    e.consumer = consumer;
    e.start = start;
    e.end = end;
    e.energy_kwh = kwh;
    e.c_max_kw = cmax;
    return e;
}

/// One node over two days with a two-tier price, a lossless storage unit and
/// an overnight EV. Loads and energies sit on a 0.5 kW grid.
inline Scenario foresight_fixture() {
    auto sc = blank(2);
    sc.tariffs.residential = two_tier(0.10, 0.40, 64, 84);
    auto& l = sc.loads[0];
    for (std::size_t t = 0; t < l.fixed_kw.size(); ++t) l.fixed_kw[t] = sc.tariffs.residential.tier_at(static_cast<long>(t)) == Tier::peak ? 2.0 : 1.0;
    sc.storage.push_back(storage(0, 4.0, 1.0, 2.0));
    sc.ev_events.push_back(ev(0, 72, 120, 6.0));
    return sc;
}

/// Generated-scenario settings with every device class present.
inline ScenarioConfig rich_config(long days) {
    ScenarioConfig c;
    c.horizon = {days, 0};
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

}  // namespace fixtures
