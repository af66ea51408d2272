#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "network.hpp"

namespace dergrid {

// ---------------------------------------------------------------------------
// Configuration

struct Horizon {
    long days = 14;
    long start_day = 0;  // zero-based day of year of step 0
    long steps() const { return days * kStepsPerDay; }
    bool operator==(const Horizon&) const = default;
};

struct EvSamplerConfig {
    double home_share = 0.75;
    double home_arrival_mean_h = 18.0;
    double home_arrival_sd_h = 1.5;
    double home_departure_mean_h = 7.5;  // next morning
    double home_departure_sd_h = 1.0;
    double work_arrival_mean_h = 8.5;
    double work_arrival_sd_h = 1.0;
    double work_departure_mean_h = 17.0;
    double work_departure_sd_h = 1.0;
    double energy_mean_kwh = 14.0;  // lognormal mean
    double energy_cv = 0.5;
    double daily_probability = 0.85;
    int max_resample = 50;
};

struct StorageConfig {
    double c_rate = 0.5;
    double round_trip = 0.86;
    double leakage = 1.0;  // fraction retained per step
    double initial_fraction = 0.5;
    double size_min = 0.40;  // x average daily PV energy
    double size_max = 0.80;
};

struct TariffSpec {
    std::string name;
    double peak = 0.0;
    double part_peak = 0.0;
    double off_peak = 0.0;
    double peak_hours = 5.0;
    double part_before_hours = 1.0;
    double part_after_hours = 3.0;
    bool operator==(const TariffSpec&) const = default;
};

struct TariffBook {
    TariffSpec residential{"residential", 0.50, 0.38, 0.30, 5.0, 1.0, 3.0};
    TariffSpec commercial{"commercial", 0.40, 0.28, 0.22, 5.0, 1.0, 3.0};
    TariffSpec ev_tou{"ev-tou", 0.48, 0.36, 0.18, 5.0, 1.0, 3.0};
    double ev_tou_share = 0.40;
};

/// Penetrations for one simulated year.
struct YearSettings {
    double ev_percent = 0.0;        // EV energy, % of network energy without EV and PV
    double pv_percent = 0.0;        // PV energy, % of network energy including EV
    double storage_spread_percent = 0.0;  // % of PV nodes with storage
    double residential_uplift_percent = 0.0;
    double commercial_uplift_percent = 0.0;
    double thermal_addition_percent = 0.0;  // added electric thermal energy, % of baseline
};

struct LibraryConfig {
    std::uint64_t seed = 2018;
    int residential_profiles = 40;
    int commercial_profiles = 16;
    int thermal_profiles = 12;
    double reference_peak_kw = 5.0;  // consumer size the thermal library represents
    std::string directory;           // delimited-text library; synthetic when empty
};

struct ScenarioConfig {
    Horizon horizon;
    int year = 2050;
    std::map<int, YearSettings> years;
    std::map<std::string, std::map<int, double>> flex_presets{{"none", {}}};
    std::string flex_case = "none";
    double charger_kw = 6.3;
    double pv_ratio_min = 0.40;
    double pv_ratio_max = 0.90;
    double load_match_tolerance = 0.10;
    bool load_match_fallback = false;
    double pf_min = 0.90;
    double pf_max = 0.95;
    double space_heating_efficiency = 3.0;
    double water_heating_efficiency = 2.5;
    double flex_umax_factor = 2.0;
    double residential_kw_per_charger = 12.2;
    std::optional<double> storage_spread_override;
    EvSamplerConfig ev;
    StorageConfig storage;
    TariffBook tariffs;
    LibraryConfig library;

    const YearSettings& year_settings() const {
        auto it = years.find(year);
        if (it == years.end()) throw ConfigError("no penetration entry for year " + std::to_string(year));
        return it->second;
    }

    double phi() const {
        auto it = flex_presets.find(flex_case);
        if (it == flex_presets.end()) throw ConfigError("unknown flexible-load case '" + flex_case + "'");
        if (it->second.empty()) return 0.0;
        auto y = it->second.find(year);
        if (y == it->second.end()) throw ConfigError("flexible case '" + flex_case + "' has no entry for " + std::to_string(year));
        return y->second;
    }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("bad value for '") + key + "'");
        }
    }
}

inline TariffSpec read_tariff(const nlohmann::json& j, TariffSpec t) {
    read_opt(j, "peak", t.peak);
    read_opt(j, "part_peak", t.part_peak);
    read_opt(j, "off_peak", t.off_peak);
    read_opt(j, "peak_hours", t.peak_hours);
    read_opt(j, "part_before_hours", t.part_before_hours);
    read_opt(j, "part_after_hours", t.part_after_hours);
    if (!(t.peak >= t.part_peak && t.part_peak >= t.off_peak && t.off_peak > 0.0))
        throw ConfigError("tariff '" + t.name + "' must satisfy peak >= part-peak >= off-peak > 0");
    if (t.peak_hours + t.part_before_hours + t.part_after_hours > 24.0 || t.peak_hours <= 0.0)
        throw ConfigError("tariff '" + t.name + "' windows do not fit in a day");
    return t;
}

}  // namespace detail

inline ScenarioConfig parse_scenario_config(const nlohmann::json& j) {
    using detail::read_opt;
    ScenarioConfig c;
    if (j.contains("horizon")) {
        read_opt(j["horizon"], "days", c.horizon.days);
        read_opt(j["horizon"], "start_day", c.horizon.start_day);
    }
    if (c.horizon.days < 1) throw ConfigError("horizon must cover at least one day");
    read_opt(j, "year", c.year);
    if (j.contains("years")) {
        for (const auto& [k, v] : j["years"].items()) {
            YearSettings y;
            read_opt(v, "ev_percent", y.ev_percent);
            read_opt(v, "pv_percent", y.pv_percent);
            read_opt(v, "storage_spread_percent", y.storage_spread_percent);
            read_opt(v, "residential_uplift_percent", y.residential_uplift_percent);
            read_opt(v, "commercial_uplift_percent", y.commercial_uplift_percent);
            read_opt(v, "thermal_addition_percent", y.thermal_addition_percent);
            if (y.ev_percent < 0 || y.pv_percent < 0 || y.storage_spread_percent < 0 || y.storage_spread_percent > 100 ||
                y.residential_uplift_percent < 0 || y.commercial_uplift_percent < 0 || y.thermal_addition_percent < 0)
                throw ConfigError("invalid penetration entry for year " + k);
            c.years[std::stoi(k)] = y;
        }
    }
    if (j.contains("flex_presets")) {
        for (const auto& [name, table] : j["flex_presets"].items()) {
            std::map<int, double> m;
            for (const auto& [yk, phi] : table.items()) {
                const double v = phi.get<double>();
                if (v < 0.0 || v > 1.0) throw ConfigError("flexible fraction outside [0,1]");
                m[std::stoi(yk)] = v;
            }
            c.flex_presets[name] = m;
        }
    }
    read_opt(j, "flex_case", c.flex_case);
    read_opt(j, "charger_kw", c.charger_kw);
    if (!(c.charger_kw > 0.0)) throw ConfigError("charger power must be positive");
    read_opt(j, "pv_ratio_min", c.pv_ratio_min);
    read_opt(j, "pv_ratio_max", c.pv_ratio_max);
    read_opt(j, "load_match_tolerance", c.load_match_tolerance);
    read_opt(j, "load_match_fallback", c.load_match_fallback);
    read_opt(j, "pf_min", c.pf_min);
    read_opt(j, "pf_max", c.pf_max);
    read_opt(j, "space_heating_efficiency", c.space_heating_efficiency);
    read_opt(j, "water_heating_efficiency", c.water_heating_efficiency);
    read_opt(j, "flex_umax_factor", c.flex_umax_factor);
    read_opt(j, "residential_kw_per_charger", c.residential_kw_per_charger);
    if (j.contains("storage_spread_override")) c.storage_spread_override = j["storage_spread_override"].get<double>();
    if (j.contains("ev")) {
        const auto& e = j["ev"];
        read_opt(e, "home_share", c.ev.home_share);
        read_opt(e, "home_arrival_mean_h", c.ev.home_arrival_mean_h);
        read_opt(e, "home_arrival_sd_h", c.ev.home_arrival_sd_h);
        read_opt(e, "home_departure_mean_h", c.ev.home_departure_mean_h);
        read_opt(e, "home_departure_sd_h", c.ev.home_departure_sd_h);
        read_opt(e, "work_arrival_mean_h", c.ev.work_arrival_mean_h);
        read_opt(e, "work_arrival_sd_h", c.ev.work_arrival_sd_h);
        read_opt(e, "work_departure_mean_h", c.ev.work_departure_mean_h);
        read_opt(e, "work_departure_sd_h", c.ev.work_departure_sd_h);
        read_opt(e, "energy_mean_kwh", c.ev.energy_mean_kwh);
        read_opt(e, "energy_cv", c.ev.energy_cv);
        read_opt(e, "daily_probability", c.ev.daily_probability);
        read_opt(e, "max_resample", c.ev.max_resample);
    }
    if (j.contains("storage")) {
        const auto& s = j["storage"];
        read_opt(s, "c_rate", c.storage.c_rate);
        read_opt(s, "round_trip", c.storage.round_trip);
        read_opt(s, "leakage", c.storage.leakage);
        read_opt(s, "initial_fraction", c.storage.initial_fraction);
        read_opt(s, "size_min", c.storage.size_min);
        read_opt(s, "size_max", c.storage.size_max);
    }
    if (j.contains("tariffs")) {
        const auto& t = j["tariffs"];
        if (t.contains("residential")) c.tariffs.residential = detail::read_tariff(t["residential"], c.tariffs.residential);
        if (t.contains("commercial")) c.tariffs.commercial = detail::read_tariff(t["commercial"], c.tariffs.commercial);
        if (t.contains("ev_tou")) c.tariffs.ev_tou = detail::read_tariff(t["ev_tou"], c.tariffs.ev_tou);
        read_opt(t, "ev_tou_share", c.tariffs.ev_tou_share);
    }
    if (j.contains("library")) {
        const auto& l = j["library"];
        read_opt(l, "seed", c.library.seed);
        read_opt(l, "residential_profiles", c.library.residential_profiles);
        read_opt(l, "commercial_profiles", c.library.commercial_profiles);
        read_opt(l, "thermal_profiles", c.library.thermal_profiles);
        read_opt(l, "reference_peak_kw", c.library.reference_peak_kw);
        read_opt(l, "directory", c.library.directory);
    }
    if (c.years.empty()) c.years[c.year] = YearSettings{};
    return c;
}

// ---------------------------------------------------------------------------
// Profile library

struct LibraryProfile {
    std::string id;
    ConsumerClass cls = ConsumerClass::residential;
    std::vector<double> nonthermal_kw;
    std::vector<double> thermal_kw;  // existing electric heating/cooling
    bool space_heating = false;
    bool water_heating = false;
};

enum class ThermalKind : std::uint8_t { space_heating, water_heating };

struct ThermalProfile {
    std::string id;
    ThermalKind kind = ThermalKind::space_heating;
    std::vector<double> thermal_kw;  // thermal demand of a reference consumer
};

struct ProfileLibrary {
    std::vector<LibraryProfile> profiles;
    std::vector<ThermalProfile> thermal;
    std::vector<double> pv_shape;  // kW per kW of installed capacity
    double reference_peak_kw = 5.0;
};

/// Mean over days of the daily maximum.
inline double average_daily_peak(std::span<const double> series) {
    const std::size_t days = series.size() / kStepsPerDay;
    if (days == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t d = 0; d < days; ++d) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < kStepsPerDay; ++k) mx = std::max(mx, series[d * kStepsPerDay + k]);
        sum += mx;
    }
    return sum / static_cast<double>(days);
}

inline double average_daily_peak(const LibraryProfile& p) {
    std::vector<double> total(p.nonthermal_kw.size());
    for (std::size_t t = 0; t < total.size(); ++t) total[t] = p.nonthermal_kw[t] + p.thermal_kw[t];
    return average_daily_peak(total);
}

inline double energy_kwh(std::span<const double> kw) {
    return std::accumulate(kw.begin(), kw.end(), 0.0) * kStepHours;
}

namespace detail {

// Outdoor temperature model (deg C) used by the synthetic archetypes.
inline double outdoor_temperature(long day_of_year, double hour, double day_offset) {
    const double seasonal = 15.0 - 11.0 * std::cos(6.283185307179586 * (static_cast<double>(day_of_year % 365) - 15.0) / 365.0);
    const double diurnal = -4.0 * std::cos(6.283185307179586 * (hour - 3.0) / 24.0);
    return seasonal + diurnal + day_offset;
}

inline double bump(double h, double center, double width) {
    const double d = (h - center) / width;
    return std::exp(-0.5 * d * d);
}

}  // namespace detail

/// Deterministic synthetic archetype library sized to the feeder's consumer peaks.
inline ProfileLibrary make_synthetic_library(const NetworkModel& network, const Horizon& horizon, const LibraryConfig& cfg) {
    Rng rng(cfg.seed);
    ProfileLibrary lib;
    lib.reference_peak_kw = cfg.reference_peak_kw;
    const long T = horizon.steps();

    std::vector<double> day_offset(static_cast<std::size_t>(horizon.days)), clearness(static_cast<std::size_t>(horizon.days));
    for (long d = 0; d < horizon.days; ++d) {
        day_offset[static_cast<std::size_t>(d)] = 3.0 * standard_normal(rng);
        clearness[static_cast<std::size_t>(d)] = uniform(rng, 0.35, 1.0);
    }
    auto temp = [&](long t) {
        const long d = t / kStepsPerDay;
        const double h = static_cast<double>(t % kStepsPerDay) / kStepsPerHour;
        return detail::outdoor_temperature(horizon.start_day + d, h, day_offset[static_cast<std::size_t>(d)]);
    };

    auto class_range = [&](ConsumerClass cls) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (auto n : network.consumer_nodes)
            if (network.nodes[n].consumer_class == cls) {
                lo = std::min(lo, network.nodes[n].peak_load);
                hi = std::max(hi, network.nodes[n].peak_load);
            }
        if (hi == 0.0) return std::pair{0.0, 0.0};
        return std::pair{lo * 0.85, hi * 1.15};
    };

    auto make_profile = [&](ConsumerClass cls, int idx, double target_peak) {
        LibraryProfile p;
        p.cls = cls;
        p.id = std::string(cls == ConsumerClass::residential ? "res" : "com") + std::to_string(idx);
        p.nonthermal_kw.resize(static_cast<std::size_t>(T));
        p.thermal_kw.resize(static_cast<std::size_t>(T));
        p.space_heating = uniform(rng, 0, 1) < (cls == ConsumerClass::residential ? 0.25 : 0.35);
        p.water_heating = uniform(rng, 0, 1) < 0.3;
        const double shift = uniform(rng, -1.0, 1.0);
        const double heat_scale = uniform(rng, 0.6, 1.4);
        std::vector<double> daily(static_cast<std::size_t>(horizon.days));
        for (auto& v : daily) v = uniform(rng, 0.85, 1.15);
        for (long t = 0; t < T; ++t) {
            const long d = t / kStepsPerDay;
            const double h = static_cast<double>(t % kStepsPerDay) / kStepsPerHour;
            const bool weekend = ((horizon.start_day + d) % 7) >= 5;
            const double noise = uniform(rng, 0.9, 1.1);
            double base, occupancy;
            if (cls == ConsumerClass::residential) {
                base = 0.30 + 0.45 * detail::bump(h, 7.5 + shift, 1.2) + 1.0 * detail::bump(h, 19.0 + shift, 2.0);
                occupancy = 0.4 + 0.6 * (detail::bump(h, 7.0 + shift, 1.5) + detail::bump(h, 20.0 + shift, 2.5));
            } else {
                const bool open = h >= 8.0 + shift * 0.5 && h < 18.0 + shift * 0.5 && !weekend;
                base = open ? 1.0 : 0.35;
                occupancy = open ? 1.0 : 0.2;
            }
            const double tc = temp(t);
            const double hdd = positive_part(17.0 - tc), cdd = positive_part(tc - 24.0);
            double thermal = 0.03 * cdd * occupancy;
            if (p.space_heating) thermal += 0.05 * heat_scale * hdd * occupancy;
            if (p.water_heating) thermal += 0.25 * (detail::bump(h, 7.0 + shift, 1.0) + detail::bump(h, 20.5 + shift, 1.5));
            p.nonthermal_kw[static_cast<std::size_t>(t)] = base * noise * daily[static_cast<std::size_t>(d)];
            p.thermal_kw[static_cast<std::size_t>(t)] = thermal * noise;
        }
        const double pk = average_daily_peak(p);
        const double s = target_peak / pk;
        for (auto& v : p.nonthermal_kw) v *= s;
        for (auto& v : p.thermal_kw) v *= s;
        return p;
    };

    for (auto cls : {ConsumerClass::residential, ConsumerClass::commercial}) {
        const auto [lo, hi] = class_range(cls);
        if (hi == 0.0) continue;
        const int count = cls == ConsumerClass::residential ? cfg.residential_profiles : cfg.commercial_profiles;
        for (int i = 0; i < count; ++i) {
            // Evenly spread in log space with jitter so every node has neighbours within 10%.
            const double frac = (static_cast<double>(i) + uniform(rng, 0.0, 1.0)) / count;
            const double peak = lo * std::pow(hi / lo, frac);
            lib.profiles.push_back(make_profile(cls, i, peak));
        }
    }

    for (int i = 0; i < cfg.thermal_profiles; ++i) {
        ThermalProfile tp;
        tp.kind = i % 2 == 0 ? ThermalKind::space_heating : ThermalKind::water_heating;
        tp.id = std::string(tp.kind == ThermalKind::space_heating ? "space" : "water") + std::to_string(i / 2);
        tp.thermal_kw.resize(static_cast<std::size_t>(T));
        const double scale = uniform(rng, 0.7, 1.3) * cfg.reference_peak_kw / 5.0;
        const double shift = uniform(rng, -1.0, 1.0);
        for (long t = 0; t < T; ++t) {
            const double h = static_cast<double>(t % kStepsPerDay) / kStepsPerHour;
            double v;
            if (tp.kind == ThermalKind::space_heating) {
                const double occ = 0.5 + 0.8 * (detail::bump(h, 7.0 + shift, 1.5) + detail::bump(h, 19.5 + shift, 2.5));
                v = 0.35 * positive_part(17.0 - temp(t)) * occ;
            } else {
                v = 0.3 + 2.2 * detail::bump(h, 7.0 + shift, 1.0) + 2.6 * detail::bump(h, 20.0 + shift, 1.5);
            }
            tp.thermal_kw[static_cast<std::size_t>(t)] = v * scale;
        }
        lib.thermal.push_back(std::move(tp));
    }

    lib.pv_shape.resize(static_cast<std::size_t>(T));
    for (long t = 0; t < T; ++t) {
        const long d = t / kStepsPerDay;
        const double h = (static_cast<double>(t % kStepsPerDay) + 0.5) / kStepsPerHour;
        const double doy = static_cast<double>((horizon.start_day + d) % 365);
        const double daylen = 12.0 - 2.5 * std::cos(6.283185307179586 * (doy + 10.0) / 365.0);
        const double rise = 12.5 - daylen / 2, set = 12.5 + daylen / 2;
        double v = 0.0;
        if (h > rise && h < set) v = std::sin(3.141592653589793 * (h - rise) / daylen);
        lib.pv_shape[static_cast<std::size_t>(t)] = 0.85 * v * clearness[static_cast<std::size_t>(d)];
    }
    return lib;
}

namespace detail {

inline std::vector<std::vector<double>> read_columns(const std::filesystem::path& p, std::size_t ncol) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open library file " + p.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> cols(ncol);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t c = 0; c < ncol; ++c) {
            if (!std::getline(ss, cell, ',')) throw ConfigError("short row in " + p.string());
            cols[c].push_back(std::stod(cell));
        }
    }
    return cols;
}

}  // namespace detail

/// Loads a library directory: library.json index plus one CSV per series.
inline ProfileLibrary load_library(const std::filesystem::path& dir, const Horizon& horizon) {
    std::ifstream in(dir / "library.json");
    if (!in) throw ConfigError("library index missing in " + dir.string());
    nlohmann::json idx;
    try {
        in >> idx;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad library index: ") + e.what());
    }
    ProfileLibrary lib;
    lib.reference_peak_kw = idx.value("reference_peak_kw", 5.0);
    const auto first = static_cast<std::size_t>(horizon.start_day * kStepsPerDay);
    const auto T = static_cast<std::size_t>(horizon.steps());
    auto window = [&](std::vector<double> v, const std::string& what) {
        if (v.size() < first + T) throw ConfigError(what + " is shorter than the horizon");
        return std::vector<double>(v.begin() + static_cast<long>(first), v.begin() + static_cast<long>(first + T));
    };
    for (const auto& jp : idx.at("profiles")) {
        LibraryProfile p;
        p.id = jp.at("id").get<std::string>();
        p.cls = consumer_class_from(jp.at("class").get<std::string>());
        p.space_heating = jp.value("space_heating", false);
        p.water_heating = jp.value("water_heating", false);
        auto cols = detail::read_columns(dir / jp.at("file").get<std::string>(), 2);
        p.nonthermal_kw = window(std::move(cols[0]), p.id);
        p.thermal_kw = window(std::move(cols[1]), p.id);
        lib.profiles.push_back(std::move(p));
    }
    for (const auto& jt : idx.value("thermal", nlohmann::json::array())) {
        ThermalProfile t;
        t.id = jt.at("id").get<std::string>();
        t.kind = jt.at("kind").get<std::string>() == "water_heating" ? ThermalKind::water_heating : ThermalKind::space_heating;
        auto cols = detail::read_columns(dir / jt.at("file").get<std::string>(), 1);
        t.thermal_kw = window(std::move(cols[0]), t.id);
        lib.thermal.push_back(std::move(t));
    }
    auto pv = detail::read_columns(dir / idx.value("pv_shape", std::string("pv_shape.csv")), 1);
    lib.pv_shape = window(std::move(pv[0]), "pv shape");
    return lib;
}

inline void write_library(const std::filesystem::path& dir, const ProfileLibrary& lib) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json idx;
    idx["reference_peak_kw"] = lib.reference_peak_kw;
    idx["profiles"] = nlohmann::ordered_json::array();
    for (const auto& p : lib.profiles) {
        const std::string file = p.id + ".csv";
        std::ofstream os(dir / file);
        os << "nonthermal_kw,thermal_kw\n";
        for (std::size_t t = 0; t < p.nonthermal_kw.size(); ++t)
            os << format_double(p.nonthermal_kw[t]) << "," << format_double(p.thermal_kw[t]) << "\n";
        idx["profiles"].push_back({{"id", p.id}, {"class", std::string(to_string(p.cls))}, {"file", file},
                                   {"space_heating", p.space_heating}, {"water_heating", p.water_heating}});
    }
    idx["thermal"] = nlohmann::ordered_json::array();
    for (const auto& t : lib.thermal) {
        const std::string file = "thermal_" + t.id + ".csv";
        std::ofstream os(dir / file);
        os << "thermal_kw\n";
        for (double v : t.thermal_kw) os << format_double(v) << "\n";
        idx["thermal"].push_back({{"id", t.id},
                                  {"kind", t.kind == ThermalKind::water_heating ? "water_heating" : "space_heating"},
                                  {"file", file}});
    }
    std::ofstream pv(dir / "pv_shape.csv");
    pv << "kw_per_kw\n";
    for (double v : lib.pv_shape) pv << format_double(v) << "\n";
    idx["pv_shape"] = "pv_shape.csv";
    std::ofstream(dir / "library.json") << idx.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Scenario entities

/// Uncontrolled demand of one consumer node. Flexible thermal load is kept
/// separate from the rest.
struct NodeLoad {
    std::size_t node = 0;  // network node index
    ConsumerClass cls = ConsumerClass::residential;
    std::string profile_id;
    std::vector<double> fixed_kw;    // non-thermal
    std::vector<double> thermal_kw;  // flexible base u_base
    double power_factor = 1.0;
    bool space_heating = false;
    bool water_heating = false;
    double added_thermal_kwh = 0.0;

    double energy() const { return energy_kwh(fixed_kw) + energy_kwh(thermal_kw); }
    double demand(std::size_t t) const { return fixed_kw[t] + thermal_kw[t]; }
    double reactive(std::size_t t) const {
        return demand(t) * std::tan(std::acos(power_factor));
    }
};

enum class EvLocation : std::uint8_t { home, work };

struct EvEvent {
    std::size_t consumer = 0;  // index into Scenario::loads
    int charger = 0;
    long start = 0;  // first step
    long end = 0;    // one past the last step
    double energy_kwh = 0.0;
    EvLocation location = EvLocation::home;
    double c_max_kw = 6.3;
    bool operator==(const EvEvent&) const = default;
};

struct PvUnit {
    std::size_t consumer = 0;
    double capacity_kw = 0.0;
    double ratio = 0.0;  // PV energy over node energy
    bool operator==(const PvUnit&) const = default;
};

struct StorageUnit {
    std::size_t consumer = 0;
    double capacity_kwh = 0.0;
    double min_kwh = 0.0;
    double c_rate = 0.5;
    double charge_efficiency = 1.0;
    double discharge_efficiency = 1.0;
    double leakage = 1.0;
    double initial_kwh = 0.0;

    double max_power_kw() const { return c_rate * capacity_kwh; }
    bool operator==(const StorageUnit&) const = default;
};

struct FlexibleSpec {
    std::size_t consumer = 0;
    double phi = 0.0;
    double u_max_kw = 0.0;
    bool operator==(const FlexibleSpec&) const = default;
};

enum class Tier : std::uint8_t { off_peak = 0, part_peak = 1, peak = 2 };

/// A tariff with its daily tier windows resolved to the 96 steps of a day.
struct TariffSchedule {
    TariffSpec spec;
    std::array<Tier, kStepsPerDay> tiers{};

    double price(Tier t) const {
        switch (t) {
        case Tier::peak: return spec.peak;
        case Tier::part_peak: return spec.part_peak;
        default: return spec.off_peak;
        }
    }
    Tier tier_at(long step) const { return tiers[static_cast<std::size_t>(step % kStepsPerDay)]; }
    double price_at(long step) const { return price(tier_at(step)); }
    bool operator==(const TariffSchedule&) const = default;
};

inline TariffSchedule resolve_tariff(const TariffSpec& spec, double peak_center_hour) {
    TariffSchedule s;
    s.spec = spec;
    const double start = peak_center_hour - spec.peak_hours / 2.0;
    auto in_range = [](double h, double a, double len) {
        double rel = std::fmod(h - a, 24.0);
        if (rel < 0) rel += 24.0;
        return rel < len - 1e-9;
    };
    for (int k = 0; k < kStepsPerDay; ++k) {
        const double h = static_cast<double>(k) / kStepsPerHour;
        Tier t = Tier::off_peak;
        if (in_range(h, start, spec.peak_hours))
            t = Tier::peak;
        else if (in_range(h, start - spec.part_before_hours, spec.part_before_hours) ||
                 in_range(h, start + spec.peak_hours, spec.part_after_hours))
            t = Tier::part_peak;
        s.tiers[static_cast<std::size_t>(k)] = t;
    }
    return s;
}

struct TariffAssignment {
    int peak_hour = 18;  // most frequent network peak hour (peak window centred on its middle)
    TariffSchedule residential;
    TariffSchedule commercial;
    TariffSchedule ev_tou;
    std::vector<bool> ev_tou_consumer;  // per consumer
};

struct Scenario {
    std::uint64_t seed = 0;
    Horizon horizon;
    int year = 0;
    double charger_kw = 6.3;
    double ev_efficiency = 1.0;  // charging efficiency shared with storage
    std::vector<NodeLoad> loads;  // one per consumer node, network order
    std::vector<double> pv_shape;
    std::vector<PvUnit> pv;
    std::vector<StorageUnit> storage;
    std::vector<EvEvent> ev_events;
    std::vector<FlexibleSpec> flexible;
    TariffAssignment tariffs;
    double ev_target_kwh = 0.0;
    double pv_target_kwh = 0.0;
    double thermal_target_kwh = 0.0;

    long steps() const { return horizon.steps(); }

    const TariffSchedule& class_tariff(std::size_t consumer) const {
        return loads[consumer].cls == ConsumerClass::commercial ? tariffs.commercial : tariffs.residential;
    }
    bool ev_tou(std::size_t consumer) const { return tariffs.ev_tou_consumer[consumer]; }

    double pv_kw(std::size_t consumer, long t) const {
        double kw = 0.0;
        for (const auto& u : pv)
            if (u.consumer == consumer) kw += u.capacity_kw * pv_shape[static_cast<std::size_t>(t)];
        return kw;
    }
};

// ---------------------------------------------------------------------------
// Operations

/// Picks a library profile within tolerance of each consumer's average daily
/// peak and rescales it to match exactly.
inline std::vector<NodeLoad> synthesize_baseline_loads(const NetworkModel& network, const ProfileLibrary& library, Rng& rng,
                                                       double tolerance = 0.10, bool fallback = false, double pf_min = 0.9,
                                                       double pf_max = 0.95) {
    std::vector<NodeLoad> out;
    for (auto n : network.consumer_nodes) {
        const auto& node = network.nodes[n];
        std::vector<std::size_t> cand;
        std::optional<std::size_t> nearest;
        double best = std::numeric_limits<double>::infinity();
        std::vector<double> peaks(library.profiles.size());
        for (std::size_t i = 0; i < library.profiles.size(); ++i) {
            const auto& p = library.profiles[i];
            if (p.cls != node.consumer_class) continue;
            peaks[i] = average_daily_peak(p);
            const double rel = std::abs(peaks[i] / node.peak_load - 1.0);
            if (rel <= tolerance + 1e-12) cand.push_back(i);
            if (rel < best) {
                best = rel;
                nearest = i;
            }
        }
        if (cand.empty()) {
            if (!fallback || !nearest)
                throw ScenarioError("no " + std::string(to_string(node.consumer_class)) + " library profile within " +
                                    format_double(tolerance * 100) + "% of peak for node " + network.node_label(n));
            cand.push_back(*nearest);
        }
        const auto pick = cand[uniform_index(rng, cand.size())];
        const auto& p = library.profiles[pick];
        const double s = node.peak_load / peaks[pick];
        NodeLoad l;
        l.node = n;
        l.cls = p.cls;
        l.profile_id = p.id;
        l.fixed_kw = p.nonthermal_kw;
        l.thermal_kw = p.thermal_kw;
        for (auto& v : l.fixed_kw) v *= s;
        for (auto& v : l.thermal_kw) v *= s;
        l.space_heating = p.space_heating;
        l.water_heating = p.water_heating;
        l.power_factor = uniform(rng, pf_min, pf_max);
        out.push_back(std::move(l));
    }
    return out;
}

struct ElectrificationPlan {
    double residential_uplift_percent = 0.0;
    double commercial_uplift_percent = 0.0;
    double thermal_target_kwh = 0.0;  // added electric energy from thermal conversions
    double space_heating_efficiency = 3.0;
    double water_heating_efficiency = 2.5;
};

inline std::vector<double> thermal_to_electric(std::span<const double> thermal_kw, double efficiency) {
    if (!(efficiency > 0.0)) throw ConfigError("appliance efficiency must be positive");
    std::vector<double> e(thermal_kw.begin(), thermal_kw.end());
    for (auto& v : e) v /= efficiency;
    return e;
}

/// Uniform non-thermal uplift, then thermal appliance conversions on random
/// consumers until the added electric energy first reaches the target.
inline void apply_electrification(std::vector<NodeLoad>& loads, const ElectrificationPlan& plan, const ProfileLibrary& library,
                                  const NetworkModel& network, Rng& rng) {
    for (auto& l : loads) {
        const double up = l.cls == ConsumerClass::commercial ? plan.commercial_uplift_percent : plan.residential_uplift_percent;
        for (auto& v : l.fixed_kw) v *= 1.0 + up / 100.0;
    }
    if (plan.thermal_target_kwh <= 0.0) return;
    std::vector<std::size_t> space, water;
    for (std::size_t i = 0; i < library.thermal.size(); ++i)
        (library.thermal[i].kind == ThermalKind::space_heating ? space : water).push_back(i);
    double added = 0.0;
    while (added < plan.thermal_target_kwh) {
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < loads.size(); ++i)
            if ((!loads[i].space_heating && !space.empty()) || (!loads[i].water_heating && !water.empty())) eligible.push_back(i);
        if (eligible.empty()) throw ScenarioError("electrification target unreachable: no eligible consumers remain");
        auto& l = loads[eligible[uniform_index(rng, eligible.size())]];
        std::vector<ThermalKind> kinds;
        if (!l.space_heating && !space.empty()) kinds.push_back(ThermalKind::space_heating);
        if (!l.water_heating && !water.empty()) kinds.push_back(ThermalKind::water_heating);
        const auto kind = kinds[uniform_index(rng, kinds.size())];
        const auto& pool = kind == ThermalKind::space_heating ? space : water;
        const auto& prof = library.thermal[pool[uniform_index(rng, pool.size())]];
        auto elec = thermal_to_electric(prof.thermal_kw, kind == ThermalKind::space_heating ? plan.space_heating_efficiency
                                                                                            : plan.water_heating_efficiency);
        const double size = network.nodes[l.node].peak_load / library.reference_peak_kw;
        for (std::size_t t = 0; t < l.thermal_kw.size(); ++t) l.thermal_kw[t] += size * elec[t];
        const double e = size * energy_kwh(elec);
        l.added_thermal_kwh += e;
        added += e;
        (kind == ThermalKind::space_heating ? l.space_heating : l.water_heating) = true;
    }
}

namespace detail {

inline double clipped_normal(Rng& rng, double mean, double sd, double lo, double hi) {
    return std::clamp(mean + sd * standard_normal(rng), std::max(lo, mean - 3 * sd), std::min(hi, mean + 3 * sd));
}

inline long to_step(double hours) { return std::lround(hours * kStepsPerHour); }

}  // namespace detail

/// Lognormal energy draw with the configured mean and coefficient of variation.
inline double sample_ev_energy(const EvSamplerConfig& c, Rng& rng) {
    const double s2 = std::log(1.0 + c.energy_cv * c.energy_cv);
    const double mu = std::log(c.energy_mean_kwh) - s2 / 2.0;
    return std::exp(mu + std::sqrt(s2) * standard_normal(rng));
}

/// Samples one vehicle's charging sessions over the horizon. Events are not yet
/// bound to a node. Sessions running past the horizon end are dropped.
inline std::vector<EvEvent> generate_ev_events(const EvSamplerConfig& c, EvLocation where, const Horizon& horizon,
                                               double charger_kw, double charge_efficiency, Rng& rng) {
    if (!(c.energy_mean_kwh > 0.0) || c.energy_cv < 0.0) throw ConfigError("invalid EV energy distribution");
    std::vector<EvEvent> out;
    const long T = horizon.steps();
    long last_end = 0;
    for (long d = 0; d < horizon.days; ++d) {
        if (uniform(rng, 0.0, 1.0) >= c.daily_probability) continue;
        EvEvent e;
        e.location = where;
        e.c_max_kw = charger_kw;
        const long day0 = d * kStepsPerDay;
        bool ok = false;
        for (int attempt = 0; attempt < c.max_resample && !ok; ++attempt) {
            if (where == EvLocation::home) {
                const double arr = detail::clipped_normal(rng, c.home_arrival_mean_h, c.home_arrival_sd_h, 12.0, 23.75);
                const double dep = detail::clipped_normal(rng, c.home_departure_mean_h, c.home_departure_sd_h, 3.0, 11.75);
                e.start = day0 + detail::to_step(arr);
                e.end = day0 + kStepsPerDay + detail::to_step(dep);
            } else {
                const double arr = detail::clipped_normal(rng, c.work_arrival_mean_h, c.work_arrival_sd_h, 5.0, 12.0);
                const double dep = detail::clipped_normal(rng, c.work_departure_mean_h, c.work_departure_sd_h, 12.25, 22.0);
                e.start = day0 + detail::to_step(arr);
                e.end = day0 + detail::to_step(dep);
            }
            e.energy_kwh = sample_ev_energy(c, rng);
            const double cap = static_cast<double>(e.end - e.start) * kStepHours * charger_kw * charge_efficiency;
            ok = e.end > e.start && e.energy_kwh <= cap;
        }
        if (!ok) throw ScenarioError("EV sampler cannot produce a feasible charging window");
        if (e.end > T) continue;
        if (e.start < last_end) e.start = last_end;
        if (static_cast<double>(e.end - e.start) * kStepHours * charger_kw * charge_efficiency < e.energy_kwh) continue;
        last_end = e.end;
        out.push_back(e);
    }
    return out;
}

struct EvAssignment {
    std::vector<EvEvent> events;
    std::vector<int> chargers_per_consumer;
    double total_energy_kwh = 0.0;
};

/// Commercial consumer drawn with probability proportional to peak load.
inline std::size_t pick_by_peak(std::span<const std::size_t> candidates, std::span<const double> peaks, Rng& rng) {
    double total = 0.0;
    for (auto c : candidates) total += peaks[c];
    double r = uniform(rng, 0.0, total);
    for (auto c : candidates) {
        r -= peaks[c];
        if (r < 0.0) return c;
    }
    return candidates.back();
}

inline int residential_charger_cap(double peak_kw, double kw_per_charger = 12.2) {
    return static_cast<int>(std::floor(peak_kw / kw_per_charger + 1e-12));
}

/// Adds vehicles until the total EV energy first reaches the target.
inline EvAssignment assign_evs(const NetworkModel& network, std::span<const NodeLoad> loads, const EvSamplerConfig& sampler,
                               const Horizon& horizon, double charger_kw, double charge_efficiency, double target_kwh, Rng& rng,
                               double kw_per_charger = 12.2) {
    EvAssignment a;
    a.chargers_per_consumer.assign(loads.size(), 0);
    if (target_kwh <= 0.0) return a;
    std::vector<double> peaks(loads.size());
    std::vector<std::size_t> commercial;
    for (std::size_t i = 0; i < loads.size(); ++i) {
        peaks[i] = network.nodes[loads[i].node].peak_load;
        if (loads[i].cls == ConsumerClass::commercial) commercial.push_back(i);
    }
    int empty_draws = 0;
    while (a.total_energy_kwh < target_kwh) {
        std::vector<std::size_t> homes;
        for (std::size_t i = 0; i < loads.size(); ++i)
            if (loads[i].cls == ConsumerClass::residential &&
                a.chargers_per_consumer[i] < residential_charger_cap(peaks[i], kw_per_charger))
                homes.push_back(i);
        bool home = uniform(rng, 0.0, 1.0) < sampler.home_share;
        if (home && homes.empty()) home = false;
        if (!home && commercial.empty()) home = true;
        if (home && homes.empty()) throw ScenarioError("EV energy target unreachable under charger caps");
        const std::size_t who = home ? homes[uniform_index(rng, homes.size())] : pick_by_peak(commercial, peaks, rng);
        auto evs = generate_ev_events(sampler, home ? EvLocation::home : EvLocation::work, horizon, charger_kw,
                                      charge_efficiency, rng);
        if (evs.empty()) {
            if (++empty_draws > 1000) throw ScenarioError("EV sampler keeps producing empty schedules");
            continue;
        }
        const int charger = a.chargers_per_consumer[who]++;
        for (auto& e : evs) {
            e.consumer = who;
            e.charger = charger;
            a.total_energy_kwh += e.energy_kwh;
            a.events.push_back(e);
        }
    }
    return a;
}

/// Random PV placement: each picked consumer gets PV sized to a uniform share
/// of its own energy until the network total first reaches the target.
inline std::vector<PvUnit> assign_pv(std::span<const double> consumer_energy_kwh, std::span<const double> pv_shape,
                                     double target_kwh, Rng& rng, double ratio_min = 0.40, double ratio_max = 0.90) {
    std::vector<PvUnit> out;
    if (target_kwh <= 0.0) return out;
    const double shape_kwh = energy_kwh(pv_shape);
    if (!(shape_kwh > 0.0)) throw ScenarioError("PV shape produces no energy");
    std::vector<std::size_t> order(consumer_energy_kwh.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    for (auto c : order) {
        if (total >= target_kwh) break;
        PvUnit u;
        u.consumer = c;
        u.ratio = uniform(rng, ratio_min, ratio_max);
        u.capacity_kw = u.ratio * consumer_energy_kwh[c] / shape_kwh;
        total += u.capacity_kw * shape_kwh;
        out.push_back(u);
    }
    if (total < target_kwh) throw ScenarioError("PV target unreachable: every consumer already has PV");
    std::sort(out.begin(), out.end(), [](const PvUnit& a, const PvUnit& b) { return a.consumer < b.consumer; });
    return out;
}

inline double pv_target_from_rooftop(double rooftop_potential_kwh, double share = 0.23) { return share * rooftop_potential_kwh; }

/// Storage on ceil(spread% x |PV nodes|) uniformly chosen PV nodes. When
/// `total_capacity_kwh` is given the draws are rescaled to that network total.
inline std::vector<StorageUnit> assign_storage(std::span<const PvUnit> pv, std::span<const double> pv_shape, double spread_percent,
                                               const StorageConfig& cfg, Rng& rng,
                                               std::optional<double> total_capacity_kwh = std::nullopt) {
    if (pv.empty()) throw ScenarioError("storage requires PV nodes");
    if (!(spread_percent > 0.0) || spread_percent > 100.0) throw ConfigError("storage spread must be in (0, 100]");
    const auto k = static_cast<std::size_t>(std::ceil(spread_percent / 100.0 * static_cast<double>(pv.size()) - 1e-9));
    std::vector<std::size_t> order(pv.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    order.resize(k);
    std::sort(order.begin(), order.end());
    const double days = static_cast<double>(pv_shape.size()) / kStepsPerDay;
    const double shape_daily = energy_kwh(pv_shape) / days;
    const double eta = std::sqrt(cfg.round_trip);
    std::vector<StorageUnit> out;
    for (auto i : order) {
        StorageUnit s;
        s.consumer = pv[i].consumer;
        s.capacity_kwh = uniform(rng, cfg.size_min, cfg.size_max) * pv[i].capacity_kw * shape_daily;
        s.c_rate = cfg.c_rate;
        s.charge_efficiency = eta;
        s.discharge_efficiency = eta;
        s.leakage = cfg.leakage;
        out.push_back(s);
    }
    if (total_capacity_kwh) {
        double sum = 0.0;
        for (const auto& s : out) sum += s.capacity_kwh;
        for (auto& s : out) s.capacity_kwh *= *total_capacity_kwh / sum;
    }
    for (auto& s : out) s.initial_kwh = cfg.initial_fraction * s.capacity_kwh;
    return out;
}

/// Hour (0-23) in which the total network demand most often peaks; ties go to the earliest hour.
inline int most_frequent_peak_hour(std::span<const double> network_kw) {
    std::array<int, 24> count{};
    const std::size_t days = network_kw.size() / kStepsPerDay;
    for (std::size_t d = 0; d < days; ++d) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < kStepsPerDay; ++k)
            if (network_kw[d * kStepsPerDay + k] > network_kw[d * kStepsPerDay + best]) best = k;
        ++count[best / kStepsPerHour];
    }
    return static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
}

/// Class tariffs with the peak window centred on the middle of the most
/// frequent peak hour, and EV-TOU pricing on a random share of EV owners.
inline TariffAssignment assign_tariffs(std::span<const double> baseline_network_kw, const TariffBook& book,
                                       std::span<const int> chargers_per_consumer, Rng& rng) {
    TariffAssignment a;
    a.peak_hour = most_frequent_peak_hour(baseline_network_kw);
    const double centre = a.peak_hour + 0.5;
    a.residential = resolve_tariff(book.residential, centre);
    a.commercial = resolve_tariff(book.commercial, centre);
    a.ev_tou = resolve_tariff(book.ev_tou, centre);
    a.ev_tou_consumer.assign(chargers_per_consumer.size(), false);
    std::vector<std::size_t> owners;
    for (std::size_t i = 0; i < chargers_per_consumer.size(); ++i)
        if (chargers_per_consumer[i] > 0) owners.push_back(i);
    const auto k = static_cast<std::size_t>(std::floor(book.ev_tou_share * static_cast<double>(owners.size()) + 0.5));
    for (std::size_t i = owners.size(); i > 1; --i) std::swap(owners[i - 1], owners[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < k; ++i) a.ev_tou_consumer[owners[i]] = true;
    return a;
}

/// Complete scenario from (network, config, seed).
inline Scenario generate_scenario(const NetworkModel& network, const ScenarioConfig& cfg, const ProfileLibrary& library,
                                  std::uint64_t seed) {
    const auto& ys = cfg.year_settings();
    Scenario sc;
    sc.seed = seed;
    sc.horizon = cfg.horizon;
    sc.year = cfg.year;
    sc.charger_kw = cfg.charger_kw;
    sc.pv_shape = library.pv_shape;
    if (static_cast<long>(sc.pv_shape.size()) != cfg.horizon.steps())
        throw ScenarioError("library does not match the configured horizon");

    Rng load_rng(derive_seed(seed, 1)), elec_rng(derive_seed(seed, 2)), ev_rng(derive_seed(seed, 3)),
        pv_rng(derive_seed(seed, 4)), st_rng(derive_seed(seed, 5)), tariff_rng(derive_seed(seed, 6));

    sc.loads = synthesize_baseline_loads(network, library, load_rng, cfg.load_match_tolerance, cfg.load_match_fallback,
                                         cfg.pf_min, cfg.pf_max);
    double baseline = 0.0;
    for (const auto& l : sc.loads) baseline += l.energy();

    ElectrificationPlan plan;
    plan.residential_uplift_percent = ys.residential_uplift_percent;
    plan.commercial_uplift_percent = ys.commercial_uplift_percent;
    plan.thermal_target_kwh = ys.thermal_addition_percent / 100.0 * baseline;
    plan.space_heating_efficiency = cfg.space_heating_efficiency;
    plan.water_heating_efficiency = cfg.water_heating_efficiency;
    sc.thermal_target_kwh = plan.thermal_target_kwh;
    apply_electrification(sc.loads, plan, library, network, elec_rng);

    std::vector<double> network_kw(static_cast<std::size_t>(sc.steps()), 0.0);
    double electrified = 0.0;
    for (const auto& l : sc.loads) {
        electrified += l.energy();
        for (std::size_t t = 0; t < network_kw.size(); ++t) network_kw[t] += l.demand(t);
    }

    const double eta = std::sqrt(cfg.storage.round_trip);
    sc.ev_efficiency = eta;
    sc.ev_target_kwh = ys.ev_percent / 100.0 * electrified;
    auto evs = assign_evs(network, sc.loads, cfg.ev, cfg.horizon, cfg.charger_kw, eta, sc.ev_target_kwh, ev_rng,
                          cfg.residential_kw_per_charger);
    sc.ev_events = std::move(evs.events);

    std::vector<double> consumer_energy(sc.loads.size());
    for (std::size_t i = 0; i < sc.loads.size(); ++i) consumer_energy[i] = sc.loads[i].energy();
    for (const auto& e : sc.ev_events) consumer_energy[e.consumer] += e.energy_kwh / eta;
    const double with_ev = std::accumulate(consumer_energy.begin(), consumer_energy.end(), 0.0);
    sc.pv_target_kwh = ys.pv_percent / 100.0 * with_ev;
    sc.pv = assign_pv(consumer_energy, sc.pv_shape, sc.pv_target_kwh, pv_rng, cfg.pv_ratio_min, cfg.pv_ratio_max);

    const double spread = cfg.storage_spread_override.value_or(ys.storage_spread_percent);
    if (!sc.pv.empty() && spread > 0.0) {
        if (cfg.storage_spread_override && ys.storage_spread_percent > 0.0) {
            // Same network total as the projected spread, redistributed.
            Rng ref_rng(derive_seed(seed, 5));
            auto ref = assign_storage(sc.pv, sc.pv_shape, ys.storage_spread_percent, cfg.storage, ref_rng);
            double total = 0.0;
            for (const auto& s : ref) total += s.capacity_kwh;
            sc.storage = assign_storage(sc.pv, sc.pv_shape, spread, cfg.storage, st_rng, total);
        } else {
            sc.storage = assign_storage(sc.pv, sc.pv_shape, spread, cfg.storage, st_rng);
        }
    }

    sc.tariffs = assign_tariffs(network_kw, cfg.tariffs, evs.chargers_per_consumer, tariff_rng);

    const double phi = cfg.phi();
    for (std::size_t i = 0; i < sc.loads.size(); ++i) {
        FlexibleSpec f;
        f.consumer = i;
        f.phi = phi;
        const auto& u = sc.loads[i].thermal_kw;
        f.u_max_kw = cfg.flex_umax_factor * (u.empty() ? 0.0 : *std::max_element(u.begin(), u.end()));
        sc.flexible.push_back(f);
    }
    return sc;
}

/// Network demand before any DER, per step.
inline std::vector<double> uncontrolled_network_demand(const Scenario& sc) {
    std::vector<double> out(static_cast<std::size_t>(sc.steps()), 0.0);
    for (const auto& l : sc.loads)
        for (std::size_t t = 0; t < out.size(); ++t) out[t] += l.demand(t);
    return out;
}

inline nlohmann::ordered_json scenario_to_json(const Scenario& sc) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["seed"] = sc.seed;
    j["year"] = sc.year;
    j["horizon"] = {{"days", sc.horizon.days}, {"start_day", sc.horizon.start_day}};
    j["charger_kw"] = sc.charger_kw;
    j["ev_efficiency"] = sc.ev_efficiency;
    j["targets"] = {{"ev_kwh", sc.ev_target_kwh}, {"pv_kwh", sc.pv_target_kwh}, {"thermal_kwh", sc.thermal_target_kwh}};
    ordered_json loads = ordered_json::array();
    for (const auto& l : sc.loads)
        loads.push_back({{"node", l.node},
                         {"class", std::string(to_string(l.cls))},
                         {"profile", l.profile_id},
                         {"power_factor", l.power_factor},
                         {"space_heating", l.space_heating},
                         {"water_heating", l.water_heating},
                         {"added_thermal_kwh", l.added_thermal_kwh},
                         {"fixed_kw", l.fixed_kw},
                         {"thermal_kw", l.thermal_kw}});
    j["loads"] = loads;
    j["pv_shape"] = sc.pv_shape;
    ordered_json pv = ordered_json::array();
    for (const auto& u : sc.pv) pv.push_back({{"consumer", u.consumer}, {"capacity_kw", u.capacity_kw}, {"ratio", u.ratio}});
    j["pv"] = pv;
    ordered_json st = ordered_json::array();
    for (const auto& s : sc.storage)
        st.push_back({{"consumer", s.consumer},
                      {"capacity_kwh", s.capacity_kwh},
                      {"min_kwh", s.min_kwh},
                      {"c_rate", s.c_rate},
                      {"charge_efficiency", s.charge_efficiency},
                      {"discharge_efficiency", s.discharge_efficiency},
                      {"leakage", s.leakage},
                      {"initial_kwh", s.initial_kwh}});
    j["storage"] = st;
    ordered_json ev = ordered_json::array();
    for (const auto& e : sc.ev_events)
        ev.push_back({{"consumer", e.consumer},
                      {"charger", e.charger},
                      {"start", e.start},
                      {"end", e.end},
                      {"energy_kwh", e.energy_kwh},
                      {"location", e.location == EvLocation::home ? "home" : "work"},
                      {"c_max_kw", e.c_max_kw}});
    j["ev_events"] = ev;
    ordered_json fx = ordered_json::array();
    for (const auto& f : sc.flexible) fx.push_back({{"consumer", f.consumer}, {"phi", f.phi}, {"u_max_kw", f.u_max_kw}});
    j["flexible"] = fx;
    j["tariffs"] = {{"peak_hour", sc.tariffs.peak_hour}, {"ev_tou", sc.tariffs.ev_tou_consumer}};
    return j;
}

}  // namespace dergrid
