#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipeline.hpp"

namespace dergrid {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kHeuristic = "local-heuristic";
inline constexpr const char* kForesight = "local-foresight";
inline constexpr const char* kCentral = "central";

enum class SweepAxis { flex_case, storage_spread, charger_kw, year };

inline const char* to_string(SweepAxis a) {
    switch (a) {
    case SweepAxis::flex_case: return "flex_case";
    case SweepAxis::storage_spread: return "storage_spread";
    case SweepAxis::charger_kw: return "charger_kw";
    default: return "year";
    }
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "flex_case") return SweepAxis::flex_case;
    if (s == "storage_spread") return SweepAxis::storage_spread;
    if (s == "charger_kw") return SweepAxis::charger_kw;
    if (s == "year") return SweepAxis::year;
    throw ConfigError("unknown sweep axis '" + s + "'");
}

struct Sweep {
    SweepAxis axis = SweepAxis::charger_kw;
    std::vector<nlohmann::json> values;
};

struct RunConfig {
    fs::path network;
    nlohmann::json scenario_json = nlohmann::json::object();
    ScenarioConfig scenario;
    std::vector<std::string> controllers{kHeuristic};
    int scenarios = 1;
    std::uint64_t seed = 1;
    int workers = 1;
    fs::path output = "dergrid-out";
    CentralOptions central;
    double ridge = 1e-8;
    std::optional<Sweep> sweep;

    bool runs(const std::string& c) const { return std::find(controllers.begin(), controllers.end(), c) != controllers.end(); }
};

/// Value of `axis` written into a scenario config document.
inline void apply_sweep_value(nlohmann::json& scenario, SweepAxis axis, const nlohmann::json& v) {
    switch (axis) {
    case SweepAxis::flex_case: scenario["flex_case"] = v.get<std::string>(); break;
    case SweepAxis::storage_spread: scenario["storage_spread_override"] = v.get<double>(); break;
    case SweepAxis::charger_kw: scenario["charger_kw"] = v.get<double>(); break;
    case SweepAxis::year: scenario["year"] = v.get<int>(); break;
    }
}

inline void validate_sweep_value(const ScenarioConfig& base, SweepAxis axis, const nlohmann::json& v) {
    try {
        switch (axis) {
        case SweepAxis::flex_case:
            if (!base.flex_presets.contains(v.get<std::string>())) throw ConfigError("unknown flexible case " + v.dump());
            break;
        case SweepAxis::storage_spread: {
            const double s = v.get<double>();
            if (!(s >= 0.0 && s <= 100.0)) throw ConfigError("storage spread outside [0,100]: " + v.dump());
            break;
        }
        case SweepAxis::charger_kw:
            if (!(v.get<double>() > 0.0)) throw ConfigError("charger power must be positive: " + v.dump());
            break;
        case SweepAxis::year:
            if (!base.years.contains(v.get<int>())) throw ConfigError("no penetration entry for year " + v.dump());
            break;
        }
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for sweep axis ") + to_string(axis) + ": " + v.dump());
    }
}

inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
    using detail::read_opt;
    if (!j.is_object()) throw ConfigError("run config must be an object");
    RunConfig c;
    if (!j.contains("network")) throw ConfigError("run config needs a network file");
    c.network = j["network"].get<std::string>();
    if (c.network.is_relative() && !base_dir.empty()) c.network = base_dir / c.network;
    if (j.contains("scenario")) c.scenario_json = j["scenario"];
    c.scenario = parse_scenario_config(c.scenario_json);
    if (!c.scenario.library.directory.empty() && fs::path(c.scenario.library.directory).is_relative() && !base_dir.empty())
        c.scenario.library.directory = (base_dir / c.scenario.library.directory).string();
    if (j.contains("controllers")) c.controllers = j["controllers"].get<std::vector<std::string>>();
    if (c.controllers.empty()) throw ConfigError("no controllers selected");
    for (const auto& k : c.controllers)
        if (k != kHeuristic && k != kForesight && k != kCentral) throw ConfigError("unknown controller '" + k + "'");
    // The surrogate is fitted on the local heuristic run.
    if (c.runs(kCentral) && !c.runs(kHeuristic)) c.controllers.insert(c.controllers.begin(), kHeuristic);
    read_opt(j, "scenarios", c.scenarios);
    if (c.scenarios < 1) throw ConfigError("scenario count must be at least 1");
    read_opt(j, "seed", c.seed);
    read_opt(j, "workers", c.workers);
    if (c.workers < 1) throw ConfigError("worker count must be at least 1");
    if (j.contains("output")) {
        c.output = j["output"].get<std::string>();
        if (c.output.is_relative() && !base_dir.empty()) c.output = base_dir / c.output;
    }
    read_opt(j, "ridge", c.ridge);
    if (j.contains("central")) {
        const auto& k = j["central"];
        read_opt(k, "window_days", c.central.window_days);
        read_opt(k, "lambda2", c.central.weights.lambda2);
        read_opt(k, "lambda3", c.central.weights.lambda3);
        read_opt(k, "lambda4", c.central.weights.lambda4);
        read_opt(k, "lambda_flex", c.central.weights.lambda_flex);
        read_opt(k, "tighten", c.central.limits.tighten);
        read_opt(k, "max_iterations", c.central.solver.max_iterations);
        if (c.central.window_days < 1) throw ConfigError("central window must cover at least one day");
    }
    if (j.contains("sweep")) {
        Sweep s;
        s.axis = parse_sweep_axis(j["sweep"].at("axis").get<std::string>());
        for (const auto& v : j["sweep"].at("values")) {
            validate_sweep_value(c.scenario, s.axis, v);
            s.values.push_back(v);
        }
        if (s.values.empty()) throw ConfigError("sweep without values");
        c.sweep = std::move(s);
    }
    return c;
}

inline std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline RunConfig load_run_config(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

/// Everything that determines the results, independent of workers and paths.
inline std::uint64_t config_fingerprint(const RunConfig& c, std::string_view network_text) {
    nlohmann::json j;
    j["scenario"] = c.scenario_json;
    j["controllers"] = c.controllers;
    j["seed"] = c.seed;
    j["ridge"] = format_double(c.ridge);
    const auto& w = c.central.weights;
    j["central"] = {format_double(w.lambda2), format_double(w.lambda3), format_double(w.lambda4), format_double(w.lambda_flex),
                    format_double(c.central.limits.tighten), c.central.window_days, c.central.solver.max_iterations};
    return fnv1a(network_text, fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Per-scenario results

/// Counts above fixed edges; additive across scenarios.
struct Exceedance {
    std::vector<double> edges;
    std::vector<long> above;
    long samples = 0;
    double violating_sum = 0.0;
    long violating = 0;

    void add(std::span<const ViolationRecord> records, double threshold) {
        above.resize(edges.size(), 0);
        for (const auto& r : records)
            for (double m : r.magnitude) {
                ++samples;
                for (std::size_t k = 0; k < edges.size(); ++k) above[k] += m > edges[k];
                if (m > threshold) {
                    violating_sum += m;
                    ++violating;
                }
            }
    }
    void merge(const Exceedance& o) {
        above.resize(edges.size(), 0);
        for (std::size_t k = 0; k < above.size() && k < o.above.size(); ++k) above[k] += o.above[k];
        samples += o.samples;
        violating_sum += o.violating_sum;
        violating += o.violating;
    }
};

/// EV charging power histogram over steps with nonzero charging.
struct PowerHistogram {
    std::vector<double> edges;  // bin lower edges; last bin is closed above
    std::vector<long> counts;
    double sum_kw = 0.0;
    long samples = 0;

    void add(double kw) {
        if (kw <= 1e-9 || edges.empty()) return;
        counts.resize(edges.size(), 0);
        auto it = std::upper_bound(edges.begin(), edges.end(), kw);
        const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - edges.begin() - 1));
        ++counts[k];
        sum_kw += kw;
        ++samples;
    }
    void merge(const PowerHistogram& o) {
        counts.resize(edges.size(), 0);
        for (std::size_t k = 0; k < counts.size() && k < o.counts.size(); ++k) counts[k] += o.counts[k];
        sum_kw += o.sum_kw;
        samples += o.samples;
    }
};

inline std::vector<double> transformer_edges() {
    std::vector<double> e;
    for (int x = 0; x <= 300; x += 10) e.push_back(x);
    return e;
}

inline std::vector<double> voltage_edges() {
    std::vector<double> e;
    for (int x = 0; x <= 20; ++x) e.push_back(0.5 * x);
    return e;
}

inline std::vector<double> ev_power_edges(double charger_kw) {
    std::vector<double> e;
    for (int k = 0; k < 20; ++k) e.push_back(charger_kw * k / 20.0);
    return e;
}

struct ControllerSummary {
    std::string controller;
    double transformer_violation_pct = 0.0;
    double node_violation_pct = 0.0;
    long transformers_violated = 0;
    long nodes_violated = 0;
    double cost = 0.0;
    double peak_kw = 0.0;
    std::vector<long> fallback_days;
    std::vector<std::string> audit;
    std::vector<std::string> violated_transformers;
    Exceedance transformer;
    Exceedance voltage;
    PowerHistogram ev_power;
};

struct ScenarioResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<ControllerSummary> runs;
    std::optional<HoldoutError> holdout;
    std::map<std::string, std::string> artifacts;  // file name -> content hash

    const ControllerSummary* find(const std::string& c) const {
        for (const auto& r : runs)
            if (r.controller == c) return &r;
        return nullptr;
    }
};

inline ojson exceedance_json(const Exceedance& e) {
    return {{"edges", e.edges}, {"above", e.above}, {"samples", e.samples}, {"violating_sum", e.violating_sum},
            {"violating", e.violating}};
}

inline Exceedance exceedance_from(const nlohmann::json& j) {
    Exceedance e;
    e.edges = j.at("edges").get<std::vector<double>>();
    e.above = j.at("above").get<std::vector<long>>();
    e.samples = j.at("samples").get<long>();
    e.violating_sum = j.at("violating_sum").get<double>();
    e.violating = j.at("violating").get<long>();
    return e;
}

inline ojson histogram_json(const PowerHistogram& h) {
    return {{"edges", h.edges}, {"counts", h.counts}, {"sum_kw", h.sum_kw}, {"samples", h.samples}};
}

inline PowerHistogram histogram_from(const nlohmann::json& j) {
    PowerHistogram h;
    h.edges = j.at("edges").get<std::vector<double>>();
    h.counts = j.at("counts").get<std::vector<long>>();
    h.sum_kw = j.at("sum_kw").get<double>();
    h.samples = j.at("samples").get<long>();
    return h;
}

inline ojson summary_json(const ControllerSummary& s) {
    return {{"controller", s.controller},
            {"transformer_violation_pct", s.transformer_violation_pct},
            {"node_violation_pct", s.node_violation_pct},
            {"transformers_violated", s.transformers_violated},
            {"nodes_violated", s.nodes_violated},
            {"cost", s.cost},
            {"peak_kw", s.peak_kw},
            {"fallback_days", s.fallback_days},
            {"audit", s.audit},
            {"violated_transformers", s.violated_transformers},
            {"transformer_exceedance", exceedance_json(s.transformer)},
            {"voltage_exceedance", exceedance_json(s.voltage)},
            {"ev_power", histogram_json(s.ev_power)}};
}

inline ControllerSummary summary_from(const nlohmann::json& j) {
    ControllerSummary s;
    s.controller = j.at("controller").get<std::string>();
    s.transformer_violation_pct = j.at("transformer_violation_pct").get<double>();
    s.node_violation_pct = j.at("node_violation_pct").get<double>();
    s.transformers_violated = j.at("transformers_violated").get<long>();
    s.nodes_violated = j.at("nodes_violated").get<long>();
    s.cost = j.at("cost").get<double>();
    s.peak_kw = j.at("peak_kw").get<double>();
    s.fallback_days = j.at("fallback_days").get<std::vector<long>>();
    s.audit = j.at("audit").get<std::vector<std::string>>();
    s.violated_transformers = j.at("violated_transformers").get<std::vector<std::string>>();
    s.transformer = exceedance_from(j.at("transformer_exceedance"));
    s.voltage = exceedance_from(j.at("voltage_exceedance"));
    s.ev_power = histogram_from(j.at("ev_power"));
    return s;
}

inline ojson result_json(const ScenarioResult& r) {
    ojson j;
    j["index"] = r.index;
    j["seed"] = r.seed;
    j["status"] = r.ok ? "ok" : "failed";
    if (!r.ok) j["error"] = r.error;
    ojson runs = ojson::array();
    for (const auto& s : r.runs) runs.push_back(summary_json(s));
    j["runs"] = runs;
    if (r.holdout)
        j["surrogate_holdout"] = {{"voltage_rms_pu", r.holdout->voltage_rms}, {"transformer_rms_pct", r.holdout->transformer_rms_pct}};
    ojson a = ojson::object();
    for (const auto& [k, v] : r.artifacts) a[k] = v;
    j["artifacts"] = a;
    return j;
}

inline ScenarioResult result_from(const nlohmann::json& j) {
    ScenarioResult r;
    r.index = j.at("index").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("status").get<std::string>() == "ok";
    if (j.contains("error")) r.error = j["error"].get<std::string>();
    for (const auto& s : j.at("runs")) r.runs.push_back(summary_from(s));
    if (j.contains("surrogate_holdout"))
        r.holdout = HoldoutError{j["surrogate_holdout"].at("voltage_rms_pu").get<double>(),
                                 j["surrogate_holdout"].at("transformer_rms_pct").get<double>()};
    for (const auto& [k, v] : j.at("artifacts").items()) r.artifacts[k] = v.get<std::string>();
    return r;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Read-only inputs shared by every scenario of a run.
struct RunContext {
    RunConfig config;
    NetworkModel network;
    std::string network_text;
    ProfileLibrary library;
    std::vector<double> ratings;
    std::uint64_t fingerprint = 0;
};

inline RunContext prepare_run(const RunConfig& cfg) {
    RunContext rc;
    rc.config = cfg;
    rc.network_text = read_text_file(cfg.network);
    rc.network = parse_network(rc.network_text);
    rc.library = cfg.scenario.library.directory.empty()
                     ? make_synthetic_library(rc.network, cfg.scenario.horizon, cfg.scenario.library)
                     : load_library(cfg.scenario.library.directory, cfg.scenario.horizon);
    rc.ratings = transformer_ratings(rc.network, cfg.scenario, rc.library);
    rc.fingerprint = config_fingerprint(cfg, rc.network_text);
    return rc;
}

inline ControllerSummary summarize(const Scenario& sc, const std::string& name, const ControllerRun& run) {
    ControllerSummary s;
    s.controller = name;
    s.transformer_violation_pct = run.metrics.transformer_violation_pct;
    s.node_violation_pct = run.metrics.node_violation_pct;
    s.transformers_violated = run.metrics.transformers_violated;
    s.nodes_violated = run.metrics.nodes_violated;
    s.cost = run.metrics.cost;
    s.peak_kw = run.metrics.peak_kw;
    s.fallback_days = run.schedule.fallback_days;
    s.audit = run.audit;
    for (const auto& t : run.metrics.transformers)
        if (t.violated) s.violated_transformers.push_back(t.element);
    s.transformer.edges = transformer_edges();
    s.transformer.add(run.metrics.transformers, 120.0);
    s.voltage.edges = voltage_edges();
    s.voltage.add(run.metrics.nodes, 5.0);
    s.ev_power.edges = ev_power_edges(sc.charger_kw);
    for (const auto& nd : run.schedule.nodes)
        for (std::size_t k = 0; k < nd.events.size(); ++k)
            for (double kw : nd.ev_c[k]) s.ev_power.add(kw);
    return s;
}

/// Writes `text` under `dir` and records its hash.
inline void write_artifact(const fs::path& dir, const std::string& name, const std::string& text, ScenarioResult& r) {
    const auto tmp = dir / (name + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        out << text;
        if (!out) throw ConfigError("cannot write " + tmp.string());
    }
    fs::rename(tmp, dir / name);
    r.artifacts[name] = hex64(fnv1a(text));
}

inline std::string scenario_dir_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", index);
    return buf;
}

inline ScenarioResult run_scenario(const RunContext& rc, std::size_t index, const fs::path& dir) {
    const auto& cfg = rc.config;
    ScenarioResult r;
    r.index = index;
    r.seed = derive_seed(cfg.seed, index);
    fs::create_directories(dir);
    const auto sc = generate_scenario(rc.network, cfg.scenario, rc.library, r.seed);
    write_artifact(dir, "scenario.json", scenario_to_json(sc).dump(1) + "\n", r);

    auto record = [&](const std::string& name, const ControllerRun& run) {
        std::ostringstream sched, ev, flow;
        write_audit(sched, sc, run.schedule);
        write_ev_log(ev, sc, run.schedule);
        write_solution_table(flow, rc.network, run.flow);
        write_artifact(dir, name + ".schedule.csv", sched.str(), r);
        write_artifact(dir, name + ".ev.csv", ev.str(), r);
        write_artifact(dir, name + ".flow.csv", flow.str(), r);
        r.runs.push_back(summarize(sc, name, run));
    };

    const auto local = evaluate_schedule(rc.network, rc.ratings, sc, run_heuristic(sc));
    record(kHeuristic, local);
    if (cfg.runs(kForesight)) record(kForesight, evaluate_schedule(rc.network, rc.ratings, sc, run_foresight(sc)));
    if (cfg.runs(kCentral)) {
        const auto sur = train_surrogate(rc.network, rc.ratings, sc, local, cfg.ridge);
        r.holdout = sur.holdout;
        write_artifact(dir, "surrogate.json", model_to_json(sur.model).dump(1) + "\n", r);
        const auto central = run_central(sc, rc.network, sur.model, rc.ratings, cfg.central);
        record(kCentral, evaluate_schedule(rc.network, rc.ratings, sc, central.schedule));
    }
    // Report only the selected controllers; the heuristic may run just for the surrogate.
    if (!cfg.runs(kHeuristic)) std::erase_if(r.runs, [](const auto& s) { return s.controller == kHeuristic; });
    r.ok = true;
    return r;
}

/// A completed scenario whose marker and artifacts still match.
inline std::optional<ScenarioResult> load_completed(const fs::path& dir, std::uint64_t fingerprint, std::size_t index) {
    const auto marker = dir / "done.json";
    if (!fs::exists(marker)) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(read_text_file(marker));
        if (j.at("fingerprint").get<std::string>() != hex64(fingerprint)) return std::nullopt;
        auto r = result_from(j.at("result"));
        if (r.index != index || !r.ok) return std::nullopt;
        for (const auto& [name, hash] : r.artifacts) {
            if (!fs::exists(dir / name) || hex64(fnv1a(read_text_file(dir / name))) != hash) return std::nullopt;
        }
        return r;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline void mark_completed(const fs::path& dir, std::uint64_t fingerprint, const ScenarioResult& r) {
    ojson j;
    j["fingerprint"] = hex64(fingerprint);
    j["result"] = result_json(r);
    const auto tmp = dir / "done.json.tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << j.dump(1) << "\n";
    }
    fs::rename(tmp, dir / "done.json");
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
    std::string text;  // report.json
    std::string csv;   // scenarios.csv
    std::vector<ScenarioResult> results;
    int exit_code = 0;
    long resumed = 0;
};

inline ojson stats_json(const std::vector<double>& v) {
    if (v.empty()) return nullptr;
    const auto g = group_stats(v);
    ojson j{{"count", g.count}, {"mean", g.mean}};
    j["stddev"] = g.stddev ? ojson(*g.stddev) : ojson(nullptr);
    return j;
}

inline ojson exceedance_table_json(const Exceedance& e) {
    ojson rows = ojson::array();
    for (std::size_t k = 0; k < e.edges.size(); ++k)
        rows.push_back({{"x", e.edges[k]},
                        {"ccdf", e.samples ? static_cast<double>(k < e.above.size() ? e.above[k] : 0) / static_cast<double>(e.samples) : 0.0}});
    ojson j{{"samples", e.samples}, {"rows", rows}};
    j["violating_mean"] = e.violating ? ojson(e.violating_sum / static_cast<double>(e.violating)) : ojson(nullptr);
    return j;
}

inline ojson power_histogram_json(const PowerHistogram& h) {
    ojson bins = ojson::array();
    for (std::size_t k = 0; k < h.edges.size(); ++k) bins.push_back({{"from_kw", h.edges[k]}, {"count", k < h.counts.size() ? h.counts[k] : 0}});
    ojson j{{"samples", h.samples}, {"bins", bins}};
    j["mean_kw"] = h.samples ? ojson(h.sum_kw / static_cast<double>(h.samples)) : ojson(nullptr);
    return j;
}

/// Report text depends only on the configuration, seed and results.
inline ExperimentReport build_report(const RunContext& rc, std::vector<ScenarioResult> results) {
    const auto& cfg = rc.config;
    ExperimentReport rep;
    long failed = 0;
    for (const auto& r : results) failed += !r.ok;
    rep.exit_code = failed == 0 ? 0 : (failed == static_cast<long>(results.size()) ? 2 : 1);

    ojson j;
    j["network"] = rc.network.name;
    j["fingerprint"] = hex64(rc.fingerprint);
    j["seed"] = cfg.seed;
    j["scenarios"] = cfg.scenarios;
    j["year"] = cfg.scenario.year;
    j["flex_case"] = cfg.scenario.flex_case;
    j["charger_kw"] = cfg.scenario.charger_kw;
    j["horizon_days"] = cfg.scenario.horizon.days;
    j["controllers"] = cfg.controllers;
    j["ratings_kva"] = rc.ratings;
    j["failed"] = failed;

    ojson per = ojson::object();
    for (const auto& c : cfg.controllers) {
        std::vector<double> tx, nodes, cost, peak;
        Exceedance te, ve;
        te.edges = transformer_edges();
        ve.edges = voltage_edges();
        PowerHistogram ev;
        ev.edges = ev_power_edges(cfg.scenario.charger_kw);
        long fallback = 0, audit = 0;
        for (const auto& r : results)
            if (const auto* s = r.find(c)) {
                tx.push_back(s->transformer_violation_pct);
                nodes.push_back(s->node_violation_pct);
                cost.push_back(s->cost);
                peak.push_back(s->peak_kw);
                te.merge(s->transformer);
                ve.merge(s->voltage);
                ev.merge(s->ev_power);
                fallback += static_cast<long>(s->fallback_days.size());
                audit += static_cast<long>(s->audit.size());
            }
        if (tx.empty()) continue;
        per[c] = {{"transformer_violation_pct", stats_json(tx)},
                  {"node_violation_pct", stats_json(nodes)},
                  {"cost", stats_json(cost)},
                  {"peak_kw", stats_json(peak)},
                  {"fallback_days", fallback},
                  {"audit_failures", audit},
                  {"transformer_exceedance", exceedance_table_json(te)},
                  {"voltage_exceedance", exceedance_table_json(ve)},
                  {"ev_power_histogram", power_histogram_json(ev)}};
    }
    j["summary"] = per;

    // Paired deltas of every controller against the local heuristic.
    ojson paired = ojson::object();
    for (const auto& c : cfg.controllers) {
        if (c == kHeuristic || !cfg.runs(kHeuristic)) continue;
        std::vector<double> dcost, dpeak, dtx;
        long fewer = 0, cheaper = 0, lower_peak = 0;
        for (const auto& r : results) {
            const auto *a = r.find(kHeuristic), *b = r.find(c);
            if (!a || !b) continue;
            dcost.push_back(100.0 * (b->cost - a->cost) / a->cost);
            dpeak.push_back(100.0 * (b->peak_kw - a->peak_kw) / a->peak_kw);
            dtx.push_back(b->transformer_violation_pct - a->transformer_violation_pct);
            fewer += b->transformers_violated < a->transformers_violated;
            cheaper += b->cost < a->cost;
            lower_peak += b->peak_kw <= a->peak_kw;
        }
        if (dcost.empty()) continue;
        paired[c + " vs " + kHeuristic] = {{"pairs", dcost.size()},
                                           {"cost_delta_pct", stats_json(dcost)},
                                           {"peak_delta_pct", stats_json(dpeak)},
                                           {"transformer_violation_delta_pct", stats_json(dtx)},
                                           {"fewer_violated_transformers", fewer},
                                           {"cheaper", cheaper},
                                           {"peak_not_higher", lower_peak}};
    }
    j["paired"] = paired;

    ojson rows = ojson::array();
    for (const auto& r : results) rows.push_back(result_json(r));
    j["results"] = rows;
    rep.text = j.dump(2) + "\n";

    std::ostringstream csv;
    csv << "scenario,seed,controller,status,transformer_violation_pct,node_violation_pct,transformers_violated,nodes_violated,"
           "cost,peak_kw,fallback_days,audit_failures\n";
    for (const auto& r : results) {
        if (!r.ok) {
            csv << r.index << ',' << r.seed << ",,failed,,,,,,,,\n";
            continue;
        }
        for (const auto& s : r.runs)
            csv << r.index << ',' << r.seed << ',' << s.controller << ",ok," << format_double(s.transformer_violation_pct) << ','
                << format_double(s.node_violation_pct) << ',' << s.transformers_violated << ',' << s.nodes_violated << ','
                << format_double(s.cost) << ',' << format_double(s.peak_kw) << ',' << s.fallback_days.size() << ','
                << s.audit.size() << '\n';
    }
    rep.csv = csv.str();
    rep.results = std::move(results);
    return rep;
}

using LogFn = std::function<void(const std::string&)>;

/// Runs every scenario on a pool of workers, resuming completed ones, and
/// writes report.json and scenarios.csv under the output directory.
inline ExperimentReport run_experiment(const RunConfig& cfg, const LogFn& log = {}) {
    const auto rc = prepare_run(cfg);
    const auto m = static_cast<std::size_t>(cfg.scenarios);
    fs::create_directories(cfg.output / "scenarios");
    std::vector<ScenarioResult> results(m);
    std::vector<char> resumed(m, 0);
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto say = [&](const std::string& s) {
        if (!log) return;
        std::lock_guard lock(log_mu);
        log(s);
    };
    auto worker = [&] {
        for (std::size_t i = next++; i < m; i = next++) {
            const auto dir = cfg.output / "scenarios" / scenario_dir_name(i);
            if (auto done = load_completed(dir, rc.fingerprint, i)) {
                results[i] = std::move(*done);
                resumed[i] = 1;
                say("scenario " + std::to_string(i) + ": resumed");
                continue;
            }
            try {
                results[i] = run_scenario(rc, i, dir);
                mark_completed(dir, rc.fingerprint, results[i]);
                say("scenario " + std::to_string(i) + ": done");
            } catch (const std::exception& e) {
                results[i] = ScenarioResult{};
                results[i].index = i;
                results[i].seed = derive_seed(cfg.seed, i);
                results[i].error = e.what();
                say("scenario " + std::to_string(i) + ": failed: " + e.what());
            }
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.workers)), m);
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    auto rep = build_report(rc, std::move(results));
    rep.resumed = std::count(resumed.begin(), resumed.end(), 1);
    std::ofstream(cfg.output / "report.json", std::ios::binary) << rep.text;
    std::ofstream(cfg.output / "scenarios.csv", std::ios::binary) << rep.csv;
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps and comparisons

struct SweepPoint {
    std::string label;
    fs::path dir;
    ExperimentReport report;
};

inline std::string sweep_label(SweepAxis axis, const nlohmann::json& v) {
    std::string s = v.is_string() ? v.get<std::string>() : (v.is_number_float() ? format_double(v.get<double>()) : v.dump());
    for (auto& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-' && ch != '_') ch = '_';
    return std::string(to_string(axis)) + "=" + s;
}

/// One full experiment per sweep value, each in its own directory.
inline std::vector<SweepPoint> run_sweep(const RunConfig& cfg, const LogFn& log = {}) {
    if (!cfg.sweep) throw ConfigError("run config has no sweep section");
    std::vector<SweepPoint> out;
    ojson index = ojson::array();
    for (const auto& v : cfg.sweep->values) {
        RunConfig c = cfg;
        c.sweep.reset();
        apply_sweep_value(c.scenario_json, cfg.sweep->axis, v);
        const auto dir_lib = c.scenario.library.directory;
        c.scenario = parse_scenario_config(c.scenario_json);
        c.scenario.library.directory = dir_lib;
        SweepPoint p;
        p.label = sweep_label(cfg.sweep->axis, v);
        p.dir = cfg.output / p.label;
        c.output = p.dir;
        if (log) log("sweep " + p.label);
        p.report = run_experiment(c, log);
        const auto rj = ojson::parse(p.report.text);
        index.push_back({{"value", ojson::parse(v.dump())}, {"directory", p.label}, {"report_hash", hex64(fnv1a(p.report.text))},
                         {"summary", rj["summary"]}, {"paired", rj["paired"]}});
        out.push_back(std::move(p));
    }
    ojson j{{"axis", to_string(cfg.sweep->axis)}, {"points", index}};
    std::ofstream(cfg.output / "sweep.json", std::ios::binary) << j.dump(2) << "\n";
    return out;
}

struct DeltaRow {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    double transformer_violation_pct = 0.0;  // b - a, percentage points
    double node_violation_pct = 0.0;
    double cost_pct = 0.0;  // relative to a
    double peak_pct = 0.0;
};

struct DeltaTable {
    std::string a, b;
    std::vector<DeltaRow> rows;
    DeltaRow mean;
};

/// Paired per-scenario deltas of controller `cb` in report `b` against `ca` in `a`.
inline DeltaTable compare_controllers(const nlohmann::json& a, const nlohmann::json& b, const std::string& ca,
                                      const std::string& cb) {
    if (a.at("seed") != b.at("seed") || a.at("scenarios") != b.at("scenarios"))
        throw ConfigError("reports come from different seeds; paired comparison refused");
    const auto& ra = a.at("results");
    const auto& rb = b.at("results");
    if (ra.size() != rb.size()) throw ConfigError("reports differ in scenario count");
    DeltaTable t;
    t.a = ca;
    t.b = cb;
    auto pick = [](const nlohmann::json& r, const std::string& c) -> const nlohmann::json* {
        for (const auto& s : r.at("runs"))
            if (s.at("controller") == c) return &s;
        return nullptr;
    };
    for (std::size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].at("seed") != rb[i].at("seed")) throw ConfigError("scenario seeds differ; paired comparison refused");
        const auto *x = pick(ra[i], ca), *y = pick(rb[i], cb);
        if (!x || !y) continue;
        DeltaRow d;
        d.index = ra[i].at("index").get<std::size_t>();
        d.seed = ra[i].at("seed").get<std::uint64_t>();
        auto num = [](const nlohmann::json& s, const char* k) { return s.at(k).get<double>(); };
        d.transformer_violation_pct = num(*y, "transformer_violation_pct") - num(*x, "transformer_violation_pct");
        d.node_violation_pct = num(*y, "node_violation_pct") - num(*x, "node_violation_pct");
        d.cost_pct = 100.0 * (num(*y, "cost") - num(*x, "cost")) / num(*x, "cost");
        d.peak_pct = 100.0 * (num(*y, "peak_kw") - num(*x, "peak_kw")) / num(*x, "peak_kw");
        t.rows.push_back(d);
    }
    if (t.rows.empty()) throw ConfigError("no scenario has both '" + ca + "' and '" + cb + "'");
    for (const auto& d : t.rows) {
        t.mean.transformer_violation_pct += d.transformer_violation_pct;
        t.mean.node_violation_pct += d.node_violation_pct;
        t.mean.cost_pct += d.cost_pct;
        t.mean.peak_pct += d.peak_pct;
    }
    const double n = static_cast<double>(t.rows.size());
    t.mean.transformer_violation_pct /= n;
    t.mean.node_violation_pct /= n;
    t.mean.cost_pct /= n;
    t.mean.peak_pct /= n;
    return t;
}

inline ojson delta_json(const DeltaTable& t) {
    auto row = [](const DeltaRow& d) {
        return ojson{{"transformer_violation_pct", d.transformer_violation_pct},
                     {"node_violation_pct", d.node_violation_pct},
                     {"cost_pct", d.cost_pct},
                     {"peak_pct", d.peak_pct}};
    };
    ojson rows = ojson::array();
    for (const auto& d : t.rows) {
        auto r = row(d);
        r["index"] = d.index;
        r["seed"] = d.seed;
        rows.push_back(r);
    }
    return {{"a", t.a}, {"b", t.b}, {"rows", rows}, {"mean", row(t.mean)}};
}

}  // namespace dergrid
