// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <thread>

#include "dergrid/experiment.hpp"
#include "fixtures.hpp"
#include "oracle_dp.hpp"
#include "oracle_newton.hpp"

using namespace dergrid;
namespace fs = std::filesystem;

namespace {

const fs::path kData = DERGRID_DATA_DIR;
const fs::path kWork = DERGRID_ACCEPTANCE_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

int workers() {
    if (const char* w = std::getenv("DERGRID_WORKERS")) return std::max(1, std::atoi(w));
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// ---------------------------------------------------------------------------
// Shared experiment runs

struct Runs {
    std::optional<ExperimentReport> sub11;
    fs::path sub11_dir;
    std::vector<SweepPoint> stressed;  // flex none, then enhanced
};

Runs& runs() {
    static Runs r;
    return r;
}

const ExperimentReport& sub11_report() {
    auto& r = runs();
    if (!r.sub11) {
        auto cfg = load_run_config(kData / "configs" / "sub11.json");
        cfg.output = r.sub11_dir = kWork / "sub11";
        cfg.workers = workers();
        fs::remove_all(cfg.output);
        r.sub11 = run_experiment(cfg);
    }
    return *r.sub11;
}

const std::vector<SweepPoint>& stressed() {
    auto& r = runs();
    if (r.stressed.empty()) {
        auto cfg = load_run_config(kData / "configs" / "stressed.json");
        cfg.output = kWork / "stressed";
        cfg.workers = workers();
        fs::remove_all(cfg.output);
        r.stressed = run_sweep(cfg);
        if (r.stressed.size() != 2 || r.stressed[0].label != "flex_case=none" || r.stressed[1].label != "flex_case=enhanced")
            throw std::runtime_error("stressed config must sweep flex_case over none, enhanced");
    }
    return r.stressed;
}

const ControllerSummary& get(const ScenarioResult& r, const std::string& c) {
    if (!r.ok) throw std::runtime_error("scenario " + std::to_string(r.index) + " failed: " + r.error);
    const auto* s = r.find(c);
    if (!s) throw std::runtime_error("scenario " + std::to_string(r.index) + " has no " + c + " run");
    return *s;
}

// ---------------------------------------------------------------------------
// 1. Power-flow oracle equivalence

Outcome criterion1() {
    std::vector<std::string> names;
    double worst_v = 0.0, worst_s = 0.0, worst_t = 0.0;
    for (const auto& e : fs::directory_iterator(kData / "feeders")) {
        const auto net = load_network_file(e.path().string());
        if (net.buses.size() > 10) continue;
        names.push_back(e.path().stem().string());
        SweepSolver solver(net);
        std::mt19937_64 g(names.size());
        std::uniform_real_distribution<double> u(0.2, 1.0);
        const auto t0 = std::chrono::steady_clock::now();
        for (int trial = 0; trial < 20; ++trial) {
            const double scale = 0.2 + 0.1 * trial;
            InjectionFrame f;
            f.p_kw.assign(net.node_count(), 0.0);
            f.q_kvar.assign(net.node_count(), 0.0);
            for (auto n : net.consumer_nodes) {
                f.p_kw[n] = scale * net.nodes[n].peak_load * u(g);
                f.q_kvar[n] = (trial % 2 ? 0.33 : -0.2) * f.p_kw[n];
            }
            const auto sol = solver.solve(f, 0);
            const auto ref = oracle::newton(net, f.p_kw, f.q_kvar, 1.0);
            if (!sol.converged || !ref.converged) return {false, e.path().filename().string() + ": no convergence"};
            for (std::size_t i = 0; i < net.node_count(); ++i) worst_v = std::max(worst_v, std::abs(sol.v_pu[i] - ref.v[i]));
            for (std::size_t k = 0; k < net.transformer_count(); ++k)
                worst_s = std::max(worst_s, std::abs(std::complex<double>(sol.tx_p_kw[k], sol.tx_q_kvar[k]) - ref.tx_in_kva[k]));
        }
        worst_t = std::max(worst_t, seconds_since(t0) / 20.0);
    }
    const bool ok = names.size() >= 3 && worst_v <= 1e-6 && worst_s <= 1e-4 && worst_t < 1.0;
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ",") + n;
    return {ok, "fixtures " + list + "; max |dV| " + fmt(worst_v, 3) + " pu, max |dS| " + fmt(worst_s, 3) + " kVA, " +
                    fmt(worst_t * 1e3, 3) + " ms per solve"};
}

// ---------------------------------------------------------------------------
// 2. Local foresight optimality against enumeration

Outcome criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto sc = fixtures::foresight_fixture();
    const auto ctx = make_context(sc, 0);
    const auto r = solve_local_foresight(ctx);
    const auto dp = oracle::brute_force(sc, 0.5, 0.001);
    const double qp = oracle::objective(sc, r.dispatch, 0.001);
    const auto& st = sc.storage[0];
    const auto& ev = sc.ev_events[0];
    const double h = 0.5;
    const double bound =
        0.001 * static_cast<double>(sc.steps()) * ((st.max_power_kw() * h + h * h) + (ev.c_max_kw * h + h * h));
    const double secs = seconds_since(t0);
    const bool ok = std::isfinite(dp.objective) && qp <= dp.objective + 1e-6 && dp.objective - qp <= bound && secs < 10.0 &&
                    audit_schedule(sc, DispatchSchedule{"f", {r.dispatch}, {}}).empty();
    return {ok, "QP " + fmt(qp, 8) + " vs grid optimum " + fmt(dp.objective, 8) + " (bound " + fmt(bound, 3) + "), " +
                    fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Foresight never costs more than the heuristic

Outcome criterion3() {
    const auto& rep = sub11_report();
    long ok = 0;
    double worst = -1e300, mean = 0.0;
    for (const auto& r : rep.results) {
        const double h = get(r, kHeuristic).cost, f = get(r, kForesight).cost;
        const double rel = (f - h) / h;
        worst = std::max(worst, rel);
        mean += rel / static_cast<double>(rep.results.size());
        ok += f <= h * (1.0 + 1e-6);
    }
    const bool pass = rep.results.size() == 16 && ok == 16;
    return {pass, std::to_string(ok) + "/" + std::to_string(rep.results.size()) + " scenarios; foresight vs heuristic mean " +
                      fmt(100 * mean) + "%, worst " + fmt(100 * worst) + "%"};
}

// ---------------------------------------------------------------------------
// 4. Surrogate accuracy

Outcome criterion4() {
    double worst_v = 0.0, worst_t = 0.0;
    long n = 0;
    auto take = [&](const HoldoutError& h) {
        worst_v = std::max(worst_v, h.voltage_rms);
        worst_t = std::max(worst_t, h.transformer_rms_pct);
        ++n;
    };
    for (const auto& p : stressed())
        for (const auto& r : p.report.results) {
            if (!r.holdout) throw std::runtime_error("central run without holdout error");
            take(*r.holdout);
        }
    // sub11 scenarios as well, fitted on the heuristic run.
    auto cfg = load_run_config(kData / "configs" / "sub11.json");
    const auto rc = prepare_run(cfg);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto sc = generate_scenario(rc.network, cfg.scenario, rc.library, derive_seed(cfg.seed, i));
        const auto local = evaluate_schedule(rc.network, rc.ratings, sc, run_heuristic(sc));
        take(train_surrogate(rc.network, rc.ratings, sc, local, cfg.ridge).holdout);
    }
    const bool ok = worst_v < 5e-3 && worst_t < 2.0;
    return {ok, std::to_string(n) + " fitted models; worst held-out voltage RMS " + fmt(worst_v, 3) + " pu, transformer RMS " +
                    fmt(worst_t, 3) + "% of rating"};
}

// ---------------------------------------------------------------------------
// 5-7. Paired local vs central on the stressed fixture

Outcome criterion5() {
    const auto& rep = stressed()[0].report;
    double local_pct = 0.0, central_pct = 0.0;
    long fewer = 0, fallback = 0;
    for (const auto& r : rep.results) {
        const auto &a = get(r, kHeuristic), &b = get(r, kCentral);
        local_pct += a.transformer_violation_pct / static_cast<double>(rep.results.size());
        central_pct += b.transformer_violation_pct / static_cast<double>(rep.results.size());
        fewer += b.transformers_violated < a.transformers_violated;
        fallback += static_cast<long>(b.fallback_days.size());
    }
    const bool ok = rep.results.size() == 16 && local_pct >= 30.0 && fewer >= 14;
    return {ok, "local " + fmt(local_pct) + "% vs central " + fmt(central_pct) + "% transformers violated; central fewer in " +
                    std::to_string(fewer) + "/16; " + std::to_string(fallback) + " fallback day(s)"};
}

Outcome criterion6() {
    const auto& rep = stressed()[0].report;
    long ok = 0;
    double mean = 0.0, lowest = 1e300;
    for (const auto& r : rep.results) {
        const double a = get(r, kHeuristic).cost, b = get(r, kCentral).cost;
        const double rel = (b - a) / a;
        mean += 100 * rel / static_cast<double>(rep.results.size());
        lowest = std::min(lowest, rel);
        ok += b >= a * (1.0 - 1e-6);
    }
    const bool pass = rep.results.size() == 16 && ok == 16;
    return {pass, std::to_string(ok) + "/16 central cost >= local; mean delta " + fmt(mean) + "%, smallest " +
                      fmt(100 * lowest, 3) + "%"};
}

Outcome criterion7() {
    const auto& rep = stressed()[0].report;
    long ok = 0;
    double mean = 0.0;
    for (const auto& r : rep.results) {
        const double a = get(r, kHeuristic).peak_kw, b = get(r, kCentral).peak_kw;
        mean += 100 * (b - a) / a / static_cast<double>(rep.results.size());
        ok += b <= a + 1e-9;
    }
    const bool pass = rep.results.size() == 16 && ok >= 14;
    return {pass, "central peak <= local in " + std::to_string(ok) + "/16; mean peak delta " + fmt(mean) + "%"};
}

// ---------------------------------------------------------------------------
// 8. Flexible-load paradox

Outcome criterion8() {
    const auto& none = stressed()[0].report;
    const auto& enh = stressed()[1].report;
    if (none.results.size() != 16 || enh.results.size() != 16) return {false, "missing scenarios"};
    long local_up = 0;
    double local_none = 0.0, local_enh = 0.0, central_none = 0.0, central_enh = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        const auto& a = none.results[i];
        const auto& b = enh.results[i];
        if (a.seed != b.seed) return {false, "unpaired seeds"};
        local_up += get(b, kHeuristic).transformers_violated > get(a, kHeuristic).transformers_violated;
        local_none += get(a, kHeuristic).transformer_violation_pct / 16;
        local_enh += get(b, kHeuristic).transformer_violation_pct / 16;
        central_none += get(a, kCentral).transformer_violation_pct / 16;
        central_enh += get(b, kCentral).transformer_violation_pct / 16;
    }
    const bool ok = local_up >= 9 && central_enh < central_none;
    return {ok, "local more violations with enhanced flexibility in " + std::to_string(local_up) + "/16 (" + fmt(local_none) +
                    "% -> " + fmt(local_enh) + "%); central " + fmt(central_none) + "% -> " + fmt(central_enh) + "%"};
}

// ---------------------------------------------------------------------------
// 9. Metric arithmetic

Outcome criterion9() {
    std::mt19937_64 g(99);
    std::uniform_real_distribution<double> s(0.0, 1.0);
    long mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(8 + s(g) * 300);
        const double rating = 5.0 + 200.0 * s(g);
        const double level = 0.9 + 0.5 * s(g);
        std::vector<double> kva(n), v(n);
        for (std::size_t t = 0; t < n; ++t) {
            kva[t] = rating * level * (0.6 + 0.8 * s(g));
            v[t] = 1.0 + 0.12 * (s(g) - 0.5) * level;
        }
        long first_t = -1;
        for (std::size_t a = 0; a + 8 <= n && first_t < 0; ++a) {
            double sum = 0.0;
            for (std::size_t k = 0; k < 8; ++k) sum += kva[a + k];
            if (sum / 8.0 > 1.2 * rating) first_t = static_cast<long>(a);
        }
        long first_v = -1;
        for (std::size_t t = 0; t < n && first_v < 0; ++t)
            if (std::abs(v[t] - 1.0) > 0.05) first_v = static_cast<long>(t);
        const auto rt = transformer_violation(kva, rating);
        const auto rv = voltage_violation(v);
        mismatches += rt.violated != (first_t >= 0) || rt.first != first_t;
        mismatches += rv.violated != (first_v >= 0) || rv.first != first_v;
    }

    // Aggregation: mean of network means, sqrt of the mean sample variance.
    long agg_bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::map<std::string, std::vector<double>> groups;
        const int nets = 1 + static_cast<int>(s(g) * 11);
        for (int k = 0; k < nets; ++k) {
            const int m = 2 + static_cast<int>(s(g) * 20);
            for (int i = 0; i < m; ++i) groups["n" + std::to_string(k)].push_back(100 * s(g));
        }
        double mean_sum = 0.0, var_sum = 0.0;
        for (const auto& [name, x] : groups) {
            double m = 0.0;
            for (double y : x) m += y;
            m /= static_cast<double>(x.size());
            double ss = 0.0;
            for (double y : x) ss += (y - m) * (y - m);
            const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
            mean_sum += m;
            var_sum += sd * sd;
        }
        const auto a = aggregate(groups);
        agg_bad += !(a.mean == mean_sum / nets) || !a.stddev || !(*a.stddev == std::sqrt(var_sum / nets));
    }
    return {mismatches == 0 && agg_bad == 0,
            std::to_string(mismatches) + " metric mismatches over 1000 series, " + std::to_string(agg_bad) + " aggregation mismatches over 200 sets"};
}

// ---------------------------------------------------------------------------
// 10. Determinism through the command-line tool

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DERGRID_CLI) + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome criterion10() {
    const auto a = kWork / "det-a", b = kWork / "det-b";
    fs::remove_all(a);
    fs::remove_all(b);
    const auto cfg = (kData / "configs" / "demo.json").string();
    const int ra = run_cli("simulate -c " + cfg + " -m 4 -j 1 -o " + a.string());
    const int rb = run_cli("simulate -c " + cfg + " -m 4 -j 3 -o " + b.string());
    const auto ta = read_text_file(a / "report.json"), tb = read_text_file(b / "report.json");
    const bool ok = ra == 0 && rb == 0 && !ta.empty() && ta == tb;
    return {ok, "exit codes " + std::to_string(ra) + "/" + std::to_string(rb) + ", report " + hex64(fnv1a(ta)) +
                    (ta == tb ? " identical" : " differs from " + hex64(fnv1a(tb)))};
}

// ---------------------------------------------------------------------------
// 11. Independent constraint audit of every committed schedule

struct Row {
    std::optional<double> c, d, q;
    double ev = 0.0, u = 0.0, ub = 0.0;
};

std::optional<double> cell(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

std::map<std::size_t, std::vector<Row>> read_schedule(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    if (line != "consumer,t,storage_c,storage_d,storage_q,ev_c,u,u_base,net") throw std::runtime_error("bad header in " + p.string());
    std::map<std::size_t, std::vector<Row>> out;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        if (f.size() == 8) f.emplace_back();
        if (f.size() != 9) throw std::runtime_error("bad row in " + p.string());
        auto& rows = out[std::stoul(f[0])];
        if (std::stoul(f[1]) != rows.size()) throw std::runtime_error("steps out of order in " + p.string());
        rows.push_back({cell(f[2]), cell(f[3]), cell(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7])});
    }
    return out;
}

// Returns the violations found in one schedule file.
std::vector<std::string> audit_file(const nlohmann::json& sc, const fs::path& file) {
    std::vector<std::string> bad;
    const auto rows = read_schedule(file);
    const double dt = 0.25, eff = sc["ev_efficiency"];
    const std::size_t T = static_cast<std::size_t>(sc["horizon"]["days"].get<long>()) * 96;
    const std::string tag = file.parent_path().filename().string() + "/" + file.filename().string() + ": ";
    if (rows.size() != sc["loads"].size()) bad.push_back(tag + "consumer count");

    for (const auto& st : sc["storage"]) {
        const auto& r = rows.at(st["consumer"]);
        double q = st["initial_kwh"];
        const double cap = st["capacity_kwh"], lo = st["min_kwh"], pmax = st["c_rate"].get<double>() * cap;
        for (std::size_t t = 0; t < T; ++t) {
            if (!r[t].c || !r[t].d || !r[t].q) {
                bad.push_back(tag + "storage columns missing");
                break;
            }
            const double c = *r[t].c, d = *r[t].d;
            if (c < -1e-7 || d < -1e-7 || c > pmax + 1e-7 || d > pmax + 1e-7) bad.push_back(tag + "storage power bound t=" + std::to_string(t));
            q = st["leakage"].get<double>() * q + st["charge_efficiency"].get<double>() * c * dt -
                d * dt / st["discharge_efficiency"].get<double>();
            if (std::abs(q - *r[t].q) > 1e-6) bad.push_back(tag + "storage dynamics t=" + std::to_string(t));
            if (*r[t].q < lo - 1e-6 || *r[t].q > cap + 1e-6) bad.push_back(tag + "SoC bound t=" + std::to_string(t));
            q = *r[t].q;
        }
    }

    // Per-event log: rows in event order, one per plugged-in step.
    auto ev_file = file;
    ev_file.replace_filename(file.filename().string().substr(0, file.filename().string().size() - 12) + "ev.csv");
    std::map<std::size_t, std::vector<std::pair<long, double>>> log;
    {
        std::ifstream in(ev_file);
        std::string line;
        std::getline(in, line);
        if (line != "event,consumer,t,kw") throw std::runtime_error("bad header in " + ev_file.string());
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string a, b, c, d;
            std::getline(ss, a, ',');
            std::getline(ss, b, ',');
            std::getline(ss, c, ',');
            std::getline(ss, d, ',');
            log[std::stoul(a)].emplace_back(std::stol(c), std::stod(d));
        }
    }
    std::map<std::size_t, std::vector<double>> node_total;
    std::map<std::pair<std::size_t, int>, std::vector<bool>> charger_busy;
    for (std::size_t k = 0; k < sc["ev_events"].size(); ++k) {
        const auto& ev = sc["ev_events"][k];
        const std::size_t i = ev["consumer"];
        const long a = ev["start"], b = ev["end"];
        const auto& steps = log[k];
        if (static_cast<long>(steps.size()) != b - a) {
            bad.push_back(tag + "EV event " + std::to_string(k) + " log length");
            continue;
        }
        auto& busy = charger_busy[{i, ev["charger"].get<int>()}];
        busy.resize(T, false);
        auto& tot = node_total[i];
        tot.resize(T, 0.0);
        double e = 0.0;
        for (long t = a; t < b; ++t) {
            const auto [tt, kw] = steps[static_cast<std::size_t>(t - a)];
            const auto u = static_cast<std::size_t>(t);
            if (tt != t) bad.push_back(tag + "EV event " + std::to_string(k) + " step order");
            if (busy[u]) bad.push_back(tag + "overlapping events on one charger");
            busy[u] = true;
            if (kw < -1e-7 || kw > ev["c_max_kw"].get<double>() + 1e-7) bad.push_back(tag + "EV power bound t=" + std::to_string(t));
            tot[u] += kw;
            e += kw * dt * eff;
        }
        if (std::abs(e - ev["energy_kwh"].get<double>()) > 1e-6)
            bad.push_back(tag + "EV terminal energy off by " + fmt(e - ev["energy_kwh"].get<double>(), 3) + " kWh");
    }
    for (const auto& [i, r] : rows) {
        const auto it = node_total.find(i);
        for (std::size_t t = 0; t < r.size(); ++t) {
            const double want = it == node_total.end() ? 0.0 : it->second[t];
            if (std::abs(r[t].ev - want) > 1e-6) bad.push_back(tag + "node EV total differs from event log t=" + std::to_string(t));
        }
    }

    std::map<std::size_t, double> phi;
    for (const auto& f : sc["flexible"]) phi[f["consumer"]] = f["phi"];
    for (const auto& [i, r] : rows) {
        const double p = phi.count(i) ? phi[i] : 0.0;
        for (std::size_t d = 0; d < T / 96; ++d) {
            double su = 0.0, sb = 0.0, dev = 0.0;
            for (std::size_t k = d * 96; k < (d + 1) * 96; ++k) {
                su += r[k].u;
                sb += r[k].ub;
                dev += std::abs(r[k].u - r[k].ub);
                if (r[k].u < -1e-7) bad.push_back(tag + "negative flexible load");
            }
            if (std::abs(su - sb) > 1e-6 * sb + 1e-9) bad.push_back(tag + "daily flexible energy balance day " + std::to_string(d));
            if (0.5 * dev > p * sb * (1 + 1e-6) + 1e-9) bad.push_back(tag + "deviation budget day " + std::to_string(d));
        }
    }
    return bad;
}

Outcome criterion11() {
    std::vector<fs::path> roots;
    sub11_report();
    roots.push_back(runs().sub11_dir);
    for (const auto& p : stressed()) roots.push_back(p.dir);
    long files = 0, library_flags = 0, violations = 0;
    std::vector<std::string> bad;
    for (const auto& root : roots)
        for (const auto& e : fs::directory_iterator(root / "scenarios")) {
            const auto sc = nlohmann::json::parse(read_text_file(e.path() / "scenario.json"));
            for (const auto& f : fs::directory_iterator(e.path()))
                if (f.path().string().ends_with(".schedule.csv")) {
                    ++files;
                    for (auto& m : audit_file(sc, f.path())) {
                        ++violations;
                        if (bad.size() < 5) bad.push_back(std::move(m));
                    }
                }
        }
    for (const auto* rep : {&*runs().sub11, &runs().stressed[0].report, &runs().stressed[1].report})
        for (const auto& r : rep->results)
            for (const auto& s : r.runs) library_flags += static_cast<long>(s.audit.size());
    std::string detail = std::to_string(files) + " schedules audited, " + std::to_string(violations) + " violation(s), " +
                         std::to_string(library_flags) + " flagged by the built-in audit";
    for (const auto& m : bad) detail += "\n    " + m;
    return {files == 2 * 16 + 2 * 2 * 16 && violations == 0 && library_flags == 0, detail};
}

}  // namespace

int main() {
    fs::create_directories(kWork);
    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7, criterion8,
                                                         criterion9, criterion10, criterion11};
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "criterion " << k + 1 << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << fmt(seconds_since(t0), 3)
                  << " s]" << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
