#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dergrid/experiment.hpp"

using namespace dergrid;

namespace {

enum Exit { kOk = 0, kPartial = 1, kFailure = 2 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<int> scenarios;
    std::optional<std::string> output;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-s,--seed", c.seed, "Root seed");
    cmd->add_option("-j,--workers", c.workers, "Scenario workers")->check(CLI::PositiveNumber);
    cmd->add_option("-m,--scenarios", c.scenarios, "Scenario count")->check(CLI::PositiveNumber);
    cmd->add_option("-o,--output", c.output, "Output directory");
}

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

// Flags win over environment, environment over the config file.
RunConfig resolve(const Common& c) {
    auto cfg = load_run_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.scenarios) cfg.scenarios = *c.scenarios;
    if (c.output)
        cfg.output = *c.output;
    else if (auto o = env("DERGRID_OUTPUT_DIR"))
        cfg.output = *o;
    if (c.workers) {
        cfg.workers = *c.workers;
    } else if (auto w = env("DERGRID_WORKERS")) {
        try {
            cfg.workers = std::stoi(*w);
        } catch (const std::exception&) {
            throw ConfigError("DERGRID_WORKERS is not a number: " + *w);
        }
        if (cfg.workers < 1) throw ConfigError("DERGRID_WORKERS must be at least 1");
    }
    return cfg;
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void print_summary(const ExperimentReport& rep) {
    const auto j = nlohmann::json::parse(rep.text);
    for (const auto& [name, s] : j["summary"].items())
        std::cout << name << ": transformers violated " << s["transformer_violation_pct"]["mean"].get<double>() << "% nodes "
                  << s["node_violation_pct"]["mean"].get<double>() << "% cost $" << s["cost"]["mean"].get<double>() << " peak "
                  << s["peak_kw"]["mean"].get<double>() << " kW\n";
    for (const auto& [name, p] : j["paired"].items())
        std::cout << name << ": cost " << p["cost_delta_pct"]["mean"].get<double>() << "% peak "
                  << p["peak_delta_pct"]["mean"].get<double>() << "% fewer violated transformers in "
                  << p["fewer_violated_transformers"].get<long>() << "/" << p["pairs"].get<long>() << "\n";
    std::cout << "report " << hex64(fnv1a(rep.text)) << "\n";
}

int simulate(const Common& c) {
    const auto cfg = resolve(c);
    const auto rep = run_experiment(cfg, log_line);
    if (rep.resumed) std::cerr << rep.resumed << " scenario(s) resumed\n";
    print_summary(rep);
    std::cout << "wrote " << (cfg.output / "report.json").string() << "\n";
    return rep.exit_code;
}

int sweep(const Common& c) {
    const auto cfg = resolve(c);
    const auto points = run_sweep(cfg, log_line);
    int worst = kOk;
    for (const auto& p : points) {
        std::cout << "== " << p.label << "\n";
        print_summary(p.report);
        worst = std::max(worst, p.report.exit_code);
    }
    std::cout << "wrote " << (cfg.output / "sweep.json").string() << "\n";
    return worst;
}

int compare(const std::string& a, const std::string& b, const std::string& ca, std::string cb, const std::string& out) {
    if (cb.empty()) cb = ca;
    const auto ja = nlohmann::json::parse(read_text_file(a));
    const auto jb = nlohmann::json::parse(read_text_file(b));
    const auto t = compare_controllers(ja, jb, ca, cb);
    std::cout << "scenario,seed,transformer_violation_pct,node_violation_pct,cost_pct,peak_pct\n";
    for (const auto& d : t.rows)
        std::cout << d.index << ',' << d.seed << ',' << d.transformer_violation_pct << ',' << d.node_violation_pct << ','
                  << d.cost_pct << ',' << d.peak_pct << '\n';
    std::cout << "mean,," << t.mean.transformer_violation_pct << ',' << t.mean.node_violation_pct << ',' << t.mean.cost_pct << ','
              << t.mean.peak_pct << '\n';
    if (!out.empty()) std::ofstream(out, std::ios::binary) << delta_json(t).dump(2) << "\n";
    return kOk;
}

int validate_network(const std::string& path) {
    const auto net = parse_network(read_text_file(path));
    std::cout << net.name << ": " << net.buses.size() << " buses, " << net.node_count() << " nodes, " << net.lines.size()
              << " lines, " << net.transformer_count() << " transformers, " << net.consumer_count() << " consumers\n";
    long unrated = 0;
    for (const auto& t : net.transformers) unrated += !t.rated_kva.has_value();
    if (unrated) std::cout << unrated << " transformer(s) without a rating; derived from the baseline run\n";
    std::cout << "ok\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Power-flow driven DER control experiments"};
    app.require_subcommand(1);

    Common sim, swp;
    auto* s = app.add_subcommand("simulate", "Generate scenarios, run controllers and write reports");
    add_common(s, sim);
    auto* w = app.add_subcommand("sweep", "Repeat the experiment over the config's sweep axis");
    add_common(w, swp);

    std::string ra, rb, ca = kHeuristic, cb, cout;
    auto* c = app.add_subcommand("compare", "Paired per-scenario deltas between two reports");
    c->add_option("report_a", ra, "Baseline report.json")->required()->check(CLI::ExistingFile);
    c->add_option("report_b", rb, "Compared report.json")->required()->check(CLI::ExistingFile);
    c->add_option("--controller-a", ca, "Controller taken from report_a");
    c->add_option("--controller-b", cb, "Controller taken from report_b (default: same as --controller-a)");
    c->add_option("-o,--output", cout, "Write the delta table as JSON");

    std::string net;
    auto* v = app.add_subcommand("validate-network", "Parse and check a feeder file");
    v->add_option("network", net, "Feeder file (JSON)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kFailure;
    }

    try {
        if (*s) return simulate(sim);
        if (*w) return sweep(swp);
        if (*c) return compare(ra, rb, ca, cb, cout);
        if (*v) return validate_network(net);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
