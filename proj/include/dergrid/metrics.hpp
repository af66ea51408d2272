#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "network.hpp"
#include "powerflow.hpp"

namespace dergrid {

// Relative slack on metric limits so values equal to a limit up to rounding
// (0.95 pu, exactly 120%) stay compliant.
inline constexpr double kLimitSlack = 1e-12;

struct ViolationRecord {
    std::string element;
    bool violated = false;
    std::vector<double> magnitude;  // percent of nominal or rating
    long first = -1;                // first violating step (window start for transformers)
};

/// Violated iff some step deviates from nominal by strictly more than the band.
inline ViolationRecord voltage_violation(std::span<const double> v_pu, std::string element = {}, double band = 0.05) {
    if (v_pu.empty()) throw MetricError("empty voltage series");
    ViolationRecord r;
    r.element = std::move(element);
    r.magnitude.reserve(v_pu.size());
    const double hi = (1.0 + band) * (1.0 + kLimitSlack), lo = (1.0 - band) * (1.0 - kLimitSlack);
    for (std::size_t t = 0; t < v_pu.size(); ++t) {
        r.magnitude.push_back(100.0 * std::abs(v_pu[t] - 1.0));
        if ((v_pu[t] > hi || v_pu[t] < lo) && !r.violated) {
            r.violated = true;
            r.first = static_cast<long>(t);
        }
    }
    return r;
}

/// Violated iff some sliding `window`-step mean exceeds factor x rating.
inline ViolationRecord transformer_violation(std::span<const double> s_kva, double rating_kva, std::string element = {},
                                             double factor = 1.2, std::size_t window = 8) {
    if (s_kva.size() < window) throw MetricError("apparent-power series shorter than one averaging window");
    if (!(rating_kva > 0.0)) throw MetricError("transformer rating must be positive");
    ViolationRecord r;
    r.element = std::move(element);
    r.magnitude.reserve(s_kva.size());
    for (double s : s_kva) r.magnitude.push_back(100.0 * s / rating_kva);
    const double lim = factor * rating_kva * (1.0 + kLimitSlack);
    for (std::size_t a = 0; a + window <= s_kva.size(); ++a) {
        double sum = 0.0;
        for (std::size_t k = a; k < a + window; ++k) sum += s_kva[k];
        if (sum / static_cast<double>(window) > lim) {
            r.violated = true;
            r.first = static_cast<long>(a);
            break;
        }
    }
    return r;
}

inline double peak_load(std::span<const double> series_kw) {
    if (series_kw.empty()) throw MetricError("empty load series");
    return *std::max_element(series_kw.begin(), series_kw.end());
}

/// Real power drawn at the source per step.
inline std::vector<double> source_load(std::span<const PowerFlowSolution> sols) {
    std::vector<double> out;
    out.reserve(sols.size());
    for (const auto& s : sols) out.push_back(s.source_kva.real());
    return out;
}

struct ExceedanceRow {
    double x = 0.0;
    double ccdf = 0.0;  // fraction of element-steps with magnitude > x
};

struct ExceedanceTable {
    std::vector<ExceedanceRow> rows;
    std::size_t samples = 0;
    std::optional<double> violating_mean;  // mean magnitude over element-steps above the threshold
};

inline ExceedanceTable exceedance_histogram(std::span<const ViolationRecord> records, std::span<const double> bin_edges,
                                            double threshold) {
    if (records.empty()) throw MetricError("no violation records");
    std::vector<double> all;
    for (const auto& r : records) all.insert(all.end(), r.magnitude.begin(), r.magnitude.end());
    std::sort(all.begin(), all.end());
    ExceedanceTable t;
    t.samples = all.size();
    for (double x : bin_edges) {
        const auto above = all.end() - std::upper_bound(all.begin(), all.end(), x);
        t.rows.push_back({x, all.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(all.size())});
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (auto it = std::upper_bound(all.begin(), all.end(), threshold); it != all.end(); ++it, ++n) sum += *it;
    if (n > 0) t.violating_mean = sum / static_cast<double>(n);
    return t;
}

struct GroupStats {
    std::size_t count = 0;
    double mean = 0.0;
    std::optional<double> stddev;  // sample standard deviation; absent for one value
};

inline GroupStats group_stats(std::span<const double> values) {
    if (values.empty()) throw MetricError("statistics over an empty group");
    GroupStats g;
    g.count = values.size();
    double s = 0.0;
    for (double v : values) s += v;
    g.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - g.mean) * (v - g.mean);
        g.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return g;
}

struct Aggregate {
    std::map<std::string, GroupStats> per_network;
    double mean = 0.0;             // mean of network means
    std::optional<double> stddev;  // sqrt of the mean per-network variance
};

/// Per-network mean and sample deviation, then across networks the mean of
/// means and the square root of the average variance.
inline Aggregate aggregate(const std::map<std::string, std::vector<double>>& by_network) {
    if (by_network.empty()) throw MetricError("nothing to aggregate");
    Aggregate a;
    double var_sum = 0.0;
    bool all_var = true;
    for (const auto& [name, values] : by_network) {
        const auto g = group_stats(values);
        a.per_network[name] = g;
        a.mean += g.mean;
        if (g.stddev)
            var_sum += *g.stddev * *g.stddev;
        else
            all_var = false;
    }
    const auto n = static_cast<double>(by_network.size());
    a.mean /= n;
    if (all_var) a.stddev = std::sqrt(var_sum / n);
    return a;
}

/// Reliability figures of one simulated scenario.
struct ScenarioMetrics {
    double transformer_violation_pct = 0.0;
    double node_violation_pct = 0.0;
    long transformers_violated = 0;
    long nodes_violated = 0;
    double cost = 0.0;
    double peak_kw = 0.0;
    std::vector<ViolationRecord> transformers;
    std::vector<ViolationRecord> nodes;
};

/// Violation records for every transformer and every non-source node.
inline ScenarioMetrics evaluate_reliability(const NetworkModel& net, std::span<const double> ratings,
                                            std::span<const PowerFlowSolution> sols) {
    if (sols.empty()) throw MetricError("empty power-flow series");
    if (ratings.size() != net.transformer_count()) throw MetricError("one rating per transformer required");
    ScenarioMetrics m;
    std::vector<double> series(sols.size());
    for (std::size_t k = 0; k < net.transformer_count(); ++k) {
        for (std::size_t t = 0; t < sols.size(); ++t) series[t] = sols[t].tx_s_kva[k];
        m.transformers.push_back(transformer_violation(series, ratings[k], net.transformers[k].id));
        m.transformers_violated += m.transformers.back().violated;
    }
    std::vector<bool> source(net.node_count(), false);
    for (auto s : net.source_nodes) source[s] = true;
    for (std::size_t i = 0; i < net.node_count(); ++i) {
        if (source[i]) continue;
        for (std::size_t t = 0; t < sols.size(); ++t) series[t] = sols[t].v_pu[i];
        m.nodes.push_back(voltage_violation(series, net.node_label(i)));
        m.nodes_violated += m.nodes.back().violated;
    }
    if (!m.transformers.empty())
        m.transformer_violation_pct = 100.0 * static_cast<double>(m.transformers_violated) / static_cast<double>(m.transformers.size());
    if (!m.nodes.empty()) m.node_violation_pct = 100.0 * static_cast<double>(m.nodes_violated) / static_cast<double>(m.nodes.size());
    m.peak_kw = peak_load(source_load(sols));
    return m;
}

}  // namespace dergrid
