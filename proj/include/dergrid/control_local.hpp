#pragma once

#include <vector>

#include "heuristic.hpp"
#include "window.hpp"

namespace dergrid {

// Perfect-foresight local optimizer: each node minimizes its own bill plus
// battery wear over receding two-day windows, without grid terms.

struct ForesightOptions {
    PenaltyWeights weights{0.001, 0.0, 0.0, 0.0};
    qp::Settings solver;
    long window_days = 2;
};

struct ForesightResult {
    NodeDispatch dispatch;
    std::vector<WindowLog> windows;
    std::vector<long> fallback_days;
};

inline ForesightResult solve_local_foresight(const NodeContext& ctx, const ForesightOptions& opt = {}) {
    ForesightResult r;
    r.dispatch = idle_dispatch(ctx);
    RecedingOptions ro;
    ro.weights = opt.weights;
    ro.solver = opt.solver;
    ro.window_days = opt.window_days;
    r.windows = run_receding(std::span<const NodeContext>(&ctx, 1), std::span<NodeDispatch>(&r.dispatch, 1), ro, nullptr,
                             &r.fallback_days);
    return r;
}

inline DispatchSchedule run_foresight(const Scenario& sc, const ForesightOptions& opt = {}) {
    DispatchSchedule s;
    s.controller = "local-foresight";
    for (std::size_t c = 0; c < sc.loads.size(); ++c) {
        const auto ctx = make_context(sc, c);
        auto r = solve_local_foresight(ctx, opt);
        s.nodes.push_back(std::move(r.dispatch));
        s.fallback_days.insert(s.fallback_days.end(), r.fallback_days.begin(), r.fallback_days.end());
    }
    std::sort(s.fallback_days.begin(), s.fallback_days.end());
    s.fallback_days.erase(std::unique(s.fallback_days.begin(), s.fallback_days.end()), s.fallback_days.end());
    return s;
}

}  // namespace dergrid
