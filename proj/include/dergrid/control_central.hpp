#pragma once

#include <span>
#include <vector>

#include "window.hpp"

namespace dergrid {

// Network-wide controller: one program over all consumers per window with
// voltage and transformer penalties evaluated through the surrogate model.

struct CentralOptions {
    PenaltyWeights weights;
    MetricLimits limits;
    qp::Settings solver;
    long window_days = 2;
};

struct CentralRun {
    DispatchSchedule schedule;
    std::vector<WindowLog> windows;
};

inline CentralRun run_central(const Scenario& sc, const NetworkModel& net, const LinearPFModel& model,
                              std::span<const double> ratings, const CentralOptions& opt = {}) {
    const auto grid = make_grid_terms(net, model, ratings, opt.limits);
    std::vector<NodeContext> ctxs;
    CentralRun r;
    r.schedule.controller = "central";
    for (std::size_t c = 0; c < sc.loads.size(); ++c) {
        ctxs.push_back(make_context(sc, c));
        r.schedule.nodes.push_back(idle_dispatch(ctxs.back()));
    }
    RecedingOptions ro;
    ro.weights = opt.weights;
    ro.solver = opt.solver;
    ro.window_days = opt.window_days;
    r.windows = run_receding(ctxs, r.schedule.nodes, ro, &grid, &r.schedule.fallback_days);
    return r;
}

}  // namespace dergrid
