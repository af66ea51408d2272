#pragma once

#include <span>
#include <string>
#include <vector>

#include "control_central.hpp"
#include "control_local.hpp"
#include "linmodel.hpp"
#include "metrics.hpp"
#include "powerflow.hpp"
#include "scenario.hpp"

namespace dergrid {

/// Transformer ratings: given values, else 1.2 x the apparent-power peak of a
/// baseline run with uncontrolled library loads and no DERs.
inline std::vector<double> transformer_ratings(const NetworkModel& net, const ScenarioConfig& cfg, const ProfileLibrary& lib) {
    bool missing = false;
    for (const auto& t : net.transformers) missing |= !t.rated_kva.has_value();
    std::vector<double> peaks(net.transformer_count(), 0.0);
    if (missing) {
        Rng rng(derive_seed(cfg.library.seed, 0));
        const auto loads = synthesize_baseline_loads(net, lib, rng, cfg.load_match_tolerance, cfg.load_match_fallback, cfg.pf_min,
                                                     cfg.pf_max);
        const auto T = static_cast<std::size_t>(cfg.horizon.steps());
        std::vector<InjectionFrame> frames(T);
        for (std::size_t t = 0; t < T; ++t) {
            frames[t].step = static_cast<long>(t);
            frames[t].p_kw.assign(net.node_count(), 0.0);
            frames[t].q_kvar.assign(net.node_count(), 0.0);
            for (const auto& l : loads) {
                frames[t].p_kw[l.node] += l.demand(t);
                frames[t].q_kvar[l.node] += l.reactive(t);
            }
        }
        for (const auto& s : solve_series(net, frames))
            for (std::size_t k = 0; k < peaks.size(); ++k) peaks[k] = std::max(peaks[k], s.tx_s_kva[k]);
    }
    const auto rated = derive_transformer_capacities(net, peaks);
    std::vector<double> out;
    for (const auto& t : rated.transformers) out.push_back(*t.rated_kva);
    return out;
}

/// Power flow and reliability metrics of a committed schedule.
struct ControllerRun {
    DispatchSchedule schedule;
    std::vector<PowerFlowSolution> flow;
    ScenarioMetrics metrics;
    std::vector<std::string> audit;
};

inline ControllerRun evaluate_schedule(const NetworkModel& net, std::span<const double> ratings, const Scenario& sc,
                                       DispatchSchedule schedule) {
    ControllerRun r;
    r.schedule = std::move(schedule);
    r.flow = solve_series(net, injection_frames(net, sc, r.schedule));
    r.metrics = evaluate_reliability(net, ratings, r.flow);
    r.metrics.cost = schedule_cost(sc, r.schedule).total;
    r.audit = audit_schedule(sc, r.schedule);
    return r;
}

struct Surrogate {
    LinearPFModel model;
    TrainingSet training;
    HoldoutError holdout;
};

/// Fits the surrogate on the local run's peak month and scores it on a
/// held-out fifth of the same samples.
inline Surrogate train_surrogate(const NetworkModel& net, std::span<const double> ratings, const Scenario& sc,
                                 const ControllerRun& local, double ridge = 1e-8) {
    Surrogate s;
    s.training = collect_training_set(net, sc, local.schedule, local.flow);
    const auto split = holdout_split(s.training);
    s.holdout = holdout_error(fit_linear_model(split.train, ridge), split.test, ratings);
    s.model = fit_linear_model(s.training, ridge);
    return s;
}

}  // namespace dergrid
