#pragma once

// Exhaustive dynamic program over a discretized action grid for a single
// node holding one lossless storage unit and at most one EV. Storage energy
// and EV delivered energy are exact multiples of grid * step length.

#include <cmath>
#include <limits>
#include <vector>

#include "dergrid/dispatch.hpp"

namespace oracle {

struct DpResult {
    double objective = std::numeric_limits<double>::infinity();  // sum mu*[net]+ + lambda2 * sum power^2
    std::vector<double> storage_net;                              // c - d per step
    std::vector<double> ev;                                       // EV power per step
};

inline DpResult brute_force(const dergrid::Scenario& sc, double grid_kw, double lambda2) {
    using namespace dergrid;
    const auto ctx = make_context(sc, 0);
    const long T = sc.steps();
    const double unit = grid_kw * kStepHours;  // kWh per grid step
    const auto& st = sc.storage.at(0);
    const int nq = static_cast<int>(std::lround(st.capacity_kwh / unit)) + 1;
    const int q_min = static_cast<int>(std::lround(st.min_kwh / unit));
    const int q0 = static_cast<int>(std::lround(st.initial_kwh / unit));
    const int smax = static_cast<int>(std::floor(st.max_power_kw() / grid_kw + 1e-9));
    const bool has_ev = !sc.ev_events.empty();
    const EvEvent ev = has_ev ? sc.ev_events[0] : EvEvent{};
    const int ne = has_ev ? static_cast<int>(std::lround(ev.energy_kwh / sc.ev_efficiency / unit)) + 1 : 1;
    const int emax = has_ev ? static_cast<int>(std::floor(ev.c_max_kw / grid_kw + 1e-9)) : 0;
    const double inf = std::numeric_limits<double>::infinity();

    auto idx = [&](int q, int e) { return static_cast<std::size_t>(q * ne + e); };
    std::vector<double> cost(static_cast<std::size_t>(nq * ne), inf), next(cost.size());
    std::vector<std::vector<int>> pick_s(static_cast<std::size_t>(T)), pick_e(static_cast<std::size_t>(T));
    std::vector<std::vector<int>> from(static_cast<std::size_t>(T));
    cost[idx(q0, 0)] = 0.0;
    for (long t = 0; t < T; ++t) {
        const auto tz = static_cast<std::size_t>(t);
        std::fill(next.begin(), next.end(), inf);
        pick_s[tz].assign(next.size(), 0);
        pick_e[tz].assign(next.size(), 0);
        from[tz].assign(next.size(), -1);
        const bool active = has_ev && t >= ev.start && t < ev.end;
        const double base = ctx.fixed()[tz] + ctx.u_base()[tz] - ctx.pv[tz];
        const double mu = ctx.tariff->price_at(t);
        for (int q = 0; q < nq; ++q)
            for (int e = 0; e < ne; ++e) {
                const double c0 = cost[idx(q, e)];
                if (!std::isfinite(c0)) continue;
                for (int s = -smax; s <= smax; ++s) {
                    const int q1 = q + s;
                    if (q1 < q_min || q1 >= nq) continue;
                    for (int a = 0; a <= (active ? emax : 0); ++a) {
                        const int e1 = e + a;
                        if (e1 >= ne) break;
                        const double ps = s * grid_kw, pe = a * grid_kw;
                        const double step = mu * std::max(0.0, base + ps + pe) + lambda2 * (ps * ps + pe * pe);
                        const auto k = idx(q1, e1);
                        if (c0 + step < next[k]) {
                            next[k] = c0 + step;
                            pick_s[tz][k] = s;
                            pick_e[tz][k] = a;
                            from[tz][k] = static_cast<int>(idx(q, e));
                        }
                    }
                }
            }
        // EV must be complete when it leaves.
        if (has_ev && t + 1 == ev.end)
            for (int q = 0; q < nq; ++q)
                for (int e = 0; e < ne - 1; ++e) next[idx(q, e)] = inf;
        cost.swap(next);
    }
    DpResult r;
    std::size_t best = 0;
    for (std::size_t k = 0; k < cost.size(); ++k)
        if (cost[k] < cost[best]) best = k;
    r.objective = cost[best];
    r.storage_net.assign(static_cast<std::size_t>(T), 0.0);
    r.ev.assign(static_cast<std::size_t>(T), 0.0);
    for (long t = T - 1; t >= 0 && std::isfinite(r.objective); --t) {
        const auto tz = static_cast<std::size_t>(t);
        r.storage_net[tz] = pick_s[tz][best] * grid_kw;
        r.ev[tz] = pick_e[tz][best] * grid_kw;
        best = static_cast<std::size_t>(from[tz][best]);
    }
    return r;
}

/// The same objective evaluated on a committed schedule.
inline double objective(const dergrid::Scenario& sc, const dergrid::NodeDispatch& nd, double lambda2) {
    using namespace dergrid;
    const auto ctx = make_context(sc, 0);
    double f = 0.0;
    for (std::size_t t = 0; t < nd.u.size(); ++t) {
        f += ctx.tariff->price_at(static_cast<long>(t)) * positive_part(class_net(ctx, nd, t));
        if (nd.has_storage()) f += lambda2 * (nd.st_c[t] + nd.st_d[t]) * (nd.st_c[t] + nd.st_d[t]);
        for (std::size_t k = 0; k < nd.events.size(); ++k) {
            const auto& ev = sc.ev_events[nd.events[k]];
            if (static_cast<long>(t) >= ev.start && static_cast<long>(t) < ev.end) {
                const double c = nd.ev_c[k][t - static_cast<std::size_t>(ev.start)];
                f += lambda2 * c * c;
            }
        }
    }
    return f;
}

}  // namespace oracle
