#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "core.hpp"
#include "powerflow.hpp"
#include "scenario.hpp"

namespace dergrid {

/// Controller output for one consumer node over the full horizon.
struct NodeDispatch {
    std::size_t consumer = 0;
    std::vector<double> u;                  // flexible consumption, kW
    std::vector<double> st_c, st_d, st_q;   // storage charge/discharge kW and energy after the step (empty without storage)
    std::vector<double> ev_kw;              // total EV charging, kW
    std::vector<std::size_t> events;        // indices into Scenario::ev_events
    std::vector<std::vector<double>> ev_c;  // per event, kW over [start, end)

    bool has_storage() const { return !st_c.empty(); }
};

struct DispatchSchedule {
    std::string controller;
    std::vector<NodeDispatch> nodes;  // one per consumer, scenario order
    std::vector<long> fallback_days;  // days committed from the heuristic after a solver failure
};

/// Static per-consumer data shared by all controllers.
struct NodeContext {
    const Scenario* sc = nullptr;
    std::size_t consumer = 0;
    std::vector<double> pv;  // kW
    std::vector<std::size_t> events;
    std::optional<std::size_t> storage;
    const TariffSchedule* tariff = nullptr;
    const TariffSchedule* ev_tariff = nullptr;
    bool ev_separate = false;  // EV on its own meter (EV-TOU)
    double phi = 0.0;
    double u_max = 0.0;

    const NodeLoad& load() const { return sc->loads[consumer]; }
    const std::vector<double>& fixed() const { return load().fixed_kw; }
    const std::vector<double>& u_base() const { return load().thermal_kw; }
    long steps() const { return sc->steps(); }
};

inline NodeContext make_context(const Scenario& sc, std::size_t consumer) {
    NodeContext c;
    c.sc = &sc;
    c.consumer = consumer;
    c.pv.assign(static_cast<std::size_t>(sc.steps()), 0.0);
    for (const auto& u : sc.pv)
        if (u.consumer == consumer)
            for (std::size_t t = 0; t < c.pv.size(); ++t) c.pv[t] += u.capacity_kw * sc.pv_shape[t];
    for (std::size_t e = 0; e < sc.ev_events.size(); ++e)
        if (sc.ev_events[e].consumer == consumer) c.events.push_back(e);
    for (std::size_t s = 0; s < sc.storage.size(); ++s)
        if (sc.storage[s].consumer == consumer) {
            if (c.storage) throw ScenarioError("more than one storage unit on a consumer node");
            c.storage = s;
        }
    c.tariff = &sc.class_tariff(consumer);
    c.ev_separate = sc.ev_tou(consumer);
    c.ev_tariff = c.ev_separate ? &sc.tariffs.ev_tou : c.tariff;
    for (const auto& f : sc.flexible)
        if (f.consumer == consumer) {
            c.phi = f.phi;
            c.u_max = f.u_max_kw;
        }
    return c;
}

/// Passive dispatch: no device acts, flexible load follows its base profile.
inline NodeDispatch idle_dispatch(const NodeContext& ctx) {
    const auto T = static_cast<std::size_t>(ctx.steps());
    NodeDispatch nd;
    nd.consumer = ctx.consumer;
    nd.u = ctx.u_base();
    nd.ev_kw.assign(T, 0.0);
    nd.events = ctx.events;
    for (auto e : ctx.events) {
        const auto& ev = ctx.sc->ev_events[e];
        nd.ev_c.emplace_back(static_cast<std::size_t>(ev.end - ev.start), 0.0);
    }
    if (ctx.storage) {
        nd.st_c.assign(T, 0.0);
        nd.st_d.assign(T, 0.0);
        nd.st_q.assign(T, 0.0);
        const auto& s = ctx.sc->storage[*ctx.storage];
        double q = s.initial_kwh;
        for (auto& v : nd.st_q) v = q = s.leakage * q;
    }
    return nd;
}

inline void rebuild_ev_total(NodeDispatch& nd, const Scenario& sc) {
    std::fill(nd.ev_kw.begin(), nd.ev_kw.end(), 0.0);
    for (std::size_t k = 0; k < nd.events.size(); ++k) {
        const auto& ev = sc.ev_events[nd.events[k]];
        for (long t = ev.start; t < ev.end; ++t) nd.ev_kw[static_cast<std::size_t>(t)] += nd.ev_c[k][static_cast<std::size_t>(t - ev.start)];
    }
}

/// Real power behind the class meter (EV excluded when it has its own meter).
inline double class_net(const NodeContext& ctx, const NodeDispatch& nd, std::size_t t) {
    double p = ctx.fixed()[t] + nd.u[t] - ctx.pv[t];
    if (nd.has_storage()) p += nd.st_c[t] - nd.st_d[t];
    if (!ctx.ev_separate) p += nd.ev_kw[t];
    return p;
}

inline double node_net(const NodeContext& ctx, const NodeDispatch& nd, std::size_t t) {
    double p = ctx.fixed()[t] + nd.u[t] - ctx.pv[t] + nd.ev_kw[t];
    if (nd.has_storage()) p += nd.st_c[t] - nd.st_d[t];
    return p;
}

/// Electricity bill in $: positive part of metered energy times the tier price.
inline double node_cost(const NodeContext& ctx, const NodeDispatch& nd) {
    double cost = 0.0;
    for (std::size_t t = 0; t < nd.u.size(); ++t) {
        cost += ctx.tariff->price_at(static_cast<long>(t)) * positive_part(class_net(ctx, nd, t)) * kStepHours;
        if (ctx.ev_separate) cost += ctx.ev_tariff->price_at(static_cast<long>(t)) * nd.ev_kw[t] * kStepHours;
    }
    return cost;
}

struct CostSummary {
    std::vector<double> per_node;
    double total = 0.0;
};

inline CostSummary schedule_cost(const Scenario& sc, const DispatchSchedule& s) {
    CostSummary out;
    for (const auto& nd : s.nodes) {
        const auto ctx = make_context(sc, nd.consumer);
        out.per_node.push_back(node_cost(ctx, nd));
        out.total += out.per_node.back();
    }
    return out;
}

/// Total network real consumption per step (sum of consumer net injections).
inline std::vector<double> network_consumption(const Scenario& sc, const DispatchSchedule& s) {
    std::vector<double> out(static_cast<std::size_t>(sc.steps()), 0.0);
    for (const auto& nd : s.nodes) {
        const auto ctx = make_context(sc, nd.consumer);
        for (std::size_t t = 0; t < out.size(); ++t) out[t] += node_net(ctx, nd, t);
    }
    return out;
}

/// Injection frames for the power-flow module. Reactive demand follows the
/// uncontrolled base demand at the node's power factor.
inline std::vector<InjectionFrame> injection_frames(const NetworkModel& net, const Scenario& sc, const DispatchSchedule& s) {
    const auto T = static_cast<std::size_t>(sc.steps());
    std::vector<InjectionFrame> frames(T);
    for (std::size_t t = 0; t < T; ++t) {
        frames[t].step = static_cast<long>(t);
        frames[t].p_kw.assign(net.node_count(), 0.0);
        frames[t].q_kvar.assign(net.node_count(), 0.0);
    }
    for (const auto& nd : s.nodes) {
        const auto ctx = make_context(sc, nd.consumer);
        const auto node = sc.loads[nd.consumer].node;
        for (std::size_t t = 0; t < T; ++t) {
            frames[t].p_kw[node] += node_net(ctx, nd, t);
            frames[t].q_kvar[node] += sc.loads[nd.consumer].reactive(t);
        }
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Constraint audit

struct AuditTolerance {
    double power = 1e-7;       // kW slack on device bounds
    double energy = 1e-6;      // kWh on EV terminal energy and storage bounds
    double flex_relative = 1e-6;
};

/// Checks every device constraint; returns one message per violation.
inline std::vector<std::string> audit_schedule(const Scenario& sc, const DispatchSchedule& sched, AuditTolerance tol = {}) {
    std::vector<std::string> bad;
    auto report = [&](std::size_t consumer, const std::string& what, long t) {
        if (bad.size() < 200) bad.push_back("consumer " + std::to_string(consumer) + " t=" + std::to_string(t) + ": " + what);
    };
    const auto T = static_cast<std::size_t>(sc.steps());
    if (sched.nodes.size() != sc.loads.size()) bad.push_back("schedule does not cover every consumer");
    for (const auto& nd : sched.nodes) {
        const auto ctx = make_context(sc, nd.consumer);
        const auto& ub = ctx.u_base();
        if (nd.u.size() != T) {
            report(nd.consumer, "flexible series has wrong length", -1);
            continue;
        }
        for (std::size_t t = 0; t < T; ++t) {
            if (nd.u[t] < -tol.power) report(nd.consumer, "u below zero", static_cast<long>(t));
            if (ctx.phi > 0.0 && nd.u[t] > ctx.u_max + tol.power) report(nd.consumer, "u above u_max", static_cast<long>(t));
        }
        for (std::size_t d = 0; d < T / kStepsPerDay; ++d) {
            double su = 0.0, sb = 0.0, dev = 0.0;
            for (std::size_t k = 0; k < kStepsPerDay; ++k) {
                const auto t = d * kStepsPerDay + k;
                su += nd.u[t];
                sb += ub[t];
                dev += std::abs(nd.u[t] - ub[t]);
            }
            const double scale = std::max(sb, 1e-9);
            if (std::abs(su - sb) > tol.flex_relative * scale + 1e-9)
                report(nd.consumer, "daily flexible energy not conserved (" + format_double(su - sb) + ")", static_cast<long>(d * kStepsPerDay));
            if (0.5 * dev > ctx.phi * sb + tol.flex_relative * scale + 1e-9)
                report(nd.consumer, "flexible deviation budget exceeded", static_cast<long>(d * kStepsPerDay));
        }
        if (ctx.storage) {
            const auto& s = sc.storage[*ctx.storage];
            if (!nd.has_storage()) {
                report(nd.consumer, "storage schedule missing", -1);
            } else {
                double q = s.initial_kwh;
                for (std::size_t t = 0; t < T; ++t) {
                    if (nd.st_c[t] < -tol.power || nd.st_c[t] > s.max_power_kw() + tol.power)
                        report(nd.consumer, "storage charge out of bounds", static_cast<long>(t));
                    if (nd.st_d[t] < -tol.power || nd.st_d[t] > s.max_power_kw() + tol.power)
                        report(nd.consumer, "storage discharge out of bounds", static_cast<long>(t));
                    q = s.leakage * q + s.charge_efficiency * nd.st_c[t] * kStepHours - nd.st_d[t] * kStepHours / s.discharge_efficiency;
                    if (std::abs(q - nd.st_q[t]) > tol.energy) report(nd.consumer, "storage energy inconsistent with dynamics", static_cast<long>(t));
                    if (nd.st_q[t] < s.min_kwh - tol.energy || nd.st_q[t] > s.capacity_kwh + tol.energy)
                        report(nd.consumer, "storage energy out of bounds", static_cast<long>(t));
                    q = nd.st_q[t];
                }
            }
        } else if (nd.has_storage()) {
            report(nd.consumer, "storage schedule on a node without storage", -1);
        }
        if (nd.events != ctx.events) {
            report(nd.consumer, "EV event list mismatch", -1);
            continue;
        }
        std::vector<double> total(T, 0.0);
        for (std::size_t k = 0; k < nd.events.size(); ++k) {
            const auto& ev = sc.ev_events[nd.events[k]];
            const auto& c = nd.ev_c[k];
            if (static_cast<long>(c.size()) != ev.end - ev.start) {
                report(nd.consumer, "EV series has wrong length", ev.start);
                continue;
            }
            double delivered = 0.0;
            for (std::size_t j = 0; j < c.size(); ++j) {
                if (c[j] < -tol.power || c[j] > ev.c_max_kw + tol.power)
                    report(nd.consumer, "EV charge out of bounds", ev.start + static_cast<long>(j));
                delivered += c[j] * kStepHours;
                total[static_cast<std::size_t>(ev.start) + j] += c[j];
            }
            const double got = delivered * sc.ev_efficiency;
            if (std::abs(got - ev.energy_kwh) > tol.energy)
                report(nd.consumer, "EV terminal energy off by " + format_double(got - ev.energy_kwh) + " kWh", ev.end);
        }
        for (std::size_t t = 0; t < T; ++t)
            if (std::abs(total[t] - nd.ev_kw[t]) > tol.power) report(nd.consumer, "EV total inconsistent", static_cast<long>(t));
    }
    return bad;
}

/// Delimited audit log: one row per consumer and step.
inline void write_audit(std::ostream& os, const Scenario& sc, const DispatchSchedule& sched) {
    os << "consumer,t,storage_c,storage_d,storage_q,ev_c,u,u_base,net\n";
    for (const auto& nd : sched.nodes) {
        const auto ctx = make_context(sc, nd.consumer);
        for (std::size_t t = 0; t < nd.u.size(); ++t) {
            os << nd.consumer << ',' << t << ',';
            if (nd.has_storage())
                os << format_double(nd.st_c[t]) << ',' << format_double(nd.st_d[t]) << ',' << format_double(nd.st_q[t]);
            else
                os << ",,";
            os << ',' << format_double(nd.ev_kw[t]) << ',' << format_double(nd.u[t]) << ',' << format_double(ctx.u_base()[t])
               << ',' << format_double(node_net(ctx, nd, t)) << '\n';
        }
    }
}

/// Per-event EV charging log: one row per event and plugged-in step.
inline void write_ev_log(std::ostream& os, const Scenario& sc, const DispatchSchedule& sched) {
    os << "event,consumer,t,kw\n";
    for (const auto& nd : sched.nodes)
        for (std::size_t k = 0; k < nd.events.size(); ++k)
            for (std::size_t j = 0; j < nd.ev_c[k].size(); ++j)
                os << nd.events[k] << ',' << nd.consumer << ',' << sc.ev_events[nd.events[k]].start + static_cast<long>(j) << ',' << format_double(nd.ev_c[k][j]) << '\n';
}

// ---------------------------------------------------------------------------
// Projection of near-feasible solver output onto the device constraints

/// Restores daily energy balance and the deviation budget for each day in [day_begin, day_end).
inline void repair_flexible(const NodeContext& ctx, NodeDispatch& nd, long day_begin, long day_end) {
    const auto& ub = ctx.u_base();
    for (long d = day_begin; d < day_end; ++d) {
        const auto a = static_cast<std::size_t>(d * kStepsPerDay), b = a + kStepsPerDay;
        if (ctx.phi <= 0.0) {
            std::copy(ub.begin() + static_cast<long>(a), ub.begin() + static_cast<long>(b), nd.u.begin() + static_cast<long>(a));
            continue;
        }
        for (auto t = a; t < b; ++t) nd.u[t] = std::clamp(nd.u[t], 0.0, std::max(ctx.u_max, ub[t]));
        double su = 0.0, sb = 0.0;
        for (auto t = a; t < b; ++t) {
            su += nd.u[t];
            sb += ub[t];
        }
        double diff = sb - su;
        if (diff > 0.0) {
            double room = 0.0;
            for (auto t = a; t < b; ++t) room += std::max(ctx.u_max, ub[t]) - nd.u[t];
            if (room > 0.0)
                for (auto t = a; t < b; ++t) nd.u[t] += diff * (std::max(ctx.u_max, ub[t]) - nd.u[t]) / room;
        } else if (diff < 0.0 && su > 0.0) {
            const double f = sb / su;
            for (auto t = a; t < b; ++t) nd.u[t] *= f;
        }
        double dev = 0.0;
        for (auto t = a; t < b; ++t) dev += std::abs(nd.u[t] - ub[t]);
        const double budget = 2.0 * ctx.phi * sb;
        if (dev > budget) {
            const double f = budget / dev * (1.0 - 1e-12);
            for (auto t = a; t < b; ++t) nd.u[t] = ub[t] + f * (nd.u[t] - ub[t]);
        }
    }
}

/// Clips storage powers and recomputes the energy trajectory over [a, b).
inline void repair_storage(const NodeContext& ctx, NodeDispatch& nd, long a, long b) {
    if (!ctx.storage) return;
    const auto& s = ctx.sc->storage[*ctx.storage];
    const double pmax = s.max_power_kw();
    double q = a == 0 ? s.initial_kwh : nd.st_q[static_cast<std::size_t>(a - 1)];
    for (long t = a; t < b; ++t) {
        const auto i = static_cast<std::size_t>(t);
        double c = std::clamp(nd.st_c[i], 0.0, pmax), d = std::clamp(nd.st_d[i], 0.0, pmax);
        const double base = s.leakage * q;
        double nq = base + s.charge_efficiency * c * kStepHours - d * kStepHours / s.discharge_efficiency;
        if (nq > s.capacity_kwh) {
            const double over = nq - s.capacity_kwh;
            const double cut_c = std::min(c, over / (s.charge_efficiency * kStepHours));
            c -= cut_c;
            nq -= cut_c * s.charge_efficiency * kStepHours;
            if (nq > s.capacity_kwh) {
                const double add_d = std::min(pmax - d, (nq - s.capacity_kwh) * s.discharge_efficiency / kStepHours);
                d += add_d;
            }
        } else if (nq < s.min_kwh) {
            const double under = s.min_kwh - nq;
            const double cut_d = std::min(d, under * s.discharge_efficiency / kStepHours);
            d -= cut_d;
            nq += cut_d * kStepHours / s.discharge_efficiency;
            if (nq < s.min_kwh) c += std::min(pmax - c, (s.min_kwh - nq) / (s.charge_efficiency * kStepHours));
        }
        nd.st_c[i] = c;
        nd.st_d[i] = d;
        q = base + s.charge_efficiency * c * kStepHours - d * kStepHours / s.discharge_efficiency;
        q = std::clamp(q, s.min_kwh, s.capacity_kwh);
        nd.st_q[i] = q;
    }
}

/// Clips EV powers in [a, b). Events ending inside the range get exactly
/// their energy; events continuing past `b` stay completable.
inline void repair_ev(const NodeContext& ctx, NodeDispatch& nd, long a, long b) {
    const auto& sc = *ctx.sc;
    const double eta = sc.ev_efficiency;
    for (std::size_t k = 0; k < nd.events.size(); ++k) {
        const auto& ev = sc.ev_events[nd.events[k]];
        if (ev.end <= a || ev.start >= b) continue;
        auto& c = nd.ev_c[k];
        const long lo = std::max(ev.start, a), hi = std::min(ev.end, b);
        double before = 0.0;
        for (long t = ev.start; t < lo; ++t) before += c[static_cast<std::size_t>(t - ev.start)];
        double seg = 0.0;
        for (long t = lo; t < hi; ++t) {
            auto& v = c[static_cast<std::size_t>(t - ev.start)];
            v = std::clamp(v, 0.0, ev.c_max_kw);
            seg += v;
        }
        const double need = ev.energy_kwh / (eta * kStepHours) - before;  // kW-steps still owed
        const double later_room = static_cast<double>(ev.end - hi) * ev.c_max_kw;
        const double lo_target = std::max(0.0, need - later_room);
        const double hi_target = ev.end <= b ? lo_target : need;
        const double target = std::clamp(seg, lo_target, std::max(lo_target, hi_target));
        if (ev.end <= b || seg != target) {
            const double goal = ev.end <= b ? std::max(0.0, need) : target;
            double diff = goal - seg;
            for (int pass = 0; pass < 4 && std::abs(diff) > 0.0; ++pass) {
                double room = 0.0;
                for (long t = lo; t < hi; ++t) {
                    const double v = c[static_cast<std::size_t>(t - ev.start)];
                    room += diff > 0.0 ? ev.c_max_kw - v : v;
                }
                if (room <= 0.0) break;
                const double f = std::min(1.0, std::abs(diff) / room);
                for (long t = lo; t < hi; ++t) {
                    auto& v = c[static_cast<std::size_t>(t - ev.start)];
                    v += diff > 0.0 ? f * (ev.c_max_kw - v) : -f * v;
                }
                seg = 0.0;
                for (long t = lo; t < hi; ++t) seg += c[static_cast<std::size_t>(t - ev.start)];
                diff = goal - seg;
            }
        }
    }
    for (long t = a; t < b; ++t) nd.ev_kw[static_cast<std::size_t>(t)] = 0.0;
    for (std::size_t k = 0; k < nd.events.size(); ++k) {
        const auto& ev = sc.ev_events[nd.events[k]];
        for (long t = std::max(ev.start, a); t < std::min(ev.end, b); ++t)
            nd.ev_kw[static_cast<std::size_t>(t)] += nd.ev_c[k][static_cast<std::size_t>(t - ev.start)];
    }
}

inline void repair_days(const NodeContext& ctx, NodeDispatch& nd, long day_begin, long day_end) {
    repair_flexible(ctx, nd, day_begin, day_end);
    repair_storage(ctx, nd, day_begin * kStepsPerDay, day_end * kStepsPerDay);
    repair_ev(ctx, nd, day_begin * kStepsPerDay, day_end * kStepsPerDay);
}

}  // namespace dergrid
