#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "dispatch.hpp"

namespace dergrid {

// Myopic per-node rule controller. Besides the present step it only uses the
// tariff calendar, the current EV departure time, the flexible fraction and
// the day's base thermal schedule.

struct FlexiblePlan {
    std::vector<double> u;       // planned flexible consumption for the day
    std::vector<bool> zone;      // steps the plan takes load away from
    double removed = 0.0;        // kW-steps removed (equals kW-steps repaid)
};

/// Daily flexible-load plan: cut peak-tier load (and then the nearest
/// part-peak steps) up to the budget, repaying each contiguous cut block
/// equally over the hour before and the hour after it, within the day.
inline FlexiblePlan plan_flexible_day(std::span<const double> u_base, std::span<const Tier> tiers, double phi, double u_max) {
    const std::size_t n = u_base.size();
    FlexiblePlan plan;
    plan.u.assign(u_base.begin(), u_base.end());
    plan.zone.assign(n, false);
    const double total = std::accumulate(u_base.begin(), u_base.end(), 0.0);
    double budget = phi * total;
    if (budget <= 0.0) return plan;

    std::vector<double> cut(n, 0.0);
    double peak_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (tiers[k] == Tier::peak) {
            plan.zone[k] = true;
            peak_sum += u_base[k];
        }
    if (peak_sum >= budget) {
        const double f = budget / peak_sum;
        for (std::size_t k = 0; k < n; ++k)
            if (plan.zone[k]) cut[k] = f * u_base[k];
        budget = 0.0;
    } else {
        for (std::size_t k = 0; k < n; ++k)
            if (plan.zone[k]) cut[k] = u_base[k];
        budget -= peak_sum;
        // Part-peak steps by distance to the nearest peak step; earliest first on ties.
        std::vector<std::pair<std::size_t, std::size_t>> part;  // (distance, step)
        for (std::size_t k = 0; k < n; ++k) {
            if (tiers[k] != Tier::part_peak) continue;
            std::size_t best = n + 1;
            for (std::size_t j = 0; j < n; ++j)
                if (tiers[j] == Tier::peak) best = std::min(best, k > j ? k - j : j - k);
            part.emplace_back(best, k);
        }
        std::sort(part.begin(), part.end());
        for (const auto& [dist, k] : part) {
            if (budget <= 0.0) break;
            plan.zone[k] = true;
            cut[k] = std::min(u_base[k], budget);
            budget -= cut[k];
        }
    }

    // Contiguous zone blocks and their repayment windows.
    std::vector<double> pay(n, 0.0);
    for (std::size_t a = 0; a < n;) {
        if (!plan.zone[a]) {
            ++a;
            continue;
        }
        std::size_t b = a;
        while (b < n && plan.zone[b]) ++b;
        double removed = 0.0;
        for (std::size_t k = a; k < b; ++k) removed += cut[k];
        std::vector<std::size_t> slots;
        for (std::size_t k = a >= 4 ? a - 4 : 0; k < a; ++k) slots.push_back(k);
        for (std::size_t k = b; k < std::min(n, b + 4); ++k) slots.push_back(k);
        double room = 0.0;
        for (auto k : slots) room += std::max(0.0, u_max - u_base[k] - pay[k]);
        if (removed > room) {
            // Not enough headroom to repay: cut less.
            const double f = room / removed;
            for (std::size_t k = a; k < b; ++k) cut[k] *= f;
            removed = room;
        }
        // Equal split, water-filling around the u_max cap.
        double left = removed;
        std::vector<std::size_t> open = slots;
        while (left > 1e-15 && !open.empty()) {
            const double share = left / static_cast<double>(open.size());
            std::vector<std::size_t> still;
            for (auto k : open) {
                const double cap = std::max(0.0, u_max - u_base[k] - pay[k]);
                const double add = std::min(share, cap);
                pay[k] += add;
                left -= add;
                if (cap > share) still.push_back(k);
            }
            if (still.size() == open.size()) break;
            open = std::move(still);
        }
        plan.removed += removed;
        a = b;
    }
    for (std::size_t k = 0; k < n; ++k) plan.u[k] = u_base[k] - cut[k] + pay[k];
    return plan;
}

/// Sequential rule controller for one node.
class HeuristicNode {
public:
    explicit HeuristicNode(const NodeContext& ctx) : ctx_(&ctx) {
        out_ = idle_dispatch(ctx);
        if (ctx.storage) q_ = ctx.sc->storage[*ctx.storage].initial_kwh;
        delivered_.assign(ctx.events.size(), 0.0);
    }

    /// Advances one step; must be called for t = 0, 1, 2, ...
    void step(long t) {
        const auto& ctx = *ctx_;
        const auto& sc = *ctx.sc;
        const auto i = static_cast<std::size_t>(t);
        if (t % kStepsPerDay == 0) start_day(t / kStepsPerDay);
        const std::size_t k = static_cast<std::size_t>(t % kStepsPerDay);

        double u = day_plan_[k];
        double excess = ctx.pv[i] - ctx.fixed()[i] - u;
        const bool has_excess = excess > 0.0;
        const double eta = sc.ev_efficiency;

        // Active EVs, earliest departure first.
        std::vector<std::size_t> act;
        for (std::size_t e = 0; e < ctx.events.size(); ++e) {
            const auto& ev = sc.ev_events[ctx.events[e]];
            if (ev.start <= t && t < ev.end) act.push_back(e);
        }
        std::stable_sort(act.begin(), act.end(), [&](std::size_t a, std::size_t b) {
            return sc.ev_events[ctx.events[a]].end < sc.ev_events[ctx.events[b]].end;
        });
        double ev_class = 0.0;
        for (auto e : act) {
            const auto& ev = sc.ev_events[ctx.events[e]];
            const double need = std::max(0.0, ev.energy_kwh - delivered_[e]) / (eta * kStepHours);  // kW-steps
            const double left = static_cast<double>(ev.end - t);
            const double must = std::max(0.0, need - ev.c_max_kw * (left - 1.0));
            double c;
            if (has_excess && excess > 0.0 && !ctx.ev_separate) {
                c = std::min({ev.c_max_kw, need, excess});
            } else {
                c = cheapest_slot_rate(ev, t, need);
            }
            c = std::min(std::max(c, must), std::min(ev.c_max_kw, need));
            if (!ctx.ev_separate) {
                excess -= c;
                ev_class += c;
            }
            delivered_[e] += c * eta * kStepHours;
            out_.ev_c[e][static_cast<std::size_t>(t - ev.start)] = c;
            out_.ev_kw[i] += c;
        }

        future_payback_ = std::max(0.0, future_payback_ - day_pay_[k]);
        if (has_excess && excess > 0.0 && future_payback_ > 0.0) {
            // Run flexible load on surplus PV, drawn from later repayment.
            const double x = std::min({excess, std::max(0.0, ctx.u_max - u), future_payback_, peak_flex_});
            if (x > 0.0) {
                const double f = 1.0 - x / future_payback_;
                for (std::size_t j = k + 1; j < day_pay_.size(); ++j) {
                    const double before = day_pay_[j];
                    day_pay_[j] *= f;
                    day_plan_[j] -= before - day_pay_[j];
                }
                future_payback_ -= x;
                peak_flex_ -= x;
                u += x;
                excess -= x;
            }
        }
        out_.u[i] = u;

        if (ctx.storage) {
            const auto& s = sc.storage[*ctx.storage];
            const double pmax = s.max_power_kw();
            const double kept = s.leakage * q_;
            double c = 0.0, d = 0.0;
            if (has_excess) {
                c = std::min({std::max(0.0, excess), pmax, std::max(0.0, s.capacity_kwh - kept) / (s.charge_efficiency * kStepHours)});
            } else if (ctx.tariff->tier_at(t) == Tier::peak) {
                const double demand = ctx.fixed()[i] + u + ev_class - ctx.pv[i];
                d = std::min({pmax, std::max(0.0, demand), std::max(0.0, kept - s.min_kwh) * s.discharge_efficiency / kStepHours});
            } else {
                c = storage_slot_rate(s, kept, t);
            }
            q_ = kept + s.charge_efficiency * c * kStepHours - d * kStepHours / s.discharge_efficiency;
            q_ = std::clamp(q_, s.min_kwh, s.capacity_kwh);
            out_.st_c[i] = c;
            out_.st_d[i] = d;
            out_.st_q[i] = q_;
        }
    }

    /// Continues from externally committed state; the next step must start a day.
    void resume(double storage_kwh, std::vector<double> delivered_kwh) {
        q_ = storage_kwh;
        delivered_ = std::move(delivered_kwh);
    }

    const NodeDispatch& result() const { return out_; }
    double storage_energy() const { return q_; }
    const std::vector<double>& ev_delivered() const { return delivered_; }

private:
    void start_day(long day) {
        const auto& ctx = *ctx_;
        const auto a = static_cast<std::size_t>(day * kStepsPerDay);
        std::span<const double> ub(ctx.u_base().data() + a, kStepsPerDay);
        auto plan = plan_flexible_day(ub, ctx.tariff->tiers, ctx.phi, ctx.u_max);
        day_plan_ = plan.u;
        day_pay_.assign(kStepsPerDay, 0.0);
        future_payback_ = 0.0;
        peak_flex_ = 0.0;
        for (std::size_t k = 0; k < kStepsPerDay; ++k) {
            day_pay_[k] = std::max(0.0, plan.u[k] - ub[k]);
            future_payback_ += day_pay_[k];
            if (ctx.tariff->tiers[k] == Tier::peak) peak_flex_ += ub[k];
        }
        peak_flex_ = std::min(peak_flex_, future_payback_);
    }

    /// Rate for step t under the cheapest-slot EV plan (earliest slot on price ties).
    double cheapest_slot_rate(const EvEvent& ev, long t, double need) const {
        if (need <= 0.0) return 0.0;
        const auto& tariff = *ctx_->ev_tariff;
        std::vector<long> slots;
        for (long s = t; s < ev.end; ++s) slots.push_back(s);
        std::stable_sort(slots.begin(), slots.end(),
                         [&](long a, long b) { return tariff.price_at(a) < tariff.price_at(b); });
        const auto rank = static_cast<double>(std::find(slots.begin(), slots.end(), t) - slots.begin());
        const double full = std::floor(need / ev.c_max_kw + 1e-12);
        if (rank < full) return ev.c_max_kw;
        if (rank == full) return need - full * ev.c_max_kw;
        return 0.0;
    }

    /// Grid charging so the unit is full when the next peak window opens.
    /// Charges in the cheapest slots before it, latest slot first on ties.
    double storage_slot_rate(const StorageUnit& s, double kept, long t) const {
        const auto& tariff = *ctx_->tariff;
        long peak = t;
        const long limit = t + 2 * kStepsPerDay;
        while (peak < limit && tariff.tier_at(peak) != Tier::peak) ++peak;
        if (peak == limit) return 0.0;
        const double need = std::max(0.0, s.capacity_kwh - kept) / (s.charge_efficiency * kStepHours);
        if (need <= 1e-12) return 0.0;
        std::vector<long> slots;
        for (long x = peak - 1; x >= t; --x) slots.push_back(x);
        std::stable_sort(slots.begin(), slots.end(),
                         [&](long a, long b) { return tariff.price_at(a) < tariff.price_at(b); });
        const double pmax = s.max_power_kw();
        const auto rank = static_cast<double>(std::find(slots.begin(), slots.end(), t) - slots.begin());
        const double full = std::floor(need / pmax + 1e-12);
        if (rank < full) return pmax;
        if (rank == full) return need - full * pmax;
        return 0.0;
    }

    const NodeContext* ctx_;
    NodeDispatch out_;
    double q_ = 0.0;
    std::vector<double> delivered_;
    std::vector<double> day_plan_;
    std::vector<double> day_pay_;
    double future_payback_ = 0.0;
    double peak_flex_ = 0.0;
};

inline NodeDispatch run_heuristic_node(const NodeContext& ctx) {
    HeuristicNode h(ctx);
    for (long t = 0; t < ctx.steps(); ++t) h.step(t);
    return h.result();
}

inline DispatchSchedule run_heuristic(const Scenario& sc) {
    DispatchSchedule s;
    s.controller = "local-heuristic";
    for (std::size_t c = 0; c < sc.loads.size(); ++c) s.nodes.push_back(run_heuristic_node(make_context(sc, c)));
    return s;
}

}  // namespace dergrid
