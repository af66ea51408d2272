#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dispatch.hpp"
#include "heuristic.hpp"
#include "linmodel.hpp"
#include "network.hpp"
#include "qp.hpp"

namespace dergrid {

// Receding-horizon window program shared by the foresight and central
// controllers. Per node and step the program holds flexible load u with its
// deviation w, storage c/d/Q, one charge variable per active EV step, the
// class-meter hinge y, and (with a grid model) the net injection n. Grid
// penalties act on n through the affine surrogate.

struct PenaltyWeights {
    double lambda2 = 0.001;
    double lambda3 = 125.0;
    double lambda4 = 125.0;
    double lambda_flex = 0.001;  // on (u - u_base)^2
};

struct MetricLimits {
    double v_min = 0.95;
    double v_max = 1.05;
    double tx_factor = 1.2;
    double tighten = 0.05;

    double v_min_tight() const { return v_min + 0.5 * tighten * (v_max - v_min); }
    double v_max_tight() const { return v_max - 0.5 * tighten * (v_max - v_min); }
    // Squared apparent power limit in units of rating^2.
    double tau_tight() const { return (1.0 - tighten) * tx_factor * tx_factor; }
};

/// Grid terms for the central program.
struct GridTerms {
    const NetworkModel* net = nullptr;
    const LinearPFModel* model = nullptr;
    std::vector<double> rating;   // kVA per transformer
    std::vector<double> tau_max;  // tightened, in units of rating^2
    double v_min = 0.0;           // tightened band, pu
    double v_max = 0.0;
};

inline GridTerms make_grid_terms(const NetworkModel& net, const LinearPFModel& model, std::span<const double> ratings,
                                 const MetricLimits& lim = {}) {
    if (ratings.size() != net.transformer_count()) throw ConfigError("one rating per transformer required");
    if (model.A.rows() != static_cast<Eigen::Index>(net.node_count()) ||
        model.F.rows() != static_cast<Eigen::Index>(net.transformer_count()) ||
        model.consumers() != static_cast<Eigen::Index>(net.consumer_count()))
        throw ConfigError("surrogate dimensions do not match the network");
    GridTerms g;
    g.net = &net;
    g.model = &model;
    for (double r : ratings) {
        if (!(r > 0.0)) throw ConfigError("transformer rating must be positive");
        g.rating.push_back(r);
        g.tau_max.push_back(std::isfinite(r) ? lim.tau_tight() : qp::kInf);
    }
    g.v_min = lim.v_min_tight();
    g.v_max = lim.v_max_tight();
    return g;
}

namespace detail {

class QpBuilder {
public:
    using Index = Eigen::Index;
    using Terms = std::vector<std::pair<Index, double>>;

    Index var(double lo, double hi, double lin = 0.0) {
        const auto j = static_cast<Index>(q_.size());
        q_.push_back(lin);
        if (std::isfinite(lo) || std::isfinite(hi)) row({{j, 1.0}}, lo, hi);
        return j;
    }
    void quad(Index i, Index j, double v) {
        if (i > j) std::swap(i, j);
        P_.emplace_back(i, j, v);
    }
    Index row(const Terms& terms, double lo, double hi) {
        const auto r = static_cast<Index>(l_.size());
        for (const auto& [j, a] : terms)
            if (a != 0.0) A_.emplace_back(r, j, a);
        l_.push_back(lo);
        u_.push_back(hi);
        return r;
    }

    qp::Problem finish() const {
        qp::Problem p;
        const auto n = static_cast<Index>(q_.size()), m = static_cast<Index>(l_.size());
        p.P.resize(n, n);
        p.P.setFromTriplets(P_.begin(), P_.end());
        p.A.resize(m, n);
        p.A.setFromTriplets(A_.begin(), A_.end());
        p.q = Eigen::Map<const Eigen::VectorXd>(q_.data(), n);
        p.l = Eigen::Map<const Eigen::VectorXd>(l_.data(), m);
        p.u = Eigen::Map<const Eigen::VectorXd>(u_.data(), m);
        return p;
    }

private:
    std::vector<double> q_, l_, u_;
    std::vector<qp::Triplet> P_, A_;
};

}  // namespace detail

/// Variable indices of one node inside a window (-1 when absent).
struct NodeVars {
    bool active = false;
    std::vector<Eigen::Index> u, w, y, n, c, d, q;
    std::vector<std::vector<Eigen::Index>> ev;  // per context event, per window step
    std::vector<double> n_lo, n_hi;             // bounds on net injection
};

/// Squared transformer loading at one window step, in units of rating^2. The
/// excess over the limit is bounded below by tangent planes of the convex
/// loading, added until the plane model is tight at the solution.
struct TransformerTerm {
    Eigen::Index transformer = 0;
    long step = 0;
    Eigen::Index p = 0, q = 0, e = 0;  // flow and excess variables
    double limit = 0.0;
    std::vector<std::pair<double, double>> cuts;
};

struct WindowProblem {
    long first_day = 0;
    long days = 0;
    long t0 = 0;
    long steps = 0;
    std::vector<const NodeContext*> ctx;  // all consumers in the window
    std::vector<NodeVars> vars;
    std::vector<double> storage_q0;                // carried energy per node (NaN without storage)
    std::vector<std::vector<double>> ev_before;    // per node and event: kW-steps committed before t0
    PenaltyWeights weights;
    const GridTerms* grid = nullptr;
    qp::Problem qp;
    long voltage_terms = 0;
    long transformer_terms = 0;
    std::vector<TransformerTerm> tx_terms;
};

/// Appends the tangent plane of p^2 + q^2 at (p0, q0) as a lower bound on the excess.
inline void add_transformer_cut(WindowProblem& wp, TransformerTerm& term, double p0, double q0) {
    auto& A = wp.qp.A;
    const auto m = A.rows();
    std::vector<qp::Triplet> t;
    t.reserve(static_cast<std::size_t>(A.nonZeros()) + 3);
    for (Eigen::Index j = 0; j < A.outerSize(); ++j)
        for (qp::SpMat::InnerIterator it(A, j); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    t.emplace_back(m, term.e, 1.0);
    t.emplace_back(m, term.p, -2.0 * p0);
    t.emplace_back(m, term.q, -2.0 * q0);
    A.resize(m + 1, A.cols());
    A.setFromTriplets(t.begin(), t.end());
    wp.qp.l.conservativeResize(m + 1);
    wp.qp.u.conservativeResize(m + 1);
    wp.qp.l[m] = -(p0 * p0 + q0 * q0) - term.limit;
    wp.qp.u[m] = qp::kInf;
    term.cuts.emplace_back(p0, q0);
}

/// Window trajectories for one node, window-local indexing.
struct NodeWindowPlan {
    std::vector<double> u, c, d, q;
    std::vector<std::vector<double>> ev;  // per context event
};

struct WindowSolution {
    qp::Status status = qp::Status::failed;
    int iterations = 0;
    int cut_rounds = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    std::vector<NodeWindowPlan> plans;
    Eigen::MatrixXd v_hat;    // nodes x steps
    Eigen::MatrixXd tau_hat;  // transformers x steps
    double L1 = 0.0, L2 = 0.0, L3 = 0.0, L4 = 0.0, Lf = 0.0;
    double objective = 0.0;
};

/// Net injection of a node under the plan at window step k.
inline double plan_net(const WindowProblem& wp, std::size_t node, const NodeWindowPlan& p, long k) {
    const auto& ctx = *wp.ctx[node];
    const auto t = static_cast<std::size_t>(wp.t0 + k);
    const auto i = static_cast<std::size_t>(k);
    double v = ctx.fixed()[t] - ctx.pv[t] + p.u[i];
    if (!p.c.empty()) v += p.c[i] - p.d[i];
    for (const auto& e : p.ev) v += e[i];
    return v;
}

inline double plan_class_net(const WindowProblem& wp, std::size_t node, const NodeWindowPlan& p, long k) {
    const auto& ctx = *wp.ctx[node];
    double v = plan_net(wp, node, p, k);
    if (ctx.ev_separate)
        for (const auto& e : p.ev) v -= e[static_cast<std::size_t>(k)];
    return v;
}

/// Builds the window program over days [first_day, first_day + days). State
/// before the window is read from the committed schedules.
inline WindowProblem build_window(std::span<const NodeContext> ctxs, std::span<const NodeDispatch> committed, long first_day,
                                  long days, const PenaltyWeights& weights, const GridTerms* grid = nullptr) {
    if (ctxs.empty()) throw ConfigError("window without nodes");
    if (committed.size() != ctxs.size()) throw ConfigError("committed schedule does not match the window nodes");
    const Scenario& sc = *ctxs.front().sc;
    if (first_day < 0 || days < 1 || first_day + days > sc.horizon.days) throw ConfigError("window outside the horizon");

    WindowProblem wp;
    wp.first_day = first_day;
    wp.days = days;
    wp.t0 = first_day * kStepsPerDay;
    wp.steps = days * kStepsPerDay;
    wp.weights = weights;
    wp.grid = grid;
    const long W = wp.steps, t0 = wp.t0, t1 = t0 + W;
    const auto Wz = static_cast<std::size_t>(W);
    const double eta = sc.ev_efficiency;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    detail::QpBuilder b;
    detail::QpBuilder::Terms terms;
    struct Seed {
        double p, sign, q;
    };
    std::vector<Seed> seeds;
    const std::size_t N = ctxs.size();
    wp.ctx.resize(N);
    wp.vars.resize(N);
    wp.storage_q0.assign(N, nan);
    wp.ev_before.resize(N);
    const double l2 = 2.0 * weights.lambda2;

    for (std::size_t i = 0; i < N; ++i) {
        const auto& ctx = ctxs[i];
        const auto& nd = committed[i];
        wp.ctx[i] = &ctx;
        auto& nv = wp.vars[i];
        const bool flex = ctx.phi > 0.0;
        std::vector<std::size_t> act;  // events overlapping the window
        for (std::size_t k = 0; k < ctx.events.size(); ++k) {
            const auto& ev = sc.ev_events[ctx.events[k]];
            if (ev.start < t1 && ev.end > t0) act.push_back(k);
        }
        wp.ev_before[i].assign(ctx.events.size(), 0.0);
        for (std::size_t k = 0; k < ctx.events.size(); ++k) {
            const auto& ev = sc.ev_events[ctx.events[k]];
            for (long t = ev.start; t < std::min(t0, ev.end); ++t)
                wp.ev_before[i][k] += nd.ev_c[k][static_cast<std::size_t>(t - ev.start)];
        }
        if (ctx.storage) {
            const auto& s = sc.storage[*ctx.storage];
            wp.storage_q0[i] = t0 == 0 ? s.initial_kwh : nd.st_q[static_cast<std::size_t>(t0 - 1)];
        }
        nv.active = flex || ctx.storage.has_value() || !act.empty();
        nv.n_lo.assign(Wz, 0.0);
        nv.n_hi.assign(Wz, 0.0);
        for (std::size_t k = 0; k < Wz; ++k) {
            const auto t = static_cast<std::size_t>(t0) + k;
            nv.n_lo[k] = nv.n_hi[k] = ctx.fixed()[t] - ctx.pv[t] + (flex ? 0.0 : ctx.u_base()[t]);
            if (flex) nv.n_hi[k] += ctx.u_max;
        }
        if (!nv.active) continue;

        const auto& ub = ctx.u_base();
        if (flex) {
            nv.u.resize(Wz);
            nv.w.resize(Wz);
            const double lf = 2.0 * weights.lambda_flex;
            for (std::size_t k = 0; k < Wz; ++k) {
                const auto t = static_cast<std::size_t>(t0) + k;
                nv.u[k] = b.var(0.0, ctx.u_max, -lf * ub[t]);
                b.quad(nv.u[k], nv.u[k], lf);
                nv.w[k] = b.var(0.0, qp::kInf);
                b.row({{nv.w[k], 1.0}, {nv.u[k], -1.0}}, -ub[t], qp::kInf);
                b.row({{nv.w[k], 1.0}, {nv.u[k], 1.0}}, ub[t], qp::kInf);
            }
            for (long d = 0; d < days; ++d) {
                double base = 0.0;
                terms.clear();
                detail::QpBuilder::Terms wterms;
                for (long k = d * kStepsPerDay; k < (d + 1) * kStepsPerDay; ++k) {
                    base += ub[static_cast<std::size_t>(t0 + k)];
                    terms.emplace_back(nv.u[static_cast<std::size_t>(k)], 1.0);
                    wterms.emplace_back(nv.w[static_cast<std::size_t>(k)], 1.0);
                }
                b.row(terms, base, base);
                b.row(wterms, -qp::kInf, 2.0 * ctx.phi * base);
            }
        }
        if (ctx.storage) {
            const auto& s = sc.storage[*ctx.storage];
            const double pmax = s.max_power_kw();
            nv.c.resize(Wz);
            nv.d.resize(Wz);
            nv.q.resize(Wz);
            for (std::size_t k = 0; k < Wz; ++k) {
                nv.c[k] = b.var(0.0, pmax);
                nv.d[k] = b.var(0.0, pmax);
                nv.q[k] = b.var(s.min_kwh, s.capacity_kwh);
                b.quad(nv.c[k], nv.c[k], l2);
                b.quad(nv.d[k], nv.d[k], l2);
                b.quad(nv.c[k], nv.d[k], l2);
                terms = {{nv.q[k], 1.0}, {nv.c[k], -s.charge_efficiency * kStepHours}, {nv.d[k], kStepHours / s.discharge_efficiency}};
                double rhs = 0.0;
                if (k == 0)
                    rhs = s.leakage * wp.storage_q0[i];
                else
                    terms.emplace_back(nv.q[k - 1], -s.leakage);
                b.row(terms, rhs, rhs);
                nv.n_lo[k] -= pmax;
                nv.n_hi[k] += pmax;
            }
        }
        nv.ev.assign(ctx.events.size(), {});
        for (auto k : act) {
            const auto& ev = sc.ev_events[ctx.events[k]];
            auto& ix = nv.ev[k];
            ix.assign(Wz, -1);
            const long lo = std::max(ev.start, t0), hi = std::min(ev.end, t1);
            terms.clear();
            for (long t = lo; t < hi; ++t) {
                const auto j = static_cast<std::size_t>(t - t0);
                const double mu = ctx.ev_separate ? ctx.ev_tariff->price_at(t) : 0.0;
                ix[j] = b.var(0.0, ev.c_max_kw, mu);
                b.quad(ix[j], ix[j], l2);
                terms.emplace_back(ix[j], 1.0);
                nv.n_hi[j] += ev.c_max_kw;
            }
            const double need = std::max(0.0, ev.energy_kwh / (eta * kStepHours) - wp.ev_before[i][k]);
            const double room = static_cast<double>(hi - lo) * ev.c_max_kw;
            if (ev.end <= t1) {
                b.row(terms, need, need);
            } else {
                const double share = static_cast<double>(t1 - ev.start) / static_cast<double>(ev.end - ev.start);
                const double floor = ev.energy_kwh * share / (eta * kStepHours) - wp.ev_before[i][k];
                const double after = static_cast<double>(ev.end - t1) * ev.c_max_kw;
                const double lo_e = std::min({std::max({0.0, floor, need - after}), need, room});
                b.row(terms, lo_e, need);
            }
        }
        // Class-meter hinge and net injection.
        nv.y.resize(Wz);
        if (grid) nv.n.resize(Wz);
        for (std::size_t k = 0; k < Wz; ++k) {
            const auto t = static_cast<std::size_t>(t0) + k;
            const double base = ctx.fixed()[t] - ctx.pv[t] + (flex ? 0.0 : ub[t]);
            detail::QpBuilder::Terms dev;
            if (flex) dev.emplace_back(nv.u[k], -1.0);
            if (ctx.storage) {
                dev.emplace_back(nv.c[k], -1.0);
                dev.emplace_back(nv.d[k], 1.0);
            }
            detail::QpBuilder::Terms evt;
            for (auto e : act)
                if (nv.ev[e][k] >= 0) evt.emplace_back(nv.ev[e][k], -1.0);
            nv.y[k] = b.var(0.0, qp::kInf, ctx.tariff->price_at(static_cast<long>(t)));
            terms = dev;
            terms.emplace_back(nv.y[k], 1.0);
            if (!ctx.ev_separate) terms.insert(terms.end(), evt.begin(), evt.end());
            b.row(terms, base, qp::kInf);
            if (grid) {
                nv.n[k] = b.var(-qp::kInf, qp::kInf);
                terms = dev;
                terms.insert(terms.end(), evt.begin(), evt.end());
                terms.emplace_back(nv.n[k], 1.0);
                b.row(terms, base, base);
            }
        }
    }

    if (grid) {
        const auto& net = *grid->net;
        const auto& m = *grid->model;
        const auto nc = static_cast<Eigen::Index>(N);
        for (std::size_t i = 0; i < N; ++i)
            if (sc.loads[ctxs[i].consumer].node != net.consumer_nodes[i] || ctxs[i].consumer != i)
                throw ConfigError("central window needs every consumer in network order");
        const double l3 = 2.0 * weights.lambda3;
        for (long k = 0; k < W; ++k) {
            const auto kz = static_cast<std::size_t>(k);
            const auto t = static_cast<std::size_t>(t0 + k);
            // Constant part: offsets, reactive demand and passive injections.
            auto constant = [&](const Eigen::MatrixXd& M, const Eigen::VectorXd& off, Eigen::Index r, double& lo, double& hi) {
                double c = off[r];
                lo = hi = 0.0;
                for (Eigen::Index j = 0; j < nc; ++j) {
                    const auto jz = static_cast<std::size_t>(j);
                    c += M(r, nc + j) * sc.loads[jz].reactive(t);
                    const auto& nv = wp.vars[jz];
                    const double a = M(r, j);
                    if (!nv.active) {
                        c += a * nv.n_lo[kz];
                    } else {
                        lo += std::min(a * nv.n_lo[kz], a * nv.n_hi[kz]);
                        hi += std::max(a * nv.n_lo[kz], a * nv.n_hi[kz]);
                    }
                }
                lo += c;
                hi += c;
                return c;
            };
            auto active_terms = [&](const Eigen::MatrixXd& M, Eigen::Index r, double scale) {
                terms.clear();
                for (Eigen::Index j = 0; j < nc; ++j) {
                    const auto& nv = wp.vars[static_cast<std::size_t>(j)];
                    if (nv.active && M(r, j) != 0.0) terms.emplace_back(nv.n[kz], scale * M(r, j));
                }
            };
            if (weights.lambda3 > 0.0) {
                for (Eigen::Index r = 0; r < m.A.rows(); ++r) {
                    double lo = 0.0, hi = 0.0;
                    const double c = constant(m.A, m.a, r, lo, hi);
                    if (lo >= grid->v_min && hi <= grid->v_max) continue;
                    const auto e = b.var(0.0, qp::kInf);
                    b.quad(e, e, l3);
                    active_terms(m.A, r, -100.0);
                    terms.emplace_back(e, 1.0);
                    b.row(terms, 100.0 * (c - grid->v_max), qp::kInf);
                    active_terms(m.A, r, 100.0);
                    terms.emplace_back(e, 1.0);
                    b.row(terms, 100.0 * (grid->v_min - c), qp::kInf);
                    ++wp.voltage_terms;
                }
            }
            if (weights.lambda4 > 0.0) {
                for (Eigen::Index r = 0; r < m.F.rows(); ++r) {
                    const auto rz = static_cast<std::size_t>(r);
                    const double lim = grid->tau_max[rz];
                    if (!std::isfinite(lim)) continue;
                    const double inv = 1.0 / grid->rating[rz];
                    double plo = 0.0, phi = 0.0, qlo = 0.0, qhi = 0.0;
                    const double cp = constant(m.F, m.f, r, plo, phi);
                    const double cq = constant(m.G, m.g, r, qlo, qhi);
                    const double pm = std::max(plo * plo, phi * phi), qm = std::max(qlo * qlo, qhi * qhi);
                    if ((pm + qm) * inv * inv <= lim) continue;
                    TransformerTerm term;
                    term.transformer = r;
                    term.step = k;
                    term.limit = lim;
                    term.p = b.var(-qp::kInf, qp::kInf);
                    active_terms(m.F, r, -inv);
                    terms.emplace_back(term.p, 1.0);
                    b.row(terms, cp * inv, cp * inv);
                    term.q = b.var(-qp::kInf, qp::kInf);
                    active_terms(m.G, r, -inv);
                    terms.emplace_back(term.q, 1.0);
                    b.row(terms, cq * inv, cq * inv);
                    term.e = b.var(0.0, qp::kInf);
                    b.quad(term.e, term.e, 2.0 * weights.lambda4);
                    wp.tx_terms.push_back(std::move(term));
                    ++wp.transformer_terms;
                    seeds.push_back({std::max(std::abs(plo), std::abs(phi)) * inv, std::copysign(1.0, phi + plo),
                                     0.5 * (qlo + qhi) * inv});
                }
            }
        }
    }
    wp.qp = b.finish();
    for (std::size_t j = 0; j < wp.tx_terms.size(); ++j) {
        auto& term = wp.tx_terms[j];
        const auto [pmag, sign, q0] = seeds[j];
        const double pc = std::sqrt(std::max(term.limit - q0 * q0, 0.0));
        add_transformer_cut(wp, term, sign * pc, q0);
        if (pmag > pc) add_transformer_cut(wp, term, sign * pmag, q0);
    }
    return wp;
}

/// Reads the window trajectories out of a primal vector. Inactive nodes follow
/// their base profile.
inline std::vector<NodeWindowPlan> extract_plans(const WindowProblem& wp, const Eigen::VectorXd& x) {
    const auto Wz = static_cast<std::size_t>(wp.steps);
    std::vector<NodeWindowPlan> out(wp.ctx.size());
    for (std::size_t i = 0; i < wp.ctx.size(); ++i) {
        const auto& ctx = *wp.ctx[i];
        const auto& nv = wp.vars[i];
        auto& p = out[i];
        p.u.resize(Wz);
        for (std::size_t k = 0; k < Wz; ++k)
            p.u[k] = nv.u.empty() ? ctx.u_base()[static_cast<std::size_t>(wp.t0) + k] : x[nv.u[k]];
        if (ctx.storage) {
            p.c.resize(Wz);
            p.d.resize(Wz);
            p.q.resize(Wz);
            if (nv.c.empty()) {
                // Idle storage keeps its energy apart from leakage.
                double q = wp.storage_q0[i];
                const double g = ctx.sc->storage[*ctx.storage].leakage;
                for (std::size_t k = 0; k < Wz; ++k) p.q[k] = q = g * q;
            } else {
                for (std::size_t k = 0; k < Wz; ++k) {
                    p.c[k] = x[nv.c[k]];
                    p.d[k] = x[nv.d[k]];
                    p.q[k] = x[nv.q[k]];
                }
            }
        }
        p.ev.assign(ctx.events.size(), std::vector<double>(Wz, 0.0));
        for (std::size_t e = 0; e < nv.ev.size(); ++e)
            for (std::size_t k = 0; k < nv.ev[e].size(); ++k)
                if (nv.ev[e][k] >= 0) p.ev[e][k] = x[nv.ev[e][k]];
    }
    return out;
}

/// Objective terms of a plan. L1 omits the step length, matching the program.
inline void evaluate_plans(const WindowProblem& wp, WindowSolution& sol) {
    const auto& sc = *wp.ctx.front()->sc;
    sol.L1 = sol.L2 = sol.L3 = sol.L4 = sol.Lf = 0.0;
    for (std::size_t i = 0; i < wp.ctx.size(); ++i) {
        const auto& ctx = *wp.ctx[i];
        const auto& p = sol.plans[i];
        for (long k = 0; k < wp.steps; ++k) {
            const long t = wp.t0 + k;
            const auto kz = static_cast<std::size_t>(k);
            sol.L1 += ctx.tariff->price_at(t) * positive_part(plan_class_net(wp, i, p, k));
            if (ctx.ev_separate)
                for (const auto& e : p.ev) sol.L1 += ctx.ev_tariff->price_at(t) * e[kz];
            if (!p.c.empty()) sol.L2 += (p.c[kz] + p.d[kz]) * (p.c[kz] + p.d[kz]);
            for (const auto& e : p.ev) sol.L2 += e[kz] * e[kz];
            const double du = p.u[kz] - ctx.u_base()[static_cast<std::size_t>(t)];
            if (ctx.phi > 0.0) sol.Lf += du * du;
        }
    }
    if (wp.grid) {
        const auto& m = *wp.grid->model;
        const auto nc = m.consumers();
        sol.v_hat.resize(m.A.rows(), wp.steps);
        sol.tau_hat.resize(m.F.rows(), wp.steps);
        Eigen::VectorXd s(2 * nc);
        for (long k = 0; k < wp.steps; ++k) {
            const auto t = static_cast<std::size_t>(wp.t0 + k);
            for (Eigen::Index j = 0; j < nc; ++j) {
                const auto jz = static_cast<std::size_t>(j);
                s[j] = plan_net(wp, jz, sol.plans[jz], k);
                s[nc + j] = sc.loads[jz].reactive(t);
            }
            const auto pr = m.predict(s);
            sol.v_hat.col(k) = pr.v;
            sol.tau_hat.col(k) = pr.tau;
            for (Eigen::Index r = 0; r < pr.v.size(); ++r) {
                const double e = 100.0 * (positive_part(pr.v[r] - wp.grid->v_max) + positive_part(wp.grid->v_min - pr.v[r]));
                sol.L3 += e * e;
            }
            for (Eigen::Index r = 0; r < pr.tau.size(); ++r) {
                const auto rz = static_cast<std::size_t>(r);
                const double lim = wp.grid->tau_max[rz];
                if (!std::isfinite(lim)) continue;
                const double base = wp.grid->rating[rz];
                const double e = positive_part(pr.tau[r] / (base * base) - lim);
                sol.L4 += e * e;
            }
        }
    }
    const auto& w = wp.weights;
    sol.objective = sol.L1 + w.lambda2 * sol.L2 + w.lambda_flex * sol.Lf + (wp.grid ? w.lambda3 * sol.L3 + w.lambda4 * sol.L4 : 0.0);
}

/// Solves the window, adding transformer cuts wherever the plane model
/// underestimates the excess by more than `cut_tol` and re-solving warm.
inline WindowSolution solve_window(WindowProblem& wp, const qp::Settings& settings = {}, int max_cut_rounds = 40,
                                   double cut_tol = 1e-6) {
    WindowSolution sol;
    qp::AdmmSolver solver(settings);
    std::optional<qp::WarmStart> warm;
    qp::Result res;
    for (int round = 0;; ++round) {
        res = solver.solve(wp.qp, warm);
        sol.iterations += res.iterations;
        sol.cut_rounds = round + 1;
        if (res.x.size() != wp.qp.variables() || !res.x.allFinite() || res.status == qp::Status::failed) {
            sol.status = qp::Status::failed;
            return sol;
        }
        if (round + 1 >= max_cut_rounds) break;
        const auto before = wp.qp.rows();
        for (auto& term : wp.tx_terms) {
            const double p = res.x[term.p], q = res.x[term.q];
            double model = -qp::kInf;
            for (const auto& [p0, q0] : term.cuts) model = std::max(model, 2.0 * (p0 * p + q0 * q) - p0 * p0 - q0 * q0);
            const double gap = positive_part(p * p + q * q - term.limit) - positive_part(model - term.limit);
            if (gap > cut_tol) add_transformer_cut(wp, term, p, q);
        }
        const auto added = wp.qp.rows() - before;
        if (added == 0) break;
        qp::WarmStart w{res.x, Eigen::VectorXd::Zero(wp.qp.rows()), wp.qp.A * res.x};
        w.y.head(before) = res.y;
        w.z.head(before) = res.z;
        warm = std::move(w);
    }
    sol.status = res.status;
    sol.primal_residual = res.primal_residual;
    sol.dual_residual = res.dual_residual;
    sol.plans = extract_plans(wp, res.x);
    evaluate_plans(wp, sol);
    return sol;
}

inline WindowSolution solve_window(WindowProblem&& wp, const qp::Settings& settings = {}, int max_cut_rounds = 40,
                                   double cut_tol = 1e-6) {
    return solve_window(wp, settings, max_cut_rounds, cut_tol);
}

/// Copies the first `commit_days` of the plans into the schedules and projects
/// them onto the device constraints.
inline void commit_window(const WindowProblem& wp, const WindowSolution& sol, long commit_days, std::span<NodeDispatch> nodes) {
    const auto& sc = *wp.ctx.front()->sc;
    const long n = commit_days * kStepsPerDay;
    for (std::size_t i = 0; i < wp.ctx.size(); ++i) {
        const auto& ctx = *wp.ctx[i];
        const auto& p = sol.plans[i];
        auto& nd = nodes[i];
        for (long k = 0; k < n; ++k) {
            const auto t = static_cast<std::size_t>(wp.t0 + k), kz = static_cast<std::size_t>(k);
            nd.u[t] = p.u[kz];
            if (nd.has_storage()) {
                nd.st_c[t] = p.c.empty() ? 0.0 : p.c[kz];
                nd.st_d[t] = p.d.empty() ? 0.0 : p.d[kz];
                nd.st_q[t] = p.q[kz];
            }
        }
        for (std::size_t e = 0; e < ctx.events.size(); ++e) {
            const auto& ev = sc.ev_events[ctx.events[e]];
            for (long t = std::max(ev.start, wp.t0); t < std::min(ev.end, wp.t0 + n); ++t)
                nd.ev_c[e][static_cast<std::size_t>(t - ev.start)] = p.ev[e][static_cast<std::size_t>(t - wp.t0)];
        }
        repair_days(ctx, nd, wp.first_day, wp.first_day + commit_days);
    }
}

/// Commits heuristic actions for the given days, starting from the committed state.
inline void commit_heuristic(const NodeContext& ctx, NodeDispatch& nd, long first_day, long commit_days) {
    const long a = first_day * kStepsPerDay, b = (first_day + commit_days) * kStepsPerDay;
    HeuristicNode h(ctx);
    std::vector<double> delivered(ctx.events.size(), 0.0);
    const auto& sc = *ctx.sc;
    for (std::size_t e = 0; e < ctx.events.size(); ++e) {
        const auto& ev = sc.ev_events[ctx.events[e]];
        for (long t = ev.start; t < std::min(a, ev.end); ++t)
            delivered[e] += nd.ev_c[e][static_cast<std::size_t>(t - ev.start)] * sc.ev_efficiency * kStepHours;
    }
    double q = 0.0;
    if (ctx.storage) q = a == 0 ? sc.storage[*ctx.storage].initial_kwh : nd.st_q[static_cast<std::size_t>(a - 1)];
    h.resume(q, std::move(delivered));
    for (long t = a; t < b; ++t) h.step(t);
    const auto& r = h.result();
    for (long t = a; t < b; ++t) {
        const auto i = static_cast<std::size_t>(t);
        nd.u[i] = r.u[i];
        if (nd.has_storage()) {
            nd.st_c[i] = r.st_c[i];
            nd.st_d[i] = r.st_d[i];
            nd.st_q[i] = r.st_q[i];
        }
    }
    for (std::size_t e = 0; e < ctx.events.size(); ++e) {
        const auto& ev = sc.ev_events[ctx.events[e]];
        for (long t = std::max(ev.start, a); t < std::min(ev.end, b); ++t)
            nd.ev_c[e][static_cast<std::size_t>(t - ev.start)] = r.ev_c[e][static_cast<std::size_t>(t - ev.start)];
    }
    repair_days(ctx, nd, first_day, first_day + commit_days);
}

struct RecedingOptions {
    PenaltyWeights weights;
    qp::Settings solver;
    long window_days = 2;
    double accept_residual = 1e-3;  // max-iteration results above this fall back
};

struct WindowLog {
    long first_day = 0;
    qp::Status status = qp::Status::failed;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double objective = 0.0;
    bool fallback = false;
};

/// Rolls overlapping windows over the horizon, committing one day per window
/// (all remaining days in the last one).
inline std::vector<WindowLog> run_receding(std::span<const NodeContext> ctxs, std::span<NodeDispatch> nodes,
                                           const RecedingOptions& opt, const GridTerms* grid, std::vector<long>* fallback_days) {
    const long D = ctxs.front().sc->horizon.days;
    std::vector<WindowLog> logs;
    for (long d = 0; d < D;) {
        const long len = std::min(opt.window_days, D - d);
        const long commit = d + len == D ? len : 1;
        auto wp = build_window(ctxs, std::span<const NodeDispatch>(nodes.data(), nodes.size()), d, len, opt.weights, grid);
        const auto sol = solve_window(wp, opt.solver);
        WindowLog log{d, sol.status, sol.iterations, sol.primal_residual, sol.dual_residual, sol.objective, false};
        const bool ok = sol.status == qp::Status::solved ||
                        (sol.status == qp::Status::max_iterations && sol.primal_residual <= opt.accept_residual);
        if (ok) {
            commit_window(wp, sol, commit, nodes);
        } else {
            log.fallback = true;
            for (std::size_t i = 0; i < ctxs.size(); ++i) commit_heuristic(ctxs[i], nodes[i], d, commit);
            if (fallback_days)
                for (long k = d; k < d + commit; ++k) fallback_days->push_back(k);
        }
        logs.push_back(log);
        d += commit;
    }
    return logs;
}

}  // namespace dergrid
