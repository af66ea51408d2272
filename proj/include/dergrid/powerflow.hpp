#pragma once

#include <cmath>
#include <complex>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "core.hpp"
#include "network.hpp"

namespace dergrid {

/// Net nodal injections for one timestep, indexed by network node.
/// Consumption is positive, generation negative.
struct InjectionFrame {
    long step = 0;
    std::vector<double> p_kw;
    std::vector<double> q_kvar;
};

struct RegulatorState {
    int tap = 0;
    bool operator==(const RegulatorState&) const = default;
};

struct PowerFlowSolution {
    std::vector<double> v_pu;        // magnitude per node
    std::vector<double> tx_p_kw;     // input-side real flow per transformer
    std::vector<double> tx_q_kvar;   // input-side reactive flow per transformer
    std::vector<double> tx_s_kva;    // apparent-power magnitude
    std::complex<double> source_kva; // total injection at the source
    double loss_kw = 0.0;
    double loss_kvar = 0.0;
    bool converged = false;
    bool collapsed = false;
    int iterations = 0;
    double max_update = 0.0;
    int tap = 0;

    double tau(std::size_t k) const { return tx_p_kw[k] * tx_p_kw[k] + tx_q_kvar[k] * tx_q_kvar[k]; }
};

struct PowerFlowOptions {
    double tolerance = 1e-8;  // max voltage update, pu
    int max_iterations = 100;
    double collapse_floor = 0.5;
};

/// Backward/forward sweep (current summation) over the per-phase radial tree.
class SweepSolver {
public:
    explicit SweepSolver(const NetworkModel& network, PowerFlowOptions options = {})
        : net_(&network), opt_(options), children_(network.node_count()) {
        for (std::size_t b = 0; b < network.branches.size(); ++b)
            children_[network.branches[b].from_node].push_back(b);
    }

    const PowerFlowOptions& options() const { return opt_; }

    double source_voltage(int tap) const {
        const double step = net_->regulator ? net_->regulator->tap_step : 0.0;
        return net_->source_voltage_pu + tap * step;
    }

    PowerFlowSolution solve(const InjectionFrame& frame, int tap) const {
        const auto& net = *net_;
        const std::size_t n = net.node_count();
        if (frame.p_kw.size() != n || frame.q_kvar.size() != n)
            throw PowerFlowError(frame.step, "injection frame does not cover every node");
        using cd = std::complex<double>;
        const double sb = net.base_kva;
        std::vector<cd> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(frame.p_kw[i]) || !std::isfinite(frame.q_kvar[i]))
                throw PowerFlowError(frame.step, "non-finite injection at " + net.node_label(i));
            s[i] = cd(frame.p_kw[i], frame.q_kvar[i]) / sb;
        }

        const double vs = source_voltage(tap);
        std::vector<cd> v(n), j_out(n), j_in(n);
        for (auto node : net.sweep_order) {
            const int pb = net.parent_branch[node];
            if (pb < 0) {
                v[node] = vs;
            } else {
                const auto& br = net.branches[static_cast<std::size_t>(pb)];
                v[node] = v[br.from_node] / br.tap;
            }
        }

        PowerFlowSolution sol;
        sol.tap = tap;
        const auto& order = net.sweep_order;
        for (int it = 1; it <= opt_.max_iterations; ++it) {
            sol.iterations = it;
            for (auto r = order.rbegin(); r != order.rend(); ++r) {
                const auto node = *r;
                cd acc = std::conj(s[node] / v[node]);
                for (auto b : children_[node]) acc += j_in[net.branches[b].to_node];
                j_out[node] = acc;
                const int pb = net.parent_branch[node];
                j_in[node] = pb < 0 ? acc : acc / net.branches[static_cast<std::size_t>(pb)].tap;
            }
            double max_update = 0.0;
            bool finite = true;
            for (auto node : order) {
                const int pb = net.parent_branch[node];
                if (pb < 0) continue;
                const auto& br = net.branches[static_cast<std::size_t>(pb)];
                const cd nv = v[br.from_node] / br.tap - br.z_pu * j_out[node];
                if (!std::isfinite(nv.real()) || !std::isfinite(nv.imag())) finite = false;
                max_update = std::max(max_update, std::abs(nv - v[node]));
                v[node] = nv;
            }
            sol.max_update = max_update;
            if (!finite) break;
            if (max_update < opt_.tolerance) {
                sol.converged = true;
                break;
            }
            // Collapsed operating points keep shrinking; stop early.
            bool low = false;
            for (auto node : order) low = low || std::abs(v[node]) < 0.5 * opt_.collapse_floor;
            if (low) break;
        }

        // Final currents from the converged voltages.
        for (auto r = order.rbegin(); r != order.rend(); ++r) {
            const auto node = *r;
            cd acc = std::conj(s[node] / v[node]);
            for (auto b : children_[node]) acc += j_in[net.branches[b].to_node];
            j_out[node] = acc;
            const int pb = net.parent_branch[node];
            j_in[node] = pb < 0 ? acc : acc / net.branches[static_cast<std::size_t>(pb)].tap;
        }

        sol.v_pu.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            sol.v_pu[i] = std::abs(v[i]);
            if (!(sol.v_pu[i] >= opt_.collapse_floor)) sol.collapsed = true;
        }
        const std::size_t nt = net.transformer_count();
        sol.tx_p_kw.assign(nt, 0.0);
        sol.tx_q_kvar.assign(nt, 0.0);
        sol.tx_s_kva.assign(nt, 0.0);
        cd loss{};
        for (const auto& br : net.branches) {
            const cd jo = j_out[br.to_node];
            loss += br.z_pu * std::norm(jo);
            if (br.transformer >= 0) {
                const auto k = static_cast<std::size_t>(br.transformer);
                const cd sin = v[br.from_node] * std::conj(j_in[br.to_node]) * sb;
                sol.tx_p_kw[k] = sin.real();
                sol.tx_q_kvar[k] = sin.imag();
                sol.tx_s_kva[k] = std::abs(sin);
            }
        }
        sol.loss_kw = loss.real() * sb;
        sol.loss_kvar = loss.imag() * sb;
        cd src{};
        for (auto sn : net.source_nodes) {
            cd out = std::conj(s[sn] / v[sn]);
            for (auto b : children_[sn]) out += j_in[net.branches[b].to_node];
            src += v[sn] * std::conj(out);
        }
        sol.source_kva = src * sb;
        if (!sol.converged && !sol.collapsed) {
            throw PowerFlowError(frame.step, "sweep did not converge in " + std::to_string(opt_.max_iterations) +
                                                 " iterations (worst update " + format_double(sol.max_update) + " pu)");
        }
        return sol;
    }

private:
    const NetworkModel* net_;
    PowerFlowOptions opt_;
    std::vector<std::vector<std::size_t>> children_;
};

inline double monitored_voltage(const NetworkModel& network, const PowerFlowSolution& sol) {
    const auto bus = *network.bus_index(network.regulator->monitor_bus);
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < network.node_count(); ++i)
        if (network.nodes[i].bus == bus) {
            sum += sol.v_pu[i];
            ++count;
        }
    return sum / count;
}

/// One quasi-static step. The tap changer acts at most once, before the final solve.
inline std::pair<PowerFlowSolution, RegulatorState> solve_step(const SweepSolver& solver, const NetworkModel& network,
                                                               const InjectionFrame& frame, RegulatorState state) {
    auto sol = solver.solve(frame, state.tap);
    if (!network.regulator || sol.collapsed) return {std::move(sol), state};
    const auto& reg = *network.regulator;
    const double vm = monitored_voltage(network, sol);
    if (std::abs(vm - reg.target) > reg.deadband) {
        const int move = static_cast<int>(std::lround((reg.target - vm) / reg.tap_step));
        const int tap = std::clamp(state.tap + move, reg.min_tap, reg.max_tap);
        if (tap != state.tap) {
            state.tap = tap;
            sol = solver.solve(frame, tap);
        }
    }
    return {std::move(sol), state};
}

inline std::pair<PowerFlowSolution, RegulatorState> solve_step(const NetworkModel& network, const InjectionFrame& frame,
                                                               RegulatorState state) {
    return solve_step(SweepSolver(network), network, frame, state);
}

/// Sequential series solve; only the regulator state links timesteps.
inline std::vector<PowerFlowSolution> solve_series(const NetworkModel& network, std::span<const InjectionFrame> frames,
                                                   RegulatorState initial = {}, PowerFlowOptions options = {}) {
    SweepSolver solver(network, options);
    std::vector<PowerFlowSolution> out;
    out.reserve(frames.size());
    RegulatorState state = initial;
    for (const auto& f : frames) {
        auto [sol, next] = solve_step(solver, network, f, state);
        state = next;
        out.push_back(std::move(sol));
    }
    return out;
}

/// Delimited debug dump: one row per step with voltages then transformer kVA.
inline void write_solution_table(std::ostream& os, const NetworkModel& network, std::span<const PowerFlowSolution> sols) {
    os << "step,tap,converged";
    for (std::size_t i = 0; i < network.node_count(); ++i) os << ",v:" << network.node_label(i);
    for (const auto& t : network.transformers) os << ",s:" << t.id;
    os << "\n";
    for (std::size_t t = 0; t < sols.size(); ++t) {
        os << t << "," << sols[t].tap << "," << (sols[t].converged ? 1 : 0);
        for (double v : sols[t].v_pu) os << "," << format_double(v);
        for (double s : sols[t].tx_s_kva) os << "," << format_double(s);
        os << "\n";
    }
}

}  // namespace dergrid
