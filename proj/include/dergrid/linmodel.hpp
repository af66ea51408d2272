#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "core.hpp"
#include "dispatch.hpp"
#include "powerflow.hpp"

namespace dergrid {

/// Regression samples: features are consumer real then reactive injections.
struct TrainingSet {
    Eigen::MatrixXd x;   // samples x (2 * consumers)
    Eigen::MatrixXd v;   // samples x nodes, pu
    Eigen::MatrixXd tp;  // samples x transformers, input-side kW
    Eigen::MatrixXd tq;  // samples x transformers, input-side kVAr
    std::vector<long> steps;
    bool fallback = false;  // full horizon used instead of the peak month
    int peak_month = -1;

    Eigen::Index samples() const { return x.rows(); }
};

/// Samples from the calendar month holding the highest network load. A
/// horizon shorter than one month uses every step and sets `fallback`.
inline TrainingSet collect_training_set(const NetworkModel& net, const Scenario& sc, const DispatchSchedule& sched,
                                        std::span<const PowerFlowSolution> sols) {
    const long T = sc.steps();
    if (sols.empty() || T == 0) throw SolverError("no power-flow results to train on");
    if (static_cast<long>(sols.size()) != T) throw SolverError("power-flow series does not cover the horizon");
    const auto frames = injection_frames(net, sc, sched);
    const auto load = network_consumption(sc, sched);
    const long peak_t = static_cast<long>(std::max_element(load.begin(), load.end()) - load.begin());

    TrainingSet ts;
    const int month = month_of_day(sc.horizon.start_day + peak_t / kStepsPerDay);
    if (sc.horizon.days < kMonthDays[static_cast<std::size_t>(month)]) {
        ts.fallback = true;
        for (long t = 0; t < T; ++t) ts.steps.push_back(t);
    } else {
        ts.peak_month = month;
        for (long t = 0; t < T; ++t)
            if (month_of_day(sc.horizon.start_day + t / kStepsPerDay) == month) ts.steps.push_back(t);
    }
    const auto S = static_cast<Eigen::Index>(ts.steps.size());
    const auto nc = static_cast<Eigen::Index>(net.consumer_count());
    const auto nn = static_cast<Eigen::Index>(net.node_count());
    const auto nt = static_cast<Eigen::Index>(net.transformer_count());
    ts.x.resize(S, 2 * nc);
    ts.v.resize(S, nn);
    ts.tp.resize(S, nt);
    ts.tq.resize(S, nt);
    for (Eigen::Index r = 0; r < S; ++r) {
        const auto t = static_cast<std::size_t>(ts.steps[static_cast<std::size_t>(r)]);
        for (Eigen::Index j = 0; j < nc; ++j) {
            const auto node = net.consumer_nodes[static_cast<std::size_t>(j)];
            ts.x(r, j) = frames[t].p_kw[node];
            ts.x(r, nc + j) = frames[t].q_kvar[node];
        }
        for (Eigen::Index i = 0; i < nn; ++i) ts.v(r, i) = sols[t].v_pu[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < nt; ++k) {
            ts.tp(r, k) = sols[t].tx_p_kw[static_cast<std::size_t>(k)];
            ts.tq(r, k) = sols[t].tx_q_kvar[static_cast<std::size_t>(k)];
        }
    }
    return ts;
}

/// Affine surrogate v = A s + a, tau = (F s + f)^2 + (G s + g)^2 with
/// s = [p; q] over consumer nodes.
struct LinearPFModel {
    Eigen::MatrixXd A, F, G;
    Eigen::VectorXd a, f, g;
    Eigen::VectorXd v_rms, p_rms, q_rms;  // training residuals
    double ridge = 0.0;
    Eigen::Index samples = 0;

    Eigen::Index features() const { return A.cols(); }
    Eigen::Index consumers() const { return A.cols() / 2; }

    struct Prediction {
        Eigen::VectorXd v, p, q, tau;
    };

    Prediction predict(const Eigen::VectorXd& s) const {
        if (s.size() != features())
            throw SolverError("feature vector has " + std::to_string(s.size()) + " entries, model expects " +
                              std::to_string(features()));
        Prediction out;
        out.v = A * s + a;
        out.p = F * s + f;
        out.q = G * s + g;
        out.tau = out.p.array().square() + out.q.array().square();
        return out;
    }
};

/// Column-wise ridge regression on standardized features, solved by QR on
/// the augmented system. Constant features get zero coefficients.
inline LinearPFModel fit_linear_model(const TrainingSet& ts, double ridge = 1e-8) {
    const Eigen::Index S = ts.samples();
    if (S == 0) throw SolverError("empty training set");
    if (ridge < 0.0) throw ConfigError("ridge weight must be non-negative");
    const Eigen::Index nf = ts.x.cols();
    const Eigen::VectorXd mu = ts.x.colwise().mean();
    Eigen::VectorXd sd(nf);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < nf; ++j) {
        sd[j] = std::sqrt((ts.x.col(j).array() - mu[j]).square().sum() / static_cast<double>(S));
        if (sd[j] > 1e-12 * (1.0 + std::abs(mu[j]))) keep.push_back(j);
    }
    const auto nk = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd z(S + (ridge > 0.0 ? nk : 0), nk);
    z.setZero();
    for (Eigen::Index c = 0; c < nk; ++c) {
        const auto j = keep[static_cast<std::size_t>(c)];
        z.col(c).head(S) = (ts.x.col(j).array() - mu[j]) / sd[j];
        if (ridge > 0.0) z(S + c, c) = std::sqrt(ridge);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    if (ridge == 0.0 && qr.rank() < nk)
        throw SolverError("rank-deficient training set (rank " + std::to_string(qr.rank()) + " < " + std::to_string(nk) +
                          " features); use a positive ridge weight");

    auto solve_block = [&](const Eigen::MatrixXd& y, Eigen::MatrixXd& coef, Eigen::VectorXd& icpt, Eigen::VectorXd& rms) {
        const Eigen::VectorXd ym = y.colwise().mean();
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(z.rows(), y.cols());
        rhs.topRows(S) = y.rowwise() - ym.transpose();
        const Eigen::MatrixXd beta = nk > 0 ? Eigen::MatrixXd(qr.solve(rhs)) : Eigen::MatrixXd(0, y.cols());
        coef = Eigen::MatrixXd::Zero(y.cols(), nf);
        icpt = ym;
        for (Eigen::Index c = 0; c < nk; ++c) {
            const auto j = keep[static_cast<std::size_t>(c)];
            coef.col(j) = beta.row(c).transpose() / sd[j];
            icpt -= coef.col(j) * mu[j];
        }
        const Eigen::MatrixXd pred = (ts.x * coef.transpose()).rowwise() + icpt.transpose();
        rms = ((pred - y).array().square().colwise().sum() / static_cast<double>(S)).sqrt().transpose();
    };

    LinearPFModel m;
    m.ridge = ridge;
    m.samples = S;
    solve_block(ts.v, m.A, m.a, m.v_rms);
    solve_block(ts.tp, m.F, m.f, m.p_rms);
    solve_block(ts.tq, m.G, m.g, m.q_rms);
    return m;
}

/// Deterministic 80/20 split: every fifth sample is held out.
struct TrainingSplit {
    TrainingSet train, test;
};

inline TrainingSplit holdout_split(const TrainingSet& ts) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index r = 0; r < ts.samples(); ++r) (r % 5 == 4 ? te : tr).push_back(r);
    auto take = [&](const std::vector<Eigen::Index>& rows) {
        TrainingSet out;
        out.x = ts.x(rows, Eigen::all);
        out.v = ts.v(rows, Eigen::all);
        out.tp = ts.tp(rows, Eigen::all);
        out.tq = ts.tq(rows, Eigen::all);
        for (auto r : rows)
            if (!ts.steps.empty()) out.steps.push_back(ts.steps[static_cast<std::size_t>(r)]);
        out.fallback = ts.fallback;
        out.peak_month = ts.peak_month;
        return out;
    };
    return {take(tr), take(te)};
}

struct HoldoutError {
    double voltage_rms = 0.0;         // pu over all nodes and samples
    double transformer_rms_pct = 0.0; // worst transformer, apparent-power RMS error in % of rating
};

inline HoldoutError holdout_error(const LinearPFModel& m, const TrainingSet& test, std::span<const double> ratings = {}) {
    if (test.samples() == 0) throw SolverError("empty held-out set");
    HoldoutError e;
    double vs = 0.0;
    std::vector<double> ts(static_cast<std::size_t>(test.tp.cols()), 0.0);
    for (Eigen::Index r = 0; r < test.samples(); ++r) {
        const auto p = m.predict(test.x.row(r).transpose());
        vs += (p.v - test.v.row(r).transpose()).squaredNorm();
        for (Eigen::Index k = 0; k < test.tp.cols(); ++k) {
            const double s = std::hypot(test.tp(r, k), test.tq(r, k));
            const double d = std::sqrt(p.tau[k]) - s;
            ts[static_cast<std::size_t>(k)] += d * d;
        }
    }
    e.voltage_rms = std::sqrt(vs / static_cast<double>(test.samples() * test.v.cols()));
    for (std::size_t k = 0; k < ts.size() && k < ratings.size(); ++k)
        e.transformer_rms_pct = std::max(e.transformer_rms_pct, 100.0 * std::sqrt(ts[k] / static_cast<double>(test.samples())) / ratings[k]);
    return e;
}

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("model matrix row has wrong length");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline nlohmann::json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline nlohmann::json model_to_json(const LinearPFModel& m) {
    using detail::matrix_json;
    using detail::vector_json;
    return {{"version", 1},       {"features", m.features()},  {"ridge", m.ridge},         {"samples", m.samples},
            {"A", matrix_json(m.A)}, {"a", vector_json(m.a)},  {"F", matrix_json(m.F)},   {"f", vector_json(m.f)},
            {"G", matrix_json(m.G)}, {"g", vector_json(m.g)},  {"v_rms", vector_json(m.v_rms)},
            {"p_rms", vector_json(m.p_rms)}, {"q_rms", vector_json(m.q_rms)}};
}

inline LinearPFModel model_from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw ConfigError("unsupported model version");
    const auto nf = j.at("features").get<Eigen::Index>();
    LinearPFModel m;
    m.ridge = j.at("ridge").get<double>();
    m.samples = j.at("samples").get<Eigen::Index>();
    m.A = detail::matrix_from(j.at("A"), nf);
    m.F = detail::matrix_from(j.at("F"), nf);
    m.G = detail::matrix_from(j.at("G"), nf);
    m.a = detail::vector_from(j.at("a"));
    m.f = detail::vector_from(j.at("f"));
    m.g = detail::vector_from(j.at("g"));
    m.v_rms = detail::vector_from(j.at("v_rms"));
    m.p_rms = detail::vector_from(j.at("p_rms"));
    m.q_rms = detail::vector_from(j.at("q_rms"));
    return m;
}

}  // namespace dergrid
