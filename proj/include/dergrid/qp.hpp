#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "core.hpp"

namespace dergrid::qp {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// weight * ([ (z_a + offset_a)^2 + (z_b + offset_b)^2 - limit ]_+)^2 applied to two rows of A x.
struct RadialPenalty {
    Eigen::Index row_a = 0;
    Eigen::Index row_b = 0;
    double offset_a = 0.0;
    double offset_b = 0.0;
    double limit = 0.0;
    double weight = 0.0;

    double value(double za, double zb) const {
        const double pa = za + offset_a, pb = zb + offset_b;
        const double e = positive_part(pa * pa + pb * pb - limit);
        return weight * e * e;
    }
};

/// minimize 1/2 x'Px + q'x + sum radial(Ax)   s.t.  l <= Ax <= u on non-radial rows.
/// P holds the upper triangle.
struct Problem {
    SpMat P;
    Vec q;
    SpMat A;
    Vec l;
    Vec u;
    std::vector<RadialPenalty> radial;

    Eigen::Index variables() const { return q.size(); }
    Eigen::Index rows() const { return l.size(); }

    double objective(const Vec& x) const {
        const Vec px = P.selfadjointView<Eigen::Upper>() * x;
        double f = 0.5 * x.dot(px) + q.dot(x);
        if (!radial.empty()) {
            const Vec ax = A * x;
            for (const auto& r : radial) f += r.value(ax[r.row_a], ax[r.row_b]);
        }
        return f;
    }
};

struct Settings {
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    int max_iterations = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    int scaling_iterations = 10;
    bool adaptive_rho = true;
    int adaptive_rho_interval = 100;
    double adaptive_rho_tolerance = 2.0;
    int check_interval = 5;
    bool polish = true;
    int polish_refine = 8;
};

enum class Status { solved, max_iterations, failed };

inline const char* to_string(Status s) {
    switch (s) {
    case Status::solved: return "solved";
    case Status::max_iterations: return "max_iterations";
    default: return "failed";
    }
}

struct Result {
    Vec x;
    Vec y;
    Vec z;
    Status status = Status::failed;
    int iterations = 0;
    int rho_updates = 0;
    double primal_residual = kInf;
    double dual_residual = kInf;
    double objective = kInf;
    bool polished = false;
};

struct WarmStart {
    Vec x;
    Vec y;
    Vec z;
};

/// Operator-splitting solver in the OSQP form with Ruiz equilibration,
/// adaptive step size, and active-set polishing for box-only solutions.
class AdmmSolver {
public:
    explicit AdmmSolver(Settings settings = {}) : set_(settings) {}

    Result solve(const Problem& prob, const std::optional<WarmStart>& warm = std::nullopt) {
        n_ = prob.variables();
        m_ = prob.rows();
        if (prob.P.rows() != n_ || prob.P.cols() != n_ || prob.A.cols() != n_ || prob.A.rows() != m_ || prob.u.size() != m_)
            throw SolverError("QP dimensions are inconsistent");
        for (Eigen::Index i = 0; i < m_; ++i)
            if (prob.l[i] > prob.u[i]) throw SolverError("row " + std::to_string(i) + " has l > u");

        radial_row_.assign(static_cast<std::size_t>(m_), false);
        for (const auto& r : prob.radial) {
            radial_row_[static_cast<std::size_t>(r.row_a)] = true;
            radial_row_[static_cast<std::size_t>(r.row_b)] = true;
        }
        scale(prob);
        init_rho();
        build_kkt();

        Vec x = Vec::Zero(n_), z = Vec::Zero(m_), y = Vec::Zero(m_);
        if (warm && warm->x.size() == n_ && warm->y.size() == m_ && warm->z.size() == m_) {
            x = warm->x.cwiseQuotient(D_);
            z = warm->z.cwiseProduct(E_);
            y = c_ * warm->y.cwiseQuotient(E_);
        }

        Result res;
        Vec rhs(n_ + m_), sol(n_ + m_), xt(n_), zt(m_), zh(m_), znew(m_);
        for (int it = 1; it <= set_.max_iterations; ++it) {
            rhs.head(n_) = set_.sigma * x - q_;
            rhs.tail(m_) = z - y.cwiseQuotient(rho_);
            sol = ldlt_.solve(rhs);
            if (ldlt_.info() != Eigen::Success) throw SolverError("KKT solve failed");
            xt = sol.head(n_);
            zt = z + (sol.tail(m_) - y).cwiseQuotient(rho_);
            x = set_.alpha * xt + (1.0 - set_.alpha) * x;
            zh = set_.alpha * zt + (1.0 - set_.alpha) * z;
            znew = zh + y.cwiseQuotient(rho_);
            project(znew);
            y += rho_.cwiseProduct(zh - znew);
            z = znew;

            const bool check = it % set_.check_interval == 0 || it == set_.max_iterations;
            if (!check) continue;
            res.iterations = it;
            const auto r = residuals(x, z, y);
            res.primal_residual = r.prim;
            res.dual_residual = r.dual;
            if (!std::isfinite(r.prim) || !std::isfinite(r.dual)) {
                res.status = Status::failed;
                break;
            }
            if (r.prim <= r.eps_prim && r.dual <= r.eps_dual) {
                res.status = Status::solved;
                break;
            }
            if (set_.adaptive_rho && it % set_.adaptive_rho_interval == 0) {
                // Balance both residuals against their own stopping thresholds.
                const double ratio = std::sqrt((r.prim / r.eps_prim) / std::max(r.dual / r.eps_dual, 1e-30));
                const double new_rho = std::clamp(rho_base_ * ratio, 1e-6, 1e6);
                if (new_rho > rho_base_ * set_.adaptive_rho_tolerance || new_rho < rho_base_ / set_.adaptive_rho_tolerance) {
                    rho_base_ = new_rho;
                    init_rho_values();
                    update_kkt_rho();
                    ++res.rho_updates;
                }
            }
            if (it == set_.max_iterations) res.status = Status::max_iterations;
        }

        res.x = x.cwiseProduct(D_);
        res.z = z.cwiseQuotient(E_);
        res.y = y.cwiseProduct(E_) / c_;
        if (res.status != Status::failed && set_.polish) try_polish(x, z, y, res);
        res.objective = prob.objective(res.x);
        return res;
    }

private:
    struct Residuals {
        double prim, dual, eps_prim, eps_dual;
    };

    void scale(const Problem& prob) {
        P_ = prob.P.triangularView<Eigen::Upper>();
        A_ = prob.A;
        q_ = prob.q;
        l_ = prob.l;
        u_ = prob.u;
        D_ = Vec::Ones(n_);
        E_ = Vec::Ones(m_);
        c_ = 1.0;
        const SpMat Pfull_init = P_.selfadjointView<Eigen::Upper>();
        SpMat Pf = Pfull_init;
        for (int k = 0; k < set_.scaling_iterations; ++k) {
            Vec dcol = Vec::Zero(n_), erow = Vec::Zero(m_);
            for (Eigen::Index j = 0; j < Pf.outerSize(); ++j)
                for (SpMat::InnerIterator itp(Pf, j); itp; ++itp) dcol[j] = std::max(dcol[j], std::abs(itp.value()));
            for (Eigen::Index j = 0; j < A_.outerSize(); ++j)
                for (SpMat::InnerIterator ita(A_, j); ita; ++ita) {
                    const double a = std::abs(ita.value());
                    dcol[j] = std::max(dcol[j], a);
                    erow[ita.row()] = std::max(erow[ita.row()], a);
                }
            Vec ds(n_), es(m_);
            for (Eigen::Index j = 0; j < n_; ++j) ds[j] = dcol[j] < 1e-4 ? 1.0 : 1.0 / std::sqrt(std::min(dcol[j], 1e4));
            for (Eigen::Index i = 0; i < m_; ++i) es[i] = erow[i] < 1e-4 ? 1.0 : 1.0 / std::sqrt(std::min(erow[i], 1e4));
            for (const auto& r : prob.radial) {
                const double g = std::sqrt(es[r.row_a] * es[r.row_b]);
                es[r.row_a] = es[r.row_b] = g;
            }
            Pf = ds.asDiagonal() * Pf * ds.asDiagonal();
            A_ = es.asDiagonal() * A_ * ds.asDiagonal();
            q_ = q_.cwiseProduct(ds);
            D_ = D_.cwiseProduct(ds);
            E_ = E_.cwiseProduct(es);
        }
        // Cost scaling.
        double pnorm = 0.0;
        if (n_ > 0) {
            Vec colmax = Vec::Zero(n_);
            for (Eigen::Index j = 0; j < Pf.outerSize(); ++j)
                for (SpMat::InnerIterator itp(Pf, j); itp; ++itp) colmax[j] = std::max(colmax[j], std::abs(itp.value()));
            pnorm = colmax.mean();
        }
        const double qn = q_.size() ? q_.lpNorm<Eigen::Infinity>() : 0.0;
        double cs = std::max(pnorm, qn);
        c_ = cs < 1e-4 ? 1.0 : 1.0 / std::min(cs, 1e4);
        Pf *= c_;
        q_ *= c_;
        P_ = Pf.triangularView<Eigen::Upper>();
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (std::isfinite(l_[i])) l_[i] *= E_[i];
            if (std::isfinite(u_[i])) u_[i] *= E_[i];
        }
        radial_.clear();
        for (const auto& r : prob.radial) radial_.push_back(r);
    }

    void init_rho() {
        rho_base_ = set_.rho;
        init_rho_values();
    }

    void init_rho_values() {
        rho_.resize(m_);
        for (Eigen::Index i = 0; i < m_; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            if (radial_row_[ui])
                rho_[i] = rho_base_;
            else if (!std::isfinite(l_[i]) && !std::isfinite(u_[i]))
                rho_[i] = 1e-6;
            else if (std::abs(u_[i] - l_[i]) < 1e-12)
                rho_[i] = 1e3 * rho_base_;
            else
                rho_[i] = rho_base_;
        }
    }

    SpMat assemble_kkt(const SpMat& P, double sigma, const SpMat& A, const Vec& neg_diag) const {
        const Eigen::Index n = P.rows(), m = A.rows();
        std::vector<Triplet> t;
        t.reserve(static_cast<std::size_t>(P.nonZeros() + A.nonZeros() + n + m));
        for (Eigen::Index j = 0; j < P.outerSize(); ++j)
            for (SpMat::InnerIterator it(P, j); it; ++it)
                if (it.row() <= it.col()) t.emplace_back(it.row(), it.col(), it.value());
        for (Eigen::Index j = 0; j < n; ++j) t.emplace_back(j, j, sigma);
        for (Eigen::Index j = 0; j < A.outerSize(); ++j)
            for (SpMat::InnerIterator it(A, j); it; ++it) t.emplace_back(j, n + it.row(), it.value());
        for (Eigen::Index i = 0; i < m; ++i) t.emplace_back(n + i, n + i, -neg_diag[i]);
        SpMat K(n + m, n + m);
        K.setFromTriplets(t.begin(), t.end());
        return K;
    }

    void build_kkt() {
        K_ = assemble_kkt(P_, set_.sigma, A_, rho_.cwiseInverse());
        ldlt_.analyzePattern(K_);
        ldlt_.factorize(K_);
        if (ldlt_.info() != Eigen::Success) throw SolverError("KKT factorization failed");
        // Positions of the -1/rho diagonal entries for cheap updates.
        diag_pos_.assign(static_cast<std::size_t>(m_), -1);
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Eigen::Index col = n_ + i;
            for (SpMat::InnerIterator it(K_, col); it; ++it)
                if (it.row() == col) diag_pos_[static_cast<std::size_t>(i)] = &it.valueRef() - K_.valuePtr();
        }
    }

    void update_kkt_rho() {
        for (Eigen::Index i = 0; i < m_; ++i) K_.valuePtr()[diag_pos_[static_cast<std::size_t>(i)]] = -1.0 / rho_[i];
        ldlt_.factorize(K_);
        if (ldlt_.info() != Eigen::Success) throw SolverError("KKT refactorization failed");
    }

    void project(Vec& w) const {
        for (Eigen::Index i = 0; i < m_; ++i)
            if (!radial_row_[static_cast<std::size_t>(i)]) w[i] = std::clamp(w[i], l_[i], u_[i]);
        for (const auto& r : radial_) {
            const double e = E_[r.row_a];
            const double kappa = c_ / (rho_[r.row_a] * e * e);
            const double pa = w[r.row_a] / e + r.offset_a, pb = w[r.row_b] / e + r.offset_b;
            const double r0 = std::hypot(pa, pb);
            if (r0 * r0 <= r.limit || r0 == 0.0) continue;
            const double lim = std::sqrt(std::max(r.limit, 0.0));
            const double k4 = 4.0 * kappa * r.weight;
            auto f = [&](double rr) { return k4 * rr * (rr * rr - r.limit) + rr - r0; };
            double lo = lim, hi = r0, rr = r0;
            for (int k = 0; k < 60; ++k) {
                const double fv = f(rr);
                if (std::abs(fv) <= 1e-15 * std::max(1.0, r0)) break;
                if (fv > 0) hi = rr; else lo = rr;
                const double df = k4 * (3.0 * rr * rr - r.limit) + 1.0;
                double nr = rr - fv / df;
                if (!(nr > lo && nr < hi)) nr = 0.5 * (lo + hi);
                if (std::abs(nr - rr) <= 1e-16 * std::max(1.0, r0)) {
                    rr = nr;
                    break;
                }
                rr = nr;
            }
            const double s = rr / r0;
            w[r.row_a] = e * (pa * s - r.offset_a);
            w[r.row_b] = e * (pb * s - r.offset_b);
        }
    }

    Residuals residuals(const Vec& x, const Vec& z, const Vec& y) const {
        Residuals r{};
        const Vec ax = A_ * x;
        const Vec px = P_.selfadjointView<Eigen::Upper>() * x;
        const Vec aty = A_.transpose() * y;
        const Vec Einv = E_.cwiseInverse();
        const Vec Dinv = D_.cwiseInverse();
        auto inf = [](const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
        r.prim = inf((ax - z).cwiseProduct(Einv));
        r.dual = inf((px + q_ + aty).cwiseProduct(Dinv)) / c_;
        r.eps_prim = set_.eps_abs + set_.eps_rel * std::max(inf(ax.cwiseProduct(Einv)), inf(z.cwiseProduct(Einv)));
        r.eps_dual = set_.eps_abs + set_.eps_rel / c_ *
                                        std::max({inf(px.cwiseProduct(Dinv)), inf(aty.cwiseProduct(Dinv)), inf(q_.cwiseProduct(Dinv))});
        return r;
    }

    // Solve the equality-constrained problem on the guessed active set.
    void try_polish(const Vec& x, const Vec& z, const Vec& y, Result& res) {
        for (const auto& r : radial_) {
            const double e = E_[r.row_a];
            const double pa = z[r.row_a] / e + r.offset_a, pb = z[r.row_b] / e + r.offset_b;
            if (pa * pa + pb * pb > r.limit - 1e-9 * std::max(1.0, r.limit)) return;
        }
        std::vector<Eigen::Index> act;
        std::vector<double> target;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (radial_row_[static_cast<std::size_t>(i)]) continue;
            const bool lo = z[i] - l_[i] < -y[i];
            const bool up = u_[i] - z[i] < y[i];
            if (lo) {
                act.push_back(i);
                target.push_back(l_[i]);
            } else if (up) {
                act.push_back(i);
                target.push_back(u_[i]);
            }
        }
        const auto na = static_cast<Eigen::Index>(act.size());
        std::vector<Triplet> t;
        // Row-major copy for row extraction.
        Eigen::SparseMatrix<double, Eigen::RowMajor> Ar = A_;
        for (Eigen::Index k = 0; k < na; ++k)
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ar, act[static_cast<std::size_t>(k)]); it; ++it)
                t.emplace_back(k, it.col(), it.value());
        SpMat Ared(na, n_);
        Ared.setFromTriplets(t.begin(), t.end());
        const double delta = 1e-7;
        SpMat Kd = assemble_kkt(P_, delta, Ared, Vec::Constant(na, delta));
        SpMat K0 = assemble_kkt(P_, 0.0, Ared, Vec::Zero(na));
        Eigen::SimplicialLDLT<SpMat, Eigen::Upper, Eigen::AMDOrdering<int>> ldlt(Kd);
        if (ldlt.info() != Eigen::Success) return;
        Vec rhs(n_ + na);
        rhs.head(n_) = -q_;
        for (Eigen::Index k = 0; k < na; ++k) rhs[n_ + k] = target[static_cast<std::size_t>(k)];
        Vec sol = ldlt.solve(rhs);
        for (int k = 0; k < set_.polish_refine; ++k) {
            const Vec r = rhs - K0.selfadjointView<Eigen::Upper>() * sol;
            sol += ldlt.solve(r);
        }
        if (!sol.allFinite()) return;
        const Vec xp = sol.head(n_);
        Vec yp = Vec::Zero(m_);
        for (Eigen::Index k = 0; k < na; ++k) yp[act[static_cast<std::size_t>(k)]] = sol[n_ + k];
        Vec zp = A_ * xp;
        for (Eigen::Index i = 0; i < m_; ++i)
            if (!radial_row_[static_cast<std::size_t>(i)]) zp[i] = std::clamp(zp[i], l_[i], u_[i]);
        const auto rp = residuals(xp, zp, yp);
        const auto ra = residuals(x, z, y);
        // Dual sign must match the bound that is active.
        bool sign_ok = true;
        for (Eigen::Index k = 0; k < na; ++k) {
            const auto i = act[static_cast<std::size_t>(k)];
            if (std::abs(u_[i] - l_[i]) < 1e-12) continue;
            const bool at_lower = target[static_cast<std::size_t>(k)] == l_[i];
            if ((at_lower && yp[i] > 1e-7) || (!at_lower && yp[i] < -1e-7)) sign_ok = false;
        }
        if (!sign_ok) return;
        if (rp.prim <= std::max(ra.prim, rp.eps_prim) && rp.dual <= std::max(ra.dual, rp.eps_dual)) {
            res.x = xp.cwiseProduct(D_);
            res.z = zp.cwiseQuotient(E_);
            res.y = yp.cwiseProduct(E_) / c_;
            res.primal_residual = rp.prim;
            res.dual_residual = rp.dual;
            res.polished = true;
            if (rp.prim <= rp.eps_prim && rp.dual <= rp.eps_dual) res.status = Status::solved;
        }
    }

    Settings set_;
    Eigen::Index n_ = 0, m_ = 0;
    SpMat P_, A_, K_;
    Vec q_, l_, u_, D_, E_, rho_;
    double c_ = 1.0;
    double rho_base_ = 0.1;
    std::vector<bool> radial_row_;
    std::vector<RadialPenalty> radial_;
    std::vector<std::ptrdiff_t> diag_pos_;
    Eigen::SimplicialLDLT<SpMat, Eigen::Upper, Eigen::AMDOrdering<int>> ldlt_;
};

}  // namespace dergrid::qp
