#include <gtest/gtest.h>

#include <random>

#include "dergrid/qp.hpp"

using namespace dergrid::qp;

namespace {

SpMat sparse(const Eigen::MatrixXd& d) { return d.sparseView(); }

Problem make(const Eigen::MatrixXd& P, const Vec& q, const Eigen::MatrixXd& A, const Vec& l, const Vec& u) {
    Problem p;
    p.P = sparse(Eigen::MatrixXd(P.triangularView<Eigen::Upper>()));
    p.q = q;
    p.A = sparse(A);
    p.l = l;
    p.u = u;
    return p;
}

}  // namespace

TEST(Admm, SmallQpWithCoupledInequality) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(2, 2);
    Vec q(2);
    q << -1, -1;
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    auto prob = make(P, q, A, Vec::Constant(1, -kInf), Vec::Constant(1, 1.0));
    AdmmSolver s;
    auto r = s.solve(prob);
    ASSERT_EQ(r.status, Status::solved);
    EXPECT_NEAR(r.x[0], 0.5, 1e-6);
    EXPECT_NEAR(r.x[1], 0.5, 1e-6);
}

TEST(Admm, LinearProgramPolishesToVertex) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2, 2);
    Vec q(2);
    q << -1, -2;
    Eigen::MatrixXd A(3, 2);
    A << 1, 1, 1, 0, 0, 1;
    Vec l(3), u(3);
    l << -kInf, 0, 0;
    u << 4, 3, 3;
    auto prob = make(P, q, A, l, u);
    AdmmSolver s;
    auto r = s.solve(prob);
    ASSERT_EQ(r.status, Status::solved);
    EXPECT_TRUE(r.polished);
    EXPECT_NEAR(r.x[0], 1.0, 1e-9);
    EXPECT_NEAR(r.x[1], 3.0, 1e-9);
    EXPECT_NEAR(r.objective, -7.0, 1e-9);
}

TEST(Admm, EqualityConstrainedMatchesKktSolve) {
    std::mt19937 gen(7);
    std::normal_distribution<double> nd;
    const int n = 12, me = 4;
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = nd(gen);
    Eigen::MatrixXd P = M.transpose() * M + Eigen::MatrixXd::Identity(n, n);
    Vec q(n);
    for (int i = 0; i < n; ++i) q[i] = nd(gen);
    Eigen::MatrixXd A(me, n);
    for (int i = 0; i < me; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = nd(gen);
    Vec b(me);
    for (int i = 0; i < me; ++i) b[i] = nd(gen);

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = P;
    K.topRightCorner(n, me) = A.transpose();
    K.bottomLeftCorner(me, n) = A;
    Vec rhs(n + me);
    rhs << -q, b;
    const Vec ref = K.fullPivLu().solve(rhs).head(n);

    auto prob = make(P, q, A, b, b);
    AdmmSolver s;
    auto r = s.solve(prob);
    ASSERT_EQ(r.status, Status::solved);
    EXPECT_LT((r.x - ref).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Admm, RadialPenaltyMatchesScalarLineSearch) {
    // minimize (x - 3)^2 + w([x^2 + 0.5^2 - 4]_+)^2 with the second coordinate pinned.
    const double w = 5.0;
    Eigen::MatrixXd P(2, 2);
    P << 2, 0, 0, 0;
    Vec q(2);
    q << -6, 0;
    Eigen::MatrixXd A(3, 2);
    A << 1, 0, 0, 1, 0, 1;
    Vec l(3), u(3);
    l << -kInf, -kInf, 0.5;
    u << kInf, kInf, 0.5;
    auto prob = make(P, q, A, l, u);
    prob.radial.push_back({0, 1, 0.0, 0.0, 4.0, w});
    AdmmSolver s;
    auto r = s.solve(prob);
    ASSERT_EQ(r.status, Status::solved);

    auto f = [&](double x) {
        const double e = std::max(0.0, x * x + 0.25 - 4.0);
        return (x - 3) * (x - 3) + w * e * e;
    };
    double a = 0.0, b = 3.0;
    for (int i = 0; i < 200; ++i) {
        const double m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
        if (f(m1) < f(m2)) b = m2; else a = m1;
    }
    EXPECT_NEAR(r.x[0], 0.5 * (a + b), 1e-5);
    EXPECT_NEAR(r.x[1], 0.5, 1e-6);
}

TEST(Admm, WarmStartConvergesFaster) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(3, 3) * 0.01;
    Vec q(3);
    q << -1, 0.5, -0.2;
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3);
    auto prob = make(P, q, A, Vec::Constant(3, -1.0), Vec::Constant(3, 1.0));
    Settings st;
    st.polish = false;
    AdmmSolver s(st);
    auto cold = s.solve(prob);
    ASSERT_EQ(cold.status, Status::solved);
    auto warm = s.solve(prob, WarmStart{cold.x, cold.y, cold.z});
    EXPECT_LE(warm.iterations, cold.iterations);
}

TEST(Admm, RejectsInconsistentBounds) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(1, 1);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(1, 1);
    auto prob = make(P, Vec::Zero(1), A, Vec::Constant(1, 1.0), Vec::Constant(1, 0.0));
    AdmmSolver s;
    EXPECT_THROW(s.solve(prob), dergrid::SolverError);
}
