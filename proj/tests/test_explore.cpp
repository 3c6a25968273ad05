#include <cmath>
#include <random>

#include "doctest.h"
#include "nla/explore.hpp"

using namespace nla;

namespace {

// quadratic log target -0.5 (x-a)' P (x-a); everything about it is known
struct Quad {
    Vector a;
    Matrix P;
    double operator()(const Vector& x) const {
        Vector d = x - a;
        return -0.5 * d.dot(P * d);
    }
};

Quad make_quad(int m, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    Matrix B(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) B(i, j) = nd(rng);
    Quad q;
    q.P = B * B.transpose() + Matrix::Identity(m, m);
    q.a = Vector(m);
    for (int i = 0; i < m; ++i) q.a(i) = nd(rng);
    return q;
}

}  // namespace

TEST_CASE("find_mode recovers the maximum and curvature of a quadratic") {
    for (unsigned seed : {1u, 2u, 3u}) {
        Quad q = make_quad(3, seed);
        Vector init = Vector::Zero(3);
        auto res = find_mode([&](const Vector& x) { return q(x); }, init);
        CHECK((res.mode - q.a).lpNorm<Eigen::Infinity>() < 1e-3);
        CHECK((res.H - q.P).lpNorm<Eigen::Infinity>() < 1e-4 * q.P.norm());
        // Sigma = V diag(lambda) V' must invert H
        Matrix Sig = res.V * res.lambda.asDiagonal() * res.V.transpose();
        CHECK((Sig * q.P - Matrix::Identity(3, 3)).lpNorm<Eigen::Infinity>() < 1e-2);
    }
}

TEST_CASE("z-parametrization round trip") {
    Quad q = make_quad(4, 9);
    auto res = find_mode([&](const Vector& x) { return q(x); }, Vector::Zero(4));
    std::mt19937 rng(17);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 20; ++t) {
        Vector th(4);
        for (int i = 0; i < 4; ++i) th(i) = nd(rng);
        Vector back = res.theta_of_z(res.z_of_theta(th));
        CHECK((back - th).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("find_mode handles the zero-dimensional case") {
    auto res = find_mode([](const Vector&) { return 3.5; }, Vector::Zero(0));
    CHECK(res.lp == doctest::Approx(3.5));
    CHECK(res.dim() == 0);
    auto grid = explore_grid([](const Vector&) { return 3.5; }, res);
    REQUIRE(grid.points.size() == 1);
    CHECK(grid.points[0].weight == doctest::Approx(1.0));
}

TEST_CASE("explore_grid: lattice covers the bulk of a gaussian target") {
    Quad q = make_quad(2, 5);
    LogTarget f = [&](const Vector& x) { return q(x); };
    auto res = find_mode(f, Vector::Zero(2));
    auto grid = explore_grid(f, res);
    // in standardized coordinates the target is a unit gaussian; the 2.5
    // drop keeps |z| < sqrt(5), an area of ~5 pi over cells of size 1
    CHECK(grid.points.size() > 9);
    CHECK(grid.points.size() < 40);
    for (const auto& p : grid.points) {
        CHECK(res.lp - p.lp < 2.5);
        CHECK(p.weight == doctest::Approx(1.0));
    }
    // mixture moments of z under exp(lp) * weight approximate N(0, I)
    double sw = 0.0;
    Vector mean = Vector::Zero(2);
    for (const auto& p : grid.points) {
        double w = std::exp(p.lp - res.lp) * p.weight;
        sw += w;
        mean += w * p.z;
    }
    mean /= sw;
    // truncation at drop 2.5 (|z| < sqrt(5)) trims the tails, so the lattice
    // variance sits below 1 and boundary cells leave a small mean offset
    CHECK(mean.lpNorm<Eigen::Infinity>() < 0.15);
    double var0 = 0.0;
    for (const auto& p : grid.points)
        var0 += std::exp(p.lp - res.lp) * p.weight * (p.z(0) - mean(0)) * (p.z(0) - mean(0));
    var0 /= sw;
    CHECK(var0 > 0.7);
    CHECK(var0 < 1.05);
}

TEST_CASE("explore_grid: flat target exhausts the point budget") {
    ModeResult res;
    res.mode = Vector::Zero(2);
    res.lp = 0.0;
    res.V = Matrix::Identity(2, 2);
    res.lambda = Vector::Ones(2);
    res.H = Matrix::Identity(2, 2);
    ExploreOptions opt;
    opt.budget = 100;
    CHECK_THROWS_AS(explore_grid([](const Vector&) { return 0.0; }, res, opt),
                    PointBudgetExceeded);
}

TEST_CASE("ccd_design: point counts and geometry") {
    for (int m : {2, 3, 4, 5, 6}) {
        Quad q = make_quad(m, static_cast<unsigned>(m));
        LogTarget f = [&](const Vector& x) { return q(x); };
        auto res = find_mode(f, Vector::Zero(m));
        auto grid = ccd_design(f, res);
        int expect = 1 + 2 * m + (m >= 6 ? (1 << (m - 1)) : (1 << m));
        CHECK(static_cast<int>(grid.points.size()) == expect);
        if (m == 2) CHECK(grid.points.size() == 9);
        const double r = 1.1 * std::sqrt(static_cast<double>(m));
        for (std::size_t k = 1; k < grid.points.size(); ++k)
            CHECK(grid.points[k].z.norm() == doctest::Approx(r).epsilon(1e-12));
    }
}

TEST_CASE("ccd_design: exact first and second moments on a standardized gaussian") {
    for (int m : {2, 3, 5, 6}) {
        Quad q = make_quad(m, static_cast<unsigned>(10 + m));
        LogTarget f = [&](const Vector& x) { return q(x); };
        // exact mode and curvature, so the check can be tight
        ModeResult res;
        res.mode = q.a;
        res.lp = 0.0;
        res.H = q.P;
        Eigen::SelfAdjointEigenSolver<Matrix> es(q.P);
        res.V = es.eigenvectors();
        res.lambda = es.eigenvalues().cwiseInverse();
        auto grid = ccd_design(f, res);
        // for a gaussian target exp(lp) * weight reduces to the design
        // weights, which integrate z and z z' exactly
        double sw = 0.0;
        Vector mean = Vector::Zero(m);
        Matrix second = Matrix::Zero(m, m);
        for (const auto& p : grid.points) {
            double w = std::exp(p.lp - res.lp) * p.weight;
            sw += w;
            mean += w * p.z;
            second += w * p.z * p.z.transpose();
        }
        mean /= sw;
        second /= sw;
        CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK((second - Matrix::Identity(m, m)).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}
