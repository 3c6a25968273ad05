#include <cmath>

#include "doctest.h"
#include "nla/assemble.hpp"
#include "nla/latent.hpp"
#include "test_util.hpp"

using namespace nla;

namespace {

HyperRegistry reg_for(const std::vector<std::pair<std::string, HyperTransform::Kind>>& slots) {
    HyperRegistry reg;
    for (const auto& [name, kind] : slots) {
        HyperInfo h;
        h.name = name;
        h.transform.kind = kind;
        h.prior = PriorSpec{};
        reg.add(h);
    }
    return reg;
}

}  // namespace

TEST_CASE("build_precision: iid") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Iid;
    c.size = 3;
    auto reg = reg_for({{"u_prec", HyperTransform::Log}});
    Vector th(1);
    th << std::log(2.0);
    auto bp = build_precision(c, ThetaView(reg, th));
    CHECK((bp.Q.dense() - 2.0 * Matrix::Identity(3, 3)).norm() == doctest::Approx(0.0));
    CHECK(bp.constraints.count() == 0);
}

TEST_CASE("build_precision: ar1 matches dense covariance oracle") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Ar1;
    c.size = 3;
    auto reg = reg_for({{"u_prec", HyperTransform::Log}, {"u_rho", HyperTransform::CorrFisher}});
    Vector th(2);
    th << std::log(1.0), std::log((1.0 + 0.5) / (1.0 - 0.5));
    auto bp = build_precision(c, ThetaView(reg, th));
    Matrix oracle = testutil::ar1_precision_oracle(3, 0.5, 1.0);
    CHECK((bp.Q.dense() - oracle).norm() < 1e-10);
}

TEST_CASE("build_precision: rw1 second-difference oracle and constraint") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Rw1;
    c.size = 4;
    auto reg = reg_for({{"u_prec", HyperTransform::Log}});
    Vector th(1);
    th << 0.0;  // kappa = 1
    auto bp = build_precision(c, ThetaView(reg, th));
    // assemble D^T D by hand from the first-difference operator
    Matrix d = Matrix::Zero(3, 4);
    for (int i = 0; i < 3; ++i) {
        d(i, i) = -1.0;
        d(i, i + 1) = 1.0;
    }
    CHECK((bp.Q.dense() - d.transpose() * d).norm() < 1e-12);
    REQUIRE(bp.constraints.count() == 1);
    CHECK(bp.constraints.A.row(0).sum() == doctest::Approx(4.0));
}

TEST_CASE("build_precision: invalid hyperparameters throw") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Ar1;
    c.size = 3;
    auto reg = reg_for({{"u_prec", HyperTransform::Identity}, {"u_rho", HyperTransform::Identity}});
    Vector bad_phi(2);
    bad_phi << 1.0, 1.5;
    CHECK_THROWS_AS(build_precision(c, ThetaView(reg, bad_phi)), InvalidHyper);
    Vector bad_tau(2);
    bad_tau << -1.0, 0.5;
    CHECK_THROWS_AS(build_precision(c, ThetaView(reg, bad_tau)), InvalidHyper);
}

TEST_CASE("replicate_expand") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Iid;
    c.size = 2;
    auto reg = reg_for({{"u_prec", HyperTransform::Log}});
    Vector th(1);
    th << std::log(3.0);

    c.replicate_count = 1;
    auto one = replicate_expand(c, ThetaView(reg, th));
    CHECK((one.Q.dense() - 3.0 * Matrix::Identity(2, 2)).norm() == doctest::Approx(0.0));

    c.replicate_count = 2;
    auto two = replicate_expand(c, ThetaView(reg, th));
    CHECK((two.Q.dense() - 3.0 * Matrix::Identity(4, 4)).norm() == doctest::Approx(0.0));
}

TEST_CASE("replicate_expand: ar1 block-diagonal, logdet doubles") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Ar1;
    c.size = 3;
    c.replicate_count = 2;
    auto reg = reg_for({{"u_prec", HyperTransform::Log}, {"u_rho", HyperTransform::CorrFisher}});
    Vector th(2);
    th << 0.0, std::log(3.0);  // tau=1, phi=0.5
    auto bp = replicate_expand(c, ThetaView(reg, th));
    Matrix single = testutil::ar1_precision_oracle(3, 0.5, 1.0);
    Matrix expect = Matrix::Zero(6, 6);
    expect.block(0, 0, 3, 3) = single;
    expect.block(3, 3, 3, 3) = single;
    CHECK((bp.Q.dense() - expect).norm() < 1e-10);
    CHECK(factorize(bp.Q).logdet() ==
          doctest::Approx(2.0 * std::log(single.determinant())).epsilon(1e-8));
}

TEST_CASE("group_expand: kron oracle and exchangeable independence") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Iid;
    c.size = 2;
    c.group = GroupSpec{2, GroupModel::Ar1};
    auto reg = reg_for({{"u_prec", HyperTransform::Log}, {"u_group_rho", HyperTransform::CorrFisher}});
    Vector th(2);
    th << 0.0, std::log((1.0 + 0.4) / (1.0 - 0.4));
    auto bp = group_expand(c, ThetaView(reg, th));
    Matrix qg = testutil::ar1_precision_oracle(2, 0.4, 1.0);
    Matrix expect(4, 4);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) expect.block(2 * i, 2 * j, 2, 2) = qg(i, j) * Matrix::Identity(2, 2);
    CHECK((bp.Q.dense() - expect).norm() < 1e-10);

    // exchangeable with rho = 0 equals replicate with r = group count
    LatentComponent ce = c;
    ce.group = GroupSpec{3, GroupModel::Exchangeable};
    auto rege = reg_for({{"u_prec", HyperTransform::Log}, {"u_group_rho", HyperTransform::Identity}});
    Vector the(2);
    the << 0.0, 0.0;
    auto ge = group_expand(ce, ThetaView(rege, the));
    LatentComponent cr;
    cr.name = "u";
    cr.kind = LatentKind::Iid;
    cr.size = 2;
    cr.replicate_count = 3;
    auto regr = reg_for({{"u_prec", HyperTransform::Log}});
    Vector thr(1);
    thr << 0.0;
    auto re = replicate_expand(cr, ThetaView(regr, thr));
    CHECK((ge.Q.dense() - re.Q.dense()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("group_expand: count 1 identical to build_precision") {
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Iid;
    c.size = 3;
    c.group = GroupSpec{1, GroupModel::Ar1};
    auto reg = reg_for({{"u_prec", HyperTransform::Log}});
    Vector th(1);
    th << 0.0;
    auto bp = group_expand(c, ThetaView(reg, th));
    CHECK((bp.Q.dense() - Matrix::Identity(3, 3)).norm() == doctest::Approx(0.0));
}

TEST_CASE("besag: constraints and connectivity") {
    LatentComponent c;
    c.name = "s";
    c.kind = LatentKind::Besag;
    c.size = 4;
    c.graph = {{1}, {0, 2}, {1, 3}, {2}};  // path graph
    auto reg = reg_for({{"s_prec", HyperTransform::Log}});
    Vector th(1);
    th << 0.0;
    auto bp = build_precision(c, ThetaView(reg, th));
    CHECK(bp.constraints.count() == 1);
    CHECK(bp.Q.dense()(1, 1) == doctest::Approx(2.0));
    CHECK(bp.Q.dense()(1, 0) == doctest::Approx(-1.0));

    c.graph = {{1}, {0}, {3}, {2}};  // two components
    CHECK_THROWS_AS(build_precision(c, ThetaView(reg, th)), DisconnectedGraph);
    c.allow_disconnected = true;
    auto bp2 = build_precision(c, ThetaView(reg, th));
    CHECK(bp2.constraints.count() == 2);
}

TEST_CASE("iid2d: precision blocks match 2x2 inversion") {
    Vector p(2), r(1);
    p << 2.0, 4.0;
    r << 0.5;
    auto q = iidkd_precision(2, 3, p, r);
    Matrix cov(2, 2);
    cov << 0.5, 0.5 / std::sqrt(8.0), 0.5 / std::sqrt(8.0), 0.25;
    Matrix q22 = cov.inverse();
    Matrix qd = q.dense();
    for (int u = 0; u < 3; ++u) {
        CHECK(qd(u, u) == doctest::Approx(q22(0, 0)));
        CHECK(qd(3 + u, 3 + u) == doctest::Approx(q22(1, 1)));
        CHECK(qd(3 + u, u) == doctest::Approx(q22(1, 0)));
    }
}
