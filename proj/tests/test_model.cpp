#include <cmath>

#include "doctest.h"
#include "nla/assemble.hpp"
#include "nla/model.hpp"

using namespace nla;

namespace {

// binomial + poisson model over 2n rows with one shared covariate,
// mirroring a two-likelihood response-matrix layout
ModelSpec two_likelihood_spec(int n = 5) {
    ModelSpec spec;
    spec.likelihoods.resize(2);
    spec.likelihoods[0].family = Family::Binomial;
    spec.likelihoods[1].family = Family::Poisson;
    FixedEffect intercept;
    intercept.name = "intercept";
    intercept.intercept = true;
    intercept.prior_prec = 0.0;
    FixedEffect slope;
    slope.name = "xx";
    slope.column = "xx";
    spec.fixed_effects = {intercept, slope};
    spec.data.rows = 2 * n;
    std::vector<double> xx;
    for (int i = 0; i < 2 * n; ++i) xx.push_back(0.1 * i);
    spec.data.columns["xx"] = xx;
    spec.data.response = Matrix::Constant(2 * n, 2, std::nan(""));
    for (int i = 0; i < n; ++i) spec.data.response(i, 0) = 1.0;
    for (int i = 0; i < n; ++i) spec.data.response(n + i, 1) = 2.0;
    return spec;
}

}  // namespace

TEST_CASE("prior log densities") {
    // loggamma(1, 0.2161) at internal 0
    PriorSpec lg{PriorSpec::LogGamma, 1.0, 0.2161};
    CHECK(lg.logdens(0.0) == doctest::Approx(std::log(0.2161) - 0.2161).epsilon(1e-10));
    CHECK(lg.logdens(0.0) == doctest::Approx(-1.7488).epsilon(1e-3));

    PriorSpec g{PriorSpec::Gaussian, 0.0, 0.3};
    CHECK(g.logdens(0.0) == doctest::Approx(0.5 * std::log(0.3 / (2.0 * M_PI))).epsilon(1e-12));

    PriorSpec flat{PriorSpec::Gaussian, 0.0, 0.0};
    CHECK(flat.logdens(3.7) == doctest::Approx(0.0));
}

TEST_CASE("transforms are mutual inverses over a wide internal range") {
    std::vector<HyperTransform> trs = {
        {HyperTransform::Identity},
        {HyperTransform::Log},
        {HyperTransform::CorrFisher},
        {HyperTransform::IntervalLogit, -0.5, 1.0},
    };
    for (const auto& tr : trs)
        for (double v = -10.0; v <= 10.0; v += 0.25)
            CHECK(tr.internal(tr.natural(v)) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("transform derivative matches finite differences") {
    HyperTransform trs[] = {{HyperTransform::Log},
                            {HyperTransform::CorrFisher},
                            {HyperTransform::IntervalLogit, -1.0 / 3, 1.0}};
    for (const auto& tr : trs)
        for (double v = -4.0; v <= 4.0; v += 0.5) {
            double h = 1e-6;
            double fd = (tr.natural(v + h) - tr.natural(v - h)) / (2 * h);
            CHECK(tr.dnat(v) == doctest::Approx(fd).epsilon(1e-6));
        }
}

TEST_CASE("registry: likelihood hypers first, then components") {
    ModelSpec spec = two_likelihood_spec();
    spec.likelihoods[0].family = Family::Gaussian;  // gets a precision slot
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Ar1;
    c.size = 5;
    c.index_column = "idx";
    spec.components.push_back(c);
    auto reg = build_registry(spec);
    REQUIRE(reg.total() == 3);
    CHECK(reg.info(0).name == "prec_obs1");
    CHECK(reg.info(1).name == "u_prec");
    CHECK(reg.info(2).name == "u_rho");
}

TEST_CASE("registry: fixed hyperparameters are excluded from the free set") {
    ModelSpec spec = two_likelihood_spec();
    spec.likelihoods[1].family = Family::Gaussian;
    HyperSetting s;
    s.fixed = true;
    s.fixed_value = 3.0;
    spec.likelihoods[1].hyper["prec"] = s;
    auto reg = build_registry(spec);
    REQUIRE(reg.total() == 1);
    CHECK(reg.free_count() == 0);
    Vector full = reg.expand(Vector::Zero(0));
    CHECK(full(0) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("log_prior sums free slots with Jacobians") {
    HyperRegistry reg;
    HyperInfo a;
    a.name = "prec";
    a.transform.kind = HyperTransform::Log;
    a.prior = PriorSpec{PriorSpec::LogGamma, 1.0, 0.2161};
    reg.add(a);
    HyperInfo b;
    b.name = "rho";
    b.transform.kind = HyperTransform::CorrFisher;
    b.prior = PriorSpec{PriorSpec::Gaussian, 0.0, 0.3};
    reg.add(b);
    Vector th(2);
    th << 0.0, 0.0;
    double expect = std::log(0.2161) - 0.2161 + 0.5 * std::log(0.3 / (2.0 * M_PI));
    CHECK(reg.log_prior(th) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("validate: well-formed spec produces no diagnostics") {
    ModelSpec spec = two_likelihood_spec();
    CHECK(validate(spec).empty());
}

TEST_CASE("validate: copy of unknown component") {
    ModelSpec spec = two_likelihood_spec();
    LatentComponent c;
    c.name = "b";
    c.copy_of = "missing";
    c.index_column = "xx";
    spec.components.push_back(c);
    auto diag = validate(spec);
    CHECK(!diag.empty());
}

TEST_CASE("validate: double-booked response row") {
    ModelSpec spec = two_likelihood_spec();
    spec.data.response(0, 1) = 1.0;  // row 0 now owned by both blocks
    auto diag = validate(spec);
    REQUIRE(diag.size() == 1);
    CHECK(diag[0].find("row 1") != std::string::npos);
}

TEST_CASE("assemble: layout and factorizability of a fixed-effects model") {
    ModelSpec spec = two_likelihood_spec();
    auto reg = build_registry(spec);
    ThetaView tv(reg, Vector::Zero(reg.total()));
    auto asm_ = assemble_joint(spec, tv);
    CHECK(asm_.n == 2 * 5 + 2);  // eta rows + 2 fixed effects
    CHECK(asm_.entry("eta").offset == 0);
    CHECK(asm_.entry("intercept").length == 1);
    CHECK(asm_.obs.size() == 10);
    CHECK_NOTHROW(factorize(asm_.Q));
}

TEST_CASE("assemble: rw1 component is factorizable via constraint regularization") {
    ModelSpec spec = two_likelihood_spec(4);
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Rw1;
    c.size = 8;
    c.index_column = "idx";
    spec.components.push_back(c);
    std::vector<double> idx;
    for (int i = 0; i < 8; ++i) idx.push_back(i + 1);
    spec.data.columns["idx"] = idx;
    auto reg = build_registry(spec);
    ThetaView tv(reg, Vector::Zero(reg.total()));
    auto asm_ = assemble_joint(spec, tv);
    CHECK(asm_.constraints.count() == 1);
    CHECK_NOTHROW(factorize(asm_.Q));
}
