#include <cmath>
#include <random>

#include "doctest.h"
#include "oracle.hpp"

using namespace nla;

namespace {

ModelSpec bare_iid(int n, Family fam, std::vector<double> ys) {
    ModelSpec spec;
    spec.likelihoods.resize(1);
    spec.likelihoods[0].family = fam;
    LatentComponent c;
    c.name = "u";
    c.kind = LatentKind::Iid;
    c.size = n;
    c.index_column = "idx";
    spec.components.push_back(c);
    spec.data.rows = n;
    std::vector<double> idx;
    for (int i = 0; i < n; ++i) idx.push_back(i + 1);
    spec.data.columns["idx"] = idx;
    spec.data.response = Matrix(n, 1);
    for (int i = 0; i < n; ++i) spec.data.response(i, 0) = ys[static_cast<std::size_t>(i)];
    return spec;
}

double tv_between(const Marginal& a, const Marginal& b) {
    Vector diff(a.abscissas.size());
    for (Eigen::Index i = 0; i < a.abscissas.size(); ++i)
        diff(i) = std::abs(a.densities(i) - marginal_density_at(b, a.abscissas(i)));
    return 0.5 * trapezoid(a.abscissas, diff);
}

}  // namespace

TEST_CASE("exact_gaussian_posterior: prior-only model returns prior moments") {
    ModelSpec spec = bare_iid(3, Family::Gaussian, {std::nan(""), std::nan(""), std::nan("")});
    auto reg = build_registry(spec);
    auto gp = oracle::exact_gaussian_posterior(spec, reg, reg.initial_free());
    int o = 3;  // eta rows first, then u
    CHECK(gp.mean.lpNorm<Eigen::Infinity>() < 1e-12);
    for (int i = 0; i < 3; ++i)
        CHECK(gp.cov(o + i, o + i) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("exact_gaussian_posterior: conjugate scalar update") {
    ModelSpec spec = bare_iid(1, Family::Gaussian, {1.8});
    auto reg = build_registry(spec);
    auto gp = oracle::exact_gaussian_posterior(spec, reg, Vector::Zero(2));
    // u ~ N(0,1), y | u ~ N(u, 1)  =>  u | y ~ N(y/2, 1/2)
    CHECK(gp.mean(1) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(gp.cov(1, 1) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("exact_gaussian_posterior: rejects non-gaussian blocks") {
    ModelSpec spec = bare_iid(2, Family::Poisson, {1.0, 2.0});
    auto reg = build_registry(spec);
    CHECK_THROWS_AS(oracle::exact_gaussian_posterior(spec, reg, reg.initial_free()),
                    oracle::NonGaussianBlock);
}

TEST_CASE("exact_gaussian_posterior: agrees with the inner approximation on ar1") {
    std::mt19937 rng(31);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> ys(50);
    for (auto& y : ys) y = nd(rng);
    ModelSpec spec = bare_iid(50, Family::Gaussian, ys);
    spec.components[0].kind = LatentKind::Ar1;
    auto reg = build_registry(spec);
    Vector th = reg.initial_free();
    auto gp = oracle::exact_gaussian_posterior(spec, reg, th);
    ThetaView tv(reg, reg.expand(th));
    Assembled a = assemble_joint(spec, tv);
    auto ga = fit_gaussian_approx(a);
    CHECK((ga.x_star - gp.mean).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((ga.var - gp.cov.diagonal()).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("quadrature_posterior: gaussian m=1 theta marginal matches closed form") {
    ModelSpec spec = bare_iid(6, Family::Gaussian, {0.3, -0.5, 1.2, 0.1, -0.9, 0.4});
    // pin the observation precision so only the component precision is free
    HyperSetting pin;
    pin.fixed = true;
    pin.fixed_value = 1.0;
    spec.likelihoods[0].hyper["prec"] = pin;
    HyperSetting informative;
    informative.prior = PriorSpec{PriorSpec::LogGamma, 2.0, 1.0};
    spec.components[0].hyper["prec"] = informative;
    auto reg = build_registry(spec);
    REQUIRE(reg.free_count() == 1);

    oracle::QuadratureSpec qs;
    qs.theta_lo = Vector::Constant(1, -4.0);
    qs.theta_hi = Vector::Constant(1, 5.0);
    qs.theta_nodes = 201;
    auto res = oracle::quadrature_posterior(spec, reg, qs);
    REQUIRE(res.theta_marginals.size() == 1);

    // closed form: y_i | theta ~ N(0, 1/tau_u + 1) independently
    Vector tj = linspace(-4.0, 5.0, 201);
    Vector dens(201);
    for (int k = 0; k < 201; ++k) {
        double tau_u = std::exp(tj(k));
        double v = 1.0 / tau_u + 1.0;
        double le = reg.log_prior(reg.expand(Vector::Constant(1, tj(k))));
        for (int i = 0; i < 6; ++i) {
            double y = spec.data.response(i, 0);
            le += -0.5 * std::log(2.0 * M_PI * v) - 0.5 * y * y / v;
        }
        dens(k) = std::exp(le);
    }
    auto closed = make_marginal(tj, dens);
    CHECK(tv_between(res.theta_marginals[0], closed) < 1e-6);
}

TEST_CASE("quadrature_posterior: poisson reference is grid-converged") {
    ModelSpec spec = bare_iid(3, Family::Poisson, {0.0, 2.0, 5.0});
    HyperSetting informative;
    informative.prior = PriorSpec{PriorSpec::LogGamma, 2.0, 1.0};
    spec.components[0].hyper["prec"] = informative;
    auto reg = build_registry(spec);
    oracle::QuadratureSpec qs;
    qs.theta_lo = Vector::Constant(1, -5.0);
    qs.theta_hi = Vector::Constant(1, 6.0);
    auto res1 = oracle::quadrature_posterior(spec, reg, qs);
    oracle::QuadratureSpec qs2 = qs;
    qs2.theta_nodes = 2 * qs.theta_nodes - 1;
    qs2.x_nodes = 2 * qs.x_nodes - 1;
    auto res2 = oracle::quadrature_posterior(spec, reg, qs2);
    CHECK(tv_between(res1.theta_marginals[0], res2.theta_marginals[0]) < 1e-4);
    for (int i = 0; i < 3; ++i)
        CHECK(tv_between(res1.latent_marginals[static_cast<std::size_t>(i)],
                         res2.latent_marginals[static_cast<std::size_t>(i)]) < 1e-4);
}

TEST_CASE("quadrature_posterior: flat prior with no data is flagged") {
    ModelSpec spec = bare_iid(2, Family::Poisson, {std::nan(""), std::nan("")});
    HyperSetting flat;
    flat.prior = PriorSpec{PriorSpec::None, 0.0, 0.0};
    spec.components[0].hyper["prec"] = flat;
    auto reg = build_registry(spec);
    oracle::QuadratureSpec qs;
    qs.theta_lo = Vector::Constant(1, -3.0);
    qs.theta_hi = Vector::Constant(1, 3.0);
    CHECK_THROWS_AS(oracle::quadrature_posterior(spec, reg, qs), DomainError);
}

TEST_CASE("quadrature_posterior: node budget") {
    ModelSpec spec = bare_iid(3, Family::Poisson, {1.0, 2.0, 3.0});
    auto reg = build_registry(spec);
    oracle::QuadratureSpec qs;
    qs.theta_lo = Vector::Constant(1, -3.0);
    qs.theta_hi = Vector::Constant(1, 3.0);
    qs.max_total = 100;
    CHECK_THROWS_AS(oracle::quadrature_posterior(spec, reg, qs), oracle::BudgetExceeded);
}
