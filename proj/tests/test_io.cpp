#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nla/io.hpp"

using namespace nla;

TEST_CASE("read_graph: besag adjacency round trip") {
    std::istringstream in("4\n1 2 2 3\n2 2 1 4\n3 1 1\n4 1 2\n");
    auto g = read_graph(in);
    REQUIRE(g.size() == 4);
    CHECK(g[0] == std::vector<int>{1, 2});
    CHECK(g[1] == std::vector<int>{0, 3});
    CHECK(g[2] == std::vector<int>{0});
    CHECK(g[3] == std::vector<int>{1});
}

TEST_CASE("read_graph: malformed input") {
    std::istringstream a("0\n");
    CHECK_THROWS_AS(read_graph(a), SpecError);
    std::istringstream b("2\n1 1 5\n2 0\n");
    CHECK_THROWS_AS(read_graph(b), SpecError);
}

TEST_CASE("read_A_matrix: triplets") {
    std::istringstream in("2 3\n1 1 1.5\n2 3 -2\n");
    SpMat A = read_A_matrix(in);
    CHECK(A.rows() == 2);
    CHECK(A.cols() == 3);
    CHECK(A.coeff(0, 0) == 1.5);
    CHECK(A.coeff(1, 2) == -2.0);
    std::istringstream bad("2 2\n3 1 1.0\n");
    CHECK_THROWS_AS(read_A_matrix(bad), SpecError);
}

TEST_CASE("read_data_csv: NA handling, responses and ntrials") {
    std::istringstream in(
        "idx,x,y1,y2,ntrials1\n"
        "1,0.5,3,NA,10\n"
        "2,NA,NA,1.25,NA\n"
        "3,-1,7,NA,12\n");
    DataSet d = read_data_csv(in, 2);
    CHECK(d.rows == 3);
    CHECK(d.columns.at("idx")[2] == 3.0);
    CHECK(std::isnan(d.columns.at("x")[1]));
    CHECK(d.response(0, 0) == 3.0);
    CHECK(std::isnan(d.response(0, 1)));
    CHECK(d.response(1, 1) == 1.25);
    CHECK(d.ntrials(2, 0) == 12.0);
    CHECK(d.columns.count("y1") == 0);
}

TEST_CASE("read_data_csv: ragged row rejected") {
    std::istringstream in("a,b,y1\n1,2,3\n4,5\n");
    CHECK_THROWS_AS(read_data_csv(in, 1), SpecError);
}

TEST_CASE("model json: full round trip") {
    ModelSpec spec;
    spec.likelihoods.resize(2);
    spec.likelihoods[0].family = Family::Poisson;
    spec.likelihoods[1].family = Family::Binomial;
    spec.likelihoods[1].ntrials_column = "nt";
    HyperSetting hs;
    hs.prior = PriorSpec{PriorSpec::LogGamma, 1.0, 0.2161};
    hs.initial = 2.0;

    LatentComponent z;
    z.name = "z";
    z.kind = LatentKind::Ar1;
    z.size = 10;
    z.replicate_count = 2;
    z.index_column = "i";
    z.replicate_column = "r";
    z.hyper["prec"] = hs;
    HyperSetting rho;
    rho.prior = PriorSpec{PriorSpec::Gaussian, 0.0, 0.3};
    z.hyper["rho"] = rho;
    spec.components.push_back(z);

    LatentComponent b;
    b.name = "zcopy";
    b.copy_of = "z";
    b.copy_scale_unknown = true;
    b.index_column = "j";
    b.weight_column = "w";
    spec.components.push_back(b);

    LatentComponent s;
    s.name = "s";
    s.kind = LatentKind::Besag;
    s.size = 3;
    s.graph = {{1}, {0, 2}, {1}};
    s.index_column = "k";
    spec.components.push_back(s);

    FixedEffect ic;
    ic.name = "intercept";
    ic.intercept = true;
    ic.prior_prec = 0.0;
    spec.fixed_effects.push_back(ic);
    FixedEffect fx;
    fx.name = "xx";
    fx.column = "xx";
    spec.fixed_effects.push_back(fx);

    SpMat A(2, 4);
    A.insert(0, 0) = 1.0;
    A.insert(1, 3) = -0.5;
    A.makeCompressed();
    spec.A = A;

    Lincomb lc;
    lc.name = "v1";
    lc.terms.push_back({"z", false, 2, 3.0});
    lc.terms.push_back({"xx", true, 1, 1.0});
    spec.lincombs.push_back(lc);
    spec.config.fixed_prec_floor = 1e-3;

    Json j = serialize_model(spec);
    ModelSpec back = parse_model(j);
    CHECK(serialize_model(back) == j);

    CHECK(back.likelihoods[1].ntrials_column == "nt");
    REQUIRE(back.components.size() == 3);
    CHECK(back.components[0].kind == LatentKind::Ar1);
    CHECK(back.components[0].replicate_count == 2);
    CHECK(back.components[0].hyper.at("prec").prior->p2 == 0.2161);
    CHECK(back.components[0].hyper.at("prec").initial == 2.0);
    CHECK(back.components[1].copy_of == "z");
    CHECK(back.components[1].copy_scale_unknown);
    CHECK(back.components[2].graph == s.graph);
    CHECK(back.fixed_effects[0].intercept);
    CHECK(back.fixed_effects[0].prior_prec == 0.0);
    CHECK(back.fixed_effects[1].column == "xx");
    REQUIRE(back.A.has_value());
    CHECK(back.A->coeff(1, 3) == -0.5);
    REQUIRE(back.lincombs.size() == 1);
    CHECK(back.lincombs[0].terms[1].is_fixed_effect);
    CHECK(back.config.fixed_prec_floor == 1e-3);
}

TEST_CASE("load_model_file: malformed json carries a position") {
    std::string path = "/tmp/nla_bad_model.json";
    {
        std::ofstream out(path);
        out << "{ \"likelihoods\": [ { \"family\": }";
    }
    try {
        load_model_file(path, "/nonexistent.csv");
        FAIL("expected SpecError");
    } catch (const SpecError& e) {
        // nlohmann reports the byte position of the syntax error
        CHECK(std::string(e.what()).find("parse error") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("format_double: shortest round trip") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-3.0) == "-3");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
