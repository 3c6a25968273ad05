#pragma once

// File interfaces: the JSON model schema, CSV data tables with "NA"
// missing values, plain-text adjacency graphs and triplet observation
// matrices.  Parsing is strict; every diagnostic names the offending
// entity.

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nla/errors.hpp"
#include "nla/model.hpp"

namespace nla {

using Json = nlohmann::ordered_json;

inline Family family_from_name(const std::string& s) {
    if (s == "gaussian") return Family::Gaussian;
    if (s == "poisson") return Family::Poisson;
    if (s == "binomial") return Family::Binomial;
    throw SpecError("unknown likelihood family '" + s + "'");
}

/// Shortest round-trip decimal representation; locale independent, so
/// output files are byte-stable across environments.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// graphs and observation matrices

/// Besag graph file: first line n, then "node degree neighbor..." with
/// 1-indexed nodes.  Returns a 0-based adjacency list.
inline std::vector<std::vector<int>> read_graph(std::istream& in) {
    int n = 0;
    if (!(in >> n) || n < 1) throw SpecError("graph: bad node count");
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int node = 0, deg = 0;
        if (!(in >> node >> deg) || node < 1 || node > n || deg < 0)
            throw SpecError("graph: bad node line " + std::to_string(i + 1));
        auto& row = adj[static_cast<std::size_t>(node - 1)];
        for (int d = 0; d < deg; ++d) {
            int nb = 0;
            if (!(in >> nb) || nb < 1 || nb > n)
                throw SpecError("graph: bad neighbour of node " + std::to_string(node));
            row.push_back(nb - 1);
        }
    }
    return adj;
}

inline std::vector<std::vector<int>> read_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open graph file '" + path + "'");
    return read_graph(in);
}

/// Observation matrix file: "rows cols" then 1-indexed "i j value"
/// triplets until end of file.
inline SpMat read_A_matrix(std::istream& in) {
    int rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 1 || cols < 1)
        throw SpecError("A matrix: bad dimension line");
    std::vector<Triplet> ts;
    int i = 0, j = 0;
    double v = 0.0;
    while (in >> i >> j >> v) {
        if (i < 1 || i > rows || j < 1 || j > cols)
            throw SpecError("A matrix: entry (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") out of range");
        ts.emplace_back(i - 1, j - 1, v);
    }
    if (!in.eof()) throw SpecError("A matrix: malformed triplet");
    SpMat A(rows, cols);
    A.setFromTriplets(ts.begin(), ts.end());
    return A;
}

inline SpMat read_A_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open A matrix file '" + path + "'");
    return read_A_matrix(in);
}

// ---------------------------------------------------------------------------
// CSV data

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_cell(const std::string& s, int row, const std::string& col) {
    if (s.empty() || s == "NA") return std::nan("");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw SpecError("data: cannot parse '" + s + "' in column '" + col + "' row " +
                        std::to_string(row));
    return v;
}

}  // namespace detail

/// CSV table with a header row; "NA" or empty cells are missing.  The
/// response columns y1..yK (K = likelihood block count) become the
/// response matrix, ntrials1..ntrialsK (optional) the trials matrix, and
/// everything else a covariate column.
inline DataSet read_data_csv(std::istream& in, int n_likelihoods) {
    std::string line;
    if (!std::getline(in, line)) throw SpecError("data: empty file");
    std::vector<std::string> header = detail::split_csv_line(line);
    std::vector<std::vector<double>> cells(header.size());
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> parts = detail::split_csv_line(line);
        if (parts.size() != header.size())
            throw SpecError("data: row " + std::to_string(rows + 2) + " has " +
                            std::to_string(parts.size()) + " cells, expected " +
                            std::to_string(header.size()));
        for (std::size_t c = 0; c < parts.size(); ++c)
            cells[c].push_back(detail::parse_cell(parts[c], rows + 2, header[c]));
        ++rows;
    }

    DataSet d;
    d.rows = rows;
    d.response = Matrix::Constant(rows, n_likelihoods, std::nan(""));
    d.ntrials = Matrix::Constant(rows, n_likelihoods, std::nan(""));
    bool any_ntrials = false;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        int slot = -1;
        bool is_ntrials = false;
        if (h.size() > 1 && h[0] == 'y' && h.find_first_not_of("0123456789", 1) == std::string::npos)
            slot = std::stoi(h.substr(1)) - 1;
        else if (h.rfind("ntrials", 0) == 0 &&
                 h.find_first_not_of("0123456789", 7) == std::string::npos && h.size() > 7) {
            slot = std::stoi(h.substr(7)) - 1;
            is_ntrials = true;
        }
        if (slot >= 0) {
            if (slot >= n_likelihoods)
                throw SpecError("data: column '" + h + "' exceeds the likelihood block count");
            for (int r = 0; r < rows; ++r)
                (is_ntrials ? d.ntrials : d.response)(r, slot) = cells[c][static_cast<std::size_t>(r)];
            any_ntrials = any_ntrials || is_ntrials;
        } else {
            d.columns[h] = std::move(cells[c]);
        }
    }
    if (!any_ntrials) d.ntrials = Matrix();
    return d;
}

inline DataSet read_data_csv_file(const std::string& path, int n_likelihoods) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open data file '" + path + "'");
    return read_data_csv(in, n_likelihoods);
}

// ---------------------------------------------------------------------------
// JSON model schema

namespace detail {

inline PriorSpec prior_from_json(const Json& j) {
    PriorSpec p;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "loggamma")
        p.kind = PriorSpec::LogGamma;
    else if (kind == "gaussian")
        p.kind = PriorSpec::Gaussian;
    else if (kind == "none")
        p.kind = PriorSpec::None;
    else
        throw SpecError("unknown prior kind '" + kind + "'");
    if (p.kind != PriorSpec::None) {
        auto par = j.at("param");
        if (!par.is_array() || par.size() != 2) throw SpecError("prior param must have 2 entries");
        p.p1 = par[0].get<double>();
        p.p2 = par[1].get<double>();
    }
    return p;
}

inline Json prior_to_json(const PriorSpec& p) {
    Json j;
    switch (p.kind) {
        case PriorSpec::LogGamma: j["kind"] = "loggamma"; break;
        case PriorSpec::Gaussian: j["kind"] = "gaussian"; break;
        case PriorSpec::None: j["kind"] = "none"; break;
    }
    if (p.kind != PriorSpec::None) j["param"] = {p.p1, p.p2};
    return j;
}

inline std::map<std::string, HyperSetting> hyper_from_json(const Json& j) {
    std::map<std::string, HyperSetting> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        HyperSetting s;
        const Json& v = it.value();
        if (v.contains("prior")) s.prior = prior_from_json(v.at("prior"));
        if (v.contains("fixed")) s.fixed = v.at("fixed").get<bool>();
        if (v.contains("value")) s.fixed_value = v.at("value").get<double>();
        if (v.contains("initial")) s.initial = v.at("initial").get<double>();
        out[it.key()] = s;
    }
    return out;
}

inline Json hyper_to_json(const std::map<std::string, HyperSetting>& m) {
    Json j = Json::object();
    for (const auto& [key, s] : m) {
        Json v = Json::object();
        if (s.prior) v["prior"] = prior_to_json(*s.prior);
        if (s.fixed) {
            v["fixed"] = true;
            v["value"] = s.fixed_value;
        }
        if (s.initial) v["initial"] = *s.initial;
        j[key] = v;
    }
    return j;
}

inline std::string join_path(const std::string& base, const std::string& rel) {
    if (base.empty() || (!rel.empty() && rel[0] == '/')) return rel;
    return base + "/" + rel;
}

}  // namespace detail

/// Parses the model schema.  `base_dir` resolves relative graph / A-matrix
/// file references.  The bound data table is filled in separately.
inline ModelSpec parse_model(const Json& j, const std::string& base_dir = "") {
    ModelSpec spec;
    for (const Json& jl : j.at("likelihoods")) {
        LikelihoodSpec lk;
        lk.family = family_from_name(jl.at("family").get<std::string>());
        if (jl.contains("ntrials")) lk.ntrials_column = jl.at("ntrials").get<std::string>();
        if (jl.contains("hyper")) lk.hyper = detail::hyper_from_json(jl.at("hyper"));
        spec.likelihoods.push_back(std::move(lk));
    }
    if (j.contains("components"))
        for (const Json& jc : j.at("components")) {
            LatentComponent c;
            c.name = jc.at("name").get<std::string>();
            if (jc.contains("copy_of")) {
                c.copy_of = jc.at("copy_of").get<std::string>();
                if (jc.contains("copy_scale_unknown"))
                    c.copy_scale_unknown = jc.at("copy_scale_unknown").get<bool>();
                if (jc.contains("tau_copy_exponent"))
                    c.tau_copy_exponent = jc.at("tau_copy_exponent").get<double>();
            } else {
                c.kind = latent_kind_from_name(jc.at("model").get<std::string>());
                c.size = jc.at("size").get<int>();
                if (jc.contains("replicate_count")) c.replicate_count = jc.at("replicate_count").get<int>();
                if (jc.contains("group")) {
                    GroupSpec g;
                    g.count = jc.at("group").at("count").get<int>();
                    if (jc.at("group").contains("model"))
                        g.model = group_model_from_name(jc.at("group").at("model").get<std::string>());
                    c.group = g;
                }
                if (jc.contains("graph")) {
                    for (const Json& row : jc.at("graph")) {
                        std::vector<int> nbrs;
                        for (const Json& v : row) nbrs.push_back(v.get<int>() - 1);
                        c.graph.push_back(std::move(nbrs));
                    }
                } else if (jc.contains("graph_file")) {
                    c.graph = read_graph_file(
                        detail::join_path(base_dir, jc.at("graph_file").get<std::string>()));
                }
                if (jc.contains("allow_disconnected"))
                    c.allow_disconnected = jc.at("allow_disconnected").get<bool>();
                if (jc.contains("rw2_extra_constraint"))
                    c.rw2_extra_constraint = jc.at("rw2_extra_constraint").get<bool>();
            }
            c.index_column = jc.at("index").get<std::string>();
            if (jc.contains("weight")) c.weight_column = jc.at("weight").get<std::string>();
            if (jc.contains("replicate")) c.replicate_column = jc.at("replicate").get<std::string>();
            if (jc.contains("group_column")) c.group_column = jc.at("group_column").get<std::string>();
            if (jc.contains("hyper")) c.hyper = detail::hyper_from_json(jc.at("hyper"));
            spec.components.push_back(std::move(c));
        }
    if (j.contains("fixed_effects"))
        for (const Json& jf : j.at("fixed_effects")) {
            FixedEffect fe;
            fe.name = jf.at("name").get<std::string>();
            if (jf.contains("intercept")) fe.intercept = jf.at("intercept").get<bool>();
            if (!fe.intercept) fe.column = jf.at("column").get<std::string>();
            fe.prior_prec = fe.intercept ? 0.0 : 0.001;
            if (jf.contains("prior_mean")) fe.prior_mean = jf.at("prior_mean").get<double>();
            if (jf.contains("prior_prec")) fe.prior_prec = jf.at("prior_prec").get<double>();
            spec.fixed_effects.push_back(std::move(fe));
        }
    if (j.contains("A")) {
        const Json& ja = j.at("A");
        if (ja.is_string()) {
            spec.A = read_A_matrix_file(detail::join_path(base_dir, ja.get<std::string>()));
        } else {
            int rows = ja.at("rows").get<int>();
            int cols = ja.at("cols").get<int>();
            std::vector<Triplet> ts;
            for (const Json& t : ja.at("triplets"))
                ts.emplace_back(t[0].get<int>() - 1, t[1].get<int>() - 1, t[2].get<double>());
            SpMat A(rows, cols);
            A.setFromTriplets(ts.begin(), ts.end());
            spec.A = A;
        }
    }
    if (j.contains("lincombs"))
        for (const Json& jl : j.at("lincombs")) {
            Lincomb lc;
            lc.name = jl.at("name").get<std::string>();
            for (const Json& jt : jl.at("terms")) {
                LincombTerm t;
                if (jt.contains("fixed_effect")) {
                    t.component = jt.at("fixed_effect").get<std::string>();
                    t.is_fixed_effect = true;
                } else {
                    t.component = jt.at("component").get<std::string>();
                    t.index = jt.at("index").get<int>();
                }
                t.weight = jt.at("weight").get<double>();
                lc.terms.push_back(std::move(t));
            }
            spec.lincombs.push_back(std::move(lc));
        }
    if (j.contains("config")) {
        const Json& jc = j.at("config");
        if (jc.contains("kappa_eta_exponent"))
            spec.config.kappa_eta_exponent = jc.at("kappa_eta_exponent").get<double>();
        if (jc.contains("kappa_A_exponent"))
            spec.config.kappa_A_exponent = jc.at("kappa_A_exponent").get<double>();
        if (jc.contains("fixed_prec_floor"))
            spec.config.fixed_prec_floor = jc.at("fixed_prec_floor").get<double>();
    }
    return spec;
}

/// Serializes a model back into the schema; graphs and A matrices are
/// embedded inline so parse(serialize(spec)) round-trips without file
/// dependencies.
inline Json serialize_model(const ModelSpec& spec) {
    Json j;
    j["likelihoods"] = Json::array();
    for (const auto& lk : spec.likelihoods) {
        Json jl;
        jl["family"] = family_name(lk.family);
        if (!lk.ntrials_column.empty()) jl["ntrials"] = lk.ntrials_column;
        if (!lk.hyper.empty()) jl["hyper"] = detail::hyper_to_json(lk.hyper);
        j["likelihoods"].push_back(std::move(jl));
    }
    j["components"] = Json::array();
    for (const auto& c : spec.components) {
        Json jc;
        jc["name"] = c.name;
        if (!c.copy_of.empty()) {
            jc["copy_of"] = c.copy_of;
            if (c.copy_scale_unknown) jc["copy_scale_unknown"] = true;
            if (c.tau_copy_exponent != 15.0) jc["tau_copy_exponent"] = c.tau_copy_exponent;
        } else {
            jc["model"] = latent_kind_name(c.kind);
            jc["size"] = c.size;
            if (c.replicate_count != 1) jc["replicate_count"] = c.replicate_count;
            if (c.group) {
                jc["group"] = {{"count", c.group->count}, {"model", group_model_name(c.group->model)}};
            }
            if (!c.graph.empty()) {
                Json rows = Json::array();
                for (const auto& nbrs : c.graph) {
                    Json row = Json::array();
                    for (int nb : nbrs) row.push_back(nb + 1);
                    rows.push_back(std::move(row));
                }
                jc["graph"] = std::move(rows);
            }
            if (c.allow_disconnected) jc["allow_disconnected"] = true;
            if (c.rw2_extra_constraint) jc["rw2_extra_constraint"] = true;
        }
        jc["index"] = c.index_column;
        if (!c.weight_column.empty()) jc["weight"] = c.weight_column;
        if (!c.replicate_column.empty()) jc["replicate"] = c.replicate_column;
        if (!c.group_column.empty()) jc["group_column"] = c.group_column;
        if (!c.hyper.empty()) jc["hyper"] = detail::hyper_to_json(c.hyper);
        j["components"].push_back(std::move(jc));
    }
    if (!spec.fixed_effects.empty()) {
        j["fixed_effects"] = Json::array();
        for (const auto& fe : spec.fixed_effects) {
            Json jf;
            jf["name"] = fe.name;
            if (fe.intercept)
                jf["intercept"] = true;
            else
                jf["column"] = fe.column;
            jf["prior_mean"] = fe.prior_mean;
            jf["prior_prec"] = fe.prior_prec;
            j["fixed_effects"].push_back(std::move(jf));
        }
    }
    if (spec.A) {
        Json ja;
        ja["rows"] = static_cast<int>(spec.A->rows());
        ja["cols"] = static_cast<int>(spec.A->cols());
        Json ts = Json::array();
        for (int k = 0; k < spec.A->outerSize(); ++k)
            for (SpMat::InnerIterator it(*spec.A, k); it; ++it)
                ts.push_back({static_cast<int>(it.row()) + 1, static_cast<int>(it.col()) + 1, it.value()});
        ja["triplets"] = std::move(ts);
        j["A"] = std::move(ja);
    }
    if (!spec.lincombs.empty()) {
        j["lincombs"] = Json::array();
        for (const auto& lc : spec.lincombs) {
            Json jl;
            jl["name"] = lc.name;
            jl["terms"] = Json::array();
            for (const auto& t : lc.terms) {
                Json jt;
                if (t.is_fixed_effect) {
                    jt["fixed_effect"] = t.component;
                } else {
                    jt["component"] = t.component;
                    jt["index"] = t.index;
                }
                jt["weight"] = t.weight;
                jl["terms"].push_back(std::move(jt));
            }
            j["lincombs"].push_back(std::move(jl));
        }
    }
    j["config"] = {{"kappa_eta_exponent", spec.config.kappa_eta_exponent},
                   {"kappa_A_exponent", spec.config.kappa_A_exponent},
                   {"fixed_prec_floor", spec.config.fixed_prec_floor}};
    return j;
}

/// Loads a model file and its data table; JSON syntax errors surface with
/// the byte position reported by the parser.
inline ModelSpec load_model_file(const std::string& model_path, const std::string& data_path) {
    std::ifstream in(model_path);
    if (!in) throw SpecError("cannot open model file '" + model_path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SpecError("model file '" + model_path + "': " + e.what());
    }
    std::string base_dir;
    auto slash = model_path.find_last_of('/');
    if (slash != std::string::npos) base_dir = model_path.substr(0, slash);
    ModelSpec spec = parse_model(j, base_dir);
    spec.data = read_data_csv_file(data_path, static_cast<int>(spec.likelihoods.size()));
    return spec;
}

}  // namespace nla
