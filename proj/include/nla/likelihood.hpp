#pragma once

// Likelihood families: log density and first three derivatives in the
// linear predictor, response-matrix binding and the observation map.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nla/errors.hpp"
#include "nla/sparse.hpp"

namespace nla {

enum class Family { Gaussian, Poisson, Binomial };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::Gaussian: return "gaussian";
        case Family::Poisson: return "poisson";
        case Family::Binomial: return "binomial";
    }
    return "?";
}

struct LogLikTerms {
    double ll = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
};

/// Log likelihood of one observation as a function of its linear predictor.
/// Links are fixed per family: identity (gaussian), log (poisson),
/// logit (binomial).
inline LogLikTerms loglik(Family family, double y, double eta, double tau_obs = 1.0,
                          double ntrials = 1.0) {
    LogLikTerms t;
    switch (family) {
        case Family::Gaussian: {
            if (!(tau_obs > 0.0)) throw DomainError("gaussian loglik: tau_obs must be positive");
            double r = y - eta;
            t.ll = 0.5 * std::log(tau_obs / (2.0 * M_PI)) - 0.5 * tau_obs * r * r;
            t.d1 = tau_obs * r;
            t.d2 = -tau_obs;
            t.d3 = 0.0;
            break;
        }
        case Family::Poisson: {
            if (y < 0.0) throw DomainError("poisson loglik: negative count");
            double mu = std::exp(eta);
            t.ll = y * eta - mu - std::lgamma(y + 1.0);
            t.d1 = y - mu;
            t.d2 = -mu;
            t.d3 = -mu;
            break;
        }
        case Family::Binomial: {
            if (y < 0.0 || y > ntrials) throw DomainError("binomial loglik: y outside [0, ntrials]");
            double p = 1.0 / (1.0 + std::exp(-eta));
            t.ll = std::lgamma(ntrials + 1.0) - std::lgamma(y + 1.0) - std::lgamma(ntrials - y + 1.0) +
                   y * eta - ntrials * std::log1p(std::exp(eta));
            t.d1 = y - ntrials * p;
            t.d2 = -ntrials * p * (1.0 - p);
            t.d3 = -ntrials * p * (1.0 - p) * (1.0 - 2.0 * p);
            break;
        }
    }
    return t;
}

/// One observed response row after binding: which likelihood block owns it
/// and the data it carries.
struct Observation {
    int row = 0;    // predictor row (position in eta, or eta* when A is present)
    int block = 0;  // likelihood block index
    double y = 0.0;
    double ntrials = 1.0;
};

/// Maps a response matrix (rows x K columns, NaN for missing) to per-row
/// observations. Rows with all entries missing are unobserved: they keep a
/// predictor row but contribute no likelihood term.
inline std::vector<Observation> bind_responses(const Matrix& response,
                                               const std::vector<Family>& families,
                                               const Matrix* ntrials = nullptr) {
    if (response.cols() != static_cast<Eigen::Index>(families.size()))
        throw DimensionMismatch("bind_responses: column count does not match likelihood blocks");
    std::vector<Observation> obs;
    for (Eigen::Index r = 0; r < response.rows(); ++r) {
        int owner = -1;
        for (Eigen::Index k = 0; k < response.cols(); ++k) {
            if (std::isnan(response(r, k))) continue;
            if (owner >= 0)
                throw SpecError("bind_responses: row " + std::to_string(r + 1) +
                                " has more than one non-missing response");
            owner = static_cast<int>(k);
        }
        if (owner < 0) continue;
        Observation o;
        o.row = static_cast<int>(r);
        o.block = owner;
        o.y = response(r, owner);
        o.ntrials = 1.0;
        if (families[static_cast<std::size_t>(owner)] == Family::Binomial && ntrials != nullptr) {
            double nt = (*ntrials)(r, owner);
            if (!std::isnan(nt)) o.ntrials = nt;
        }
        obs.push_back(o);
    }
    return obs;
}

/// eta* = A eta. Warns (via return flag) when A is denser than 20%.
inline Vector apply_A(const SpMat& A, const Vector& eta, bool* density_warning = nullptr) {
    if (A.cols() != eta.size()) throw DimensionMismatch("apply_A: column count mismatch");
    if (density_warning != nullptr) {
        double density = static_cast<double>(A.nonZeros()) /
                         (static_cast<double>(A.rows()) * static_cast<double>(A.cols()));
        *density_warning = density > 0.2;
    }
    return A * eta;
}

}  // namespace nla
