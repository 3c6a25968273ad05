#pragma once

// Hyperparameter bookkeeping: bijective transforms between the internal
// (unconstrained) scale used by the optimizer and the natural scale of the
// model, plus prior densities evaluated on the internal scale.

#include <cmath>
#include <string>
#include <vector>

#include "nla/errors.hpp"
#include "nla/sparse.hpp"

namespace nla {

struct HyperTransform {
    enum Kind {
        Identity,       // natural = internal
        Log,            // precision: natural = exp(internal)
        CorrFisher,     // correlation in (-1,1): natural = tanh(internal/2)
        IntervalLogit,  // natural in (lo, hi) via logistic map
    };

    Kind kind = Identity;
    double lo = -1.0;
    double hi = 1.0;

    double natural(double v) const {
        switch (kind) {
            case Identity: return v;
            case Log: return std::exp(v);
            case CorrFisher: return std::tanh(0.5 * v);
            case IntervalLogit: return lo + (hi - lo) / (1.0 + std::exp(-v));
        }
        return v;
    }

    double internal(double x) const {
        switch (kind) {
            case Identity: return x;
            case Log: return std::log(x);
            case CorrFisher: return std::log((1.0 + x) / (1.0 - x));
            case IntervalLogit: {
                double t = (x - lo) / (hi - lo);
                return std::log(t / (1.0 - t));
            }
        }
        return x;
    }

    /// d(natural)/d(internal), needed for Jacobians when reporting on the
    /// natural scale.
    double dnat(double v) const {
        switch (kind) {
            case Identity: return 1.0;
            case Log: return std::exp(v);
            case CorrFisher: {
                double t = std::tanh(0.5 * v);
                return 0.5 * (1.0 - t * t);
            }
            case IntervalLogit: {
                double s = 1.0 / (1.0 + std::exp(-v));
                return (hi - lo) * s * (1.0 - s);
            }
        }
        return 1.0;
    }
};

struct PriorSpec {
    enum Kind {
        LogGamma,  // on the natural (precision) scale, param = (a, b)
        Gaussian,  // on the internal scale, param = (mean, precision)
        None,      // improper flat, contributes 0
    };

    Kind kind = None;
    double p1 = 0.0;
    double p2 = 0.0;

    /// Log prior density of the internal value, Jacobian included.
    double logdens(double v) const {
        switch (kind) {
            case LogGamma:
                return p1 * std::log(p2) - std::lgamma(p1) + p1 * v - p2 * std::exp(v);
            case Gaussian:
                if (p2 == 0.0) return 0.0;
                return 0.5 * std::log(p2 / (2.0 * M_PI)) - 0.5 * p2 * (v - p1) * (v - p1);
            case None:
                return 0.0;
        }
        return 0.0;
    }
};

inline PriorSpec default_precision_prior() { return {PriorSpec::LogGamma, 1.0, 5e-5}; }
inline PriorSpec default_correlation_prior() { return {PriorSpec::Gaussian, 0.0, 0.15}; }

struct HyperInfo {
    std::string name;
    HyperTransform transform;
    PriorSpec prior;
    bool fixed = false;
    double fixed_internal = 0.0;
    double init_internal = 0.0;
};

/// Registry of all hyperparameters of a model, in declaration order:
/// likelihood blocks first, then latent components.
class HyperRegistry {
public:
    void add(HyperInfo info) { infos_.push_back(std::move(info)); }

    int total() const { return static_cast<int>(infos_.size()); }

    int free_count() const {
        int c = 0;
        for (const auto& h : infos_)
            if (!h.fixed) ++c;
        return c;
    }

    const HyperInfo& info(int i) const { return infos_[static_cast<std::size_t>(i)]; }

    /// Expands a vector over the free hyperparameters into the full
    /// internal-scale vector, filling in fixed values.
    Vector expand(const Vector& free) const {
        if (free.size() != free_count())
            throw DimensionMismatch("HyperRegistry::expand: length mismatch");
        Vector full(total());
        int k = 0;
        for (int i = 0; i < total(); ++i)
            full(i) = infos_[static_cast<std::size_t>(i)].fixed ? infos_[static_cast<std::size_t>(i)].fixed_internal
                                                                : free(k++);
        return full;
    }

    Vector initial_free() const {
        Vector v(free_count());
        int k = 0;
        for (const auto& h : infos_)
            if (!h.fixed) v(k++) = h.init_internal;
        return v;
    }

    std::vector<std::string> free_names() const {
        std::vector<std::string> out;
        for (const auto& h : infos_)
            if (!h.fixed) out.push_back(h.name);
        return out;
    }

    std::vector<int> free_indices() const {
        std::vector<int> out;
        for (int i = 0; i < total(); ++i)
            if (!infos_[static_cast<std::size_t>(i)].fixed) out.push_back(i);
        return out;
    }

    /// Sum of log prior densities over the free hyperparameters.
    double log_prior(const Vector& full_internal) const {
        if (full_internal.size() != total())
            throw DimensionMismatch("HyperRegistry::log_prior: length mismatch");
        double s = 0.0;
        for (int i = 0; i < total(); ++i) {
            const auto& h = infos_[static_cast<std::size_t>(i)];
            if (!h.fixed) s += h.prior.logdens(full_internal(i));
        }
        return s;
    }

private:
    std::vector<HyperInfo> infos_;
};

}  // namespace nla
