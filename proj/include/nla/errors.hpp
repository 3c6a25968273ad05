#pragma once

#include <stdexcept>
#include <string>

namespace nla {

struct NotPositiveDefinite : std::runtime_error {
    explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidHyper : std::runtime_error {
    explicit InvalidHyper(const std::string& what) : std::runtime_error(what) {}
};

struct DisconnectedGraph : std::runtime_error {
    explicit DisconnectedGraph(const std::string& what) : std::runtime_error(what) {}
};

struct NonConvergence : std::runtime_error {
    explicit NonConvergence(const std::string& what) : std::runtime_error(what) {}
};

struct RankDeficientConstraint : std::runtime_error {
    explicit RankDeficientConstraint(const std::string& what) : std::runtime_error(what) {}
};

struct PointBudgetExceeded : std::runtime_error {
    explicit PointBudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteEvaluation : std::runtime_error {
    explicit NonFiniteEvaluation(const std::string& what) : std::runtime_error(what) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyGrid : std::runtime_error {
    explicit EmptyGrid(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateAxis : std::runtime_error {
    explicit DegenerateAxis(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionCapExceeded : std::runtime_error {
    explicit DimensionCapExceeded(const std::string& what) : std::runtime_error(what) {}
};

struct SpecError : std::runtime_error {
    explicit SpecError(const std::string& what) : std::runtime_error(what) {}
};

struct MissingBundle : std::runtime_error {
    explicit MissingBundle(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nla
