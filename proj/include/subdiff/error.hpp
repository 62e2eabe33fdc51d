#pragma once

#include <stdexcept>
#include <string>

namespace subdiff {

/// Coarse failure category. The CLI maps it onto process exit codes.
enum class ErrorKind {
    parameter,           ///< invalid model or Lévy parameters
    domain,              ///< argument outside an operation's domain
    simulation_budget,   ///< path generation exceeded its budget
    consistency,         ///< internal invariant broken beyond rounding
    coefficient,         ///< non-finite or missing coefficient evaluation
    divergence,          ///< Picard iteration stopped contracting
    basis_degeneracy,    ///< regression design cannot be solved
    ill_posed,           ///< degenerate shooting map
    dependency,          ///< required upstream result is missing
    degenerate_penalty,  ///< multiplier denominators vanish
    config,              ///< configuration schema violation
};

inline const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::domain: return "domain";
        case ErrorKind::simulation_budget: return "simulation-budget";
        case ErrorKind::consistency: return "consistency";
        case ErrorKind::coefficient: return "coefficient";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::basis_degeneracy: return "basis-degeneracy";
        case ErrorKind::ill_posed: return "ill-posed";
        case ErrorKind::dependency: return "dependency";
        case ErrorKind::degenerate_penalty: return "degenerate-penalization";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace subdiff
