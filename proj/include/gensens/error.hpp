#pragma once

#include <stdexcept>
#include <string>

namespace gensens {

enum class ErrorCode {
    Schema,           // missing/unknown column or malformed config
    Validation,       // bad cell, role mismatch, structural invariant broken
    Positivity,       // empty arm within a study, zero conditional mass
    Separation,       // logistic fit diverging
    Convergence,      // solver hit its iteration cap
    Alignment,        // weight vector does not match the dataset
    Domain,           // argument outside the function's domain
    DegenerateArm,    // arm with no inverse-propensity mass
    InsufficientData, // too few units for the requested statistic
    Branch,           // R^2 == 1 reached through the R^2 < 1 branch
    Inconsistency,    // estimated covariance exceeds its Cauchy-Schwarz bound
    Singular,         // contrast covariance not invertible
    Reliability,      // too many bootstrap replicates failed
    Overlap,          // single-study weights could not balance the target
    Name,             // unknown modifier name
    Io,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::Schema: return "schema";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Positivity: return "positivity";
    case ErrorCode::Separation: return "separation";
    case ErrorCode::Convergence: return "convergence";
    case ErrorCode::Alignment: return "alignment";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::DegenerateArm: return "degenerate-arm";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::Branch: return "branch";
    case ErrorCode::Inconsistency: return "inconsistency";
    case ErrorCode::Singular: return "singular";
    case ErrorCode::Reliability: return "reliability";
    case ErrorCode::Overlap: return "overlap";
    case ErrorCode::Name: return "name";
    case ErrorCode::Io: return "io";
    }
    return "unknown";
}

/// Every failure raised by the library. `module()` names the component that
/// raised it so the CLI can report provenance.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string module, const std::string& what)
        : std::runtime_error(module + " " + to_string(code) + " error: " + what),
          code_(code), module_(std::move(module)), detail_(what) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& module() const noexcept { return module_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string module_;
    std::string detail_;
};

} // namespace gensens
