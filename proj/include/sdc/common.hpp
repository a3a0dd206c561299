#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace sdc {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotRegular : Error { using Error::Error; };
struct IllConditioned : Error { using Error::Error; };
struct ZeroPolynomial : Error { using Error::Error; };
struct SingularSylvester : Error { using Error::Error; };
struct NotCoprime : Error { using Error::Error; };
struct NotHurwitz : Error { using Error::Error; };
struct NotMonic : Error { using Error::Error; };
struct DegreeViolation : Error { using Error::Error; };
struct DegreeConstraintViolated : Error { using Error::Error; };
struct PoleEvaluation : Error { using Error::Error; };
struct SamplePointFailure : Error { using Error::Error; };
struct InsufficientSmoothness : Error { using Error::Error; };
struct StepTooLarge : Error { using Error::Error; };
struct NotMinimal : Error { using Error::Error; };
struct NotImpulseFree : Error { using Error::Error; };
struct NonProperCompensator : Error { using Error::Error; };
struct DeltaNotStable : Error { using Error::Error; };
struct ControllabilityLost : Error { using Error::Error; };
struct HistoryUnderflow : Error { using Error::Error; };
struct CovarianceDegenerate : Error { using Error::Error; };
struct NotStable : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };

struct StabilityMarginFailed : Error {
    double margin;
    explicit StabilityMarginFailed(double m)
        : Error("delay stability margin " + std::to_string(m) + " >= 1"), margin(m) {}
};

struct NumericalBlowup : Error {
    double t;
    explicit NumericalBlowup(double time)
        : Error("state norm exceeded 1e9 at t = " + std::to_string(time)), t(time) {}
};

// ---------------------------------------------------------------------------
// Shared tolerances
// ---------------------------------------------------------------------------

struct Tolerances {
    double tol_rank = 1e-10;    // relative singular-value cutoff for rank decisions
    double tol_decomp = 1e-8;   // decomposition residual acceptance, scaled by 1 + ||.||_F
    double cond_max = 1e8;      // condition-number ceiling for transformation matrices
    double trim_tol = 1e-12;    // relative cutoff for trailing polynomial coefficients
    double dioph_tol = 1e-9;    // residual acceptance for polynomial identity solves
    double drazin_tol = 1e-9;   // residual acceptance for the Drazin identities
};

inline const Tolerances& default_tols() {
    static const Tolerances t{};
    return t;
}

// ---------------------------------------------------------------------------
// Logging (stderr, gated by SDC_LOG_LEVEL = error|warn|info|debug)
// ---------------------------------------------------------------------------

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    static const LogLevel lvl = [] {
        const char* s = std::getenv("SDC_LOG_LEVEL");
        if (!s) return LogLevel::warn;
        std::string v(s);
        if (v == "error") return LogLevel::error;
        if (v == "info") return LogLevel::info;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

#define SDC_LOG_ERROR(...) ::sdc::log_at(::sdc::LogLevel::error, "error", __VA_ARGS__)
#define SDC_LOG_WARN(...) ::sdc::log_at(::sdc::LogLevel::warn, "warn", __VA_ARGS__)
#define SDC_LOG_INFO(...) ::sdc::log_at(::sdc::LogLevel::info, "info", __VA_ARGS__)
#define SDC_LOG_DEBUG(...) ::sdc::log_at(::sdc::LogLevel::debug, "debug", __VA_ARGS__)

}  // namespace sdc
