#pragma once

#include <stdexcept>
#include <string>

namespace hrf {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int {
    ok = 0,
    verification_failure = 1,
    input_error = 2,
    divergence = 3,
    solver_failure = 4,
};

/// Base error type. Carries the exit code a CLI should report when the
/// error escapes a command.
class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Invalid arguments, mismatched grids, malformed files or configs.
class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ExitCode::input_error, what) {}
};

/// Non-finite loss or gradient during optimisation.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what) : Error(ExitCode::divergence, what) {}
};

/// Non-finite state during ODE integration, or eigensolver non-convergence.
class SolverError : public Error {
public:
    explicit SolverError(const std::string& what) : Error(ExitCode::solver_failure, what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InputError(msg);
}

}  // namespace detail
}  // namespace hrf
