#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mlc {

// Thrown when a kernel would divide by a non-positive variance or a probe
// produced a non-finite value.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an object is used in the wrong phase (e.g. fusing twice).
class invalid_state : public std::runtime_error {
public:
    explicit invalid_state(const std::string& msg) : std::runtime_error(msg) {}
};

// Train-mode batch norm over a single element per channel.
class degenerate_batch_error : public std::invalid_argument {
public:
    explicit degenerate_batch_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Global runtime toggles. finite_checks is enabled by verification paths and
// tests; it makes every kernel assert that its output contains no NaN/Inf.
struct runtime_checks {
    inline static bool finite_checks = false;
};

namespace detail {

template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << args);
    return oss.str();
}

} // namespace detail

} // namespace mlc

#if defined(_OPENMP)
#define MLC_PRAGMA(x) _Pragma(#x)
#define MLC_OMP_FOR(cond) MLC_PRAGMA(omp parallel for schedule(static) if (cond))
#else
#define MLC_OMP_FOR(cond)
#endif
