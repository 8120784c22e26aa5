#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace madn {

// Precondition / contract violations (bad arguments, shape mismatches).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values detected during optimization.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
template <class... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
}  // namespace detail

#define MADN_CHECK(cond, ...)                                                    \
    do {                                                                         \
        if (!(cond))                                                             \
            throw ::madn::ValueError(::madn::detail::format_msg(__VA_ARGS__));   \
    } while (0)

#define MADN_CHECK_IO(cond, ...)                                                 \
    do {                                                                         \
        if (!(cond))                                                             \
            throw ::madn::IoError(::madn::detail::format_msg(__VA_ARGS__));      \
    } while (0)

template <class T>
bool all_finite(const T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace madn
