#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace latsync {

// Base error for all invariant/contract violations in this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration (maps to CLI exit code 2).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or other numeric breakdowns (maps to CLI exit code 3).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <class T, class... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string msg(const Parts&... parts) {
    std::ostringstream os;
    detail::msg_append(os, parts...);
    return os.str();
}

}  // namespace latsync
