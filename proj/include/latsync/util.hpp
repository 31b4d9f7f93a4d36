#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latsync/error.hpp"

namespace latsync {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from the LATSYNC_LOG environment variable (error|info|debug).
inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("LATSYNC_LOG");
        if (!e) return LogLevel::Info;
        std::string s(e);
        if (s == "error") return LogLevel::Error;
        if (s == "debug") return LogLevel::Debug;
        if (s == "info") return LogLevel::Info;
        std::fprintf(stderr, "[latsync] unknown LATSYNC_LOG value '%s', using info\n", e);
        return LogLevel::Info;
    }();
    return lvl;
}

template <class... Args>
void log_at(LogLevel lvl, const char* tag, Args&&... args) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    std::ostringstream os;
    (os << ... << args);
    std::fprintf(stderr, "[latsync %s] %s\n", tag, os.str().c_str());
}

template <class... Args>
void log_error(Args&&... args) { log_at(LogLevel::Error, "error", std::forward<Args>(args)...); }
template <class... Args>
void log_info(Args&&... args) { log_at(LogLevel::Info, "info", std::forward<Args>(args)...); }
template <class... Args>
void log_debug(Args&&... args) { log_at(LogLevel::Debug, "debug", std::forward<Args>(args)...); }

// Fixed-format float for CSV cells: stable byte-for-byte across runs.
inline std::string csv_num(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));
    f << content;
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(msg("cannot open '", path, "' for reading"));
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace latsync
