// Shared error types and small helpers.
#pragma once

#include <stdexcept>
#include <string>

namespace idf {

// Contract violations: bad shapes, bad arguments, corrupt files.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / decoding failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double clamp01(double v) {
    if (v < 0.0) return 0.0;
    if (v > 1.0) return 1.0;
    return v;
}

}  // namespace idf
