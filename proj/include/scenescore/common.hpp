#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scenescore {

/// Malformed or inconsistent input data (exit code 2 at the CLI).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: non-finite loss, degenerate variance, divergence
/// (exit code 3 at the CLI).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad command-line usage or configuration (exit code 1 at the CLI).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// FNV-1a 64-bit hash; used for input manifests and split guards.
inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes);

/// Hash of a file's full contents, rendered as "fnv1a:<16 hex digits>".
std::string hash_file(const std::string& path);

/// Fixed 6-decimal formatting used by every CSV the pipeline writes.
std::string format_fixed6(double v);

}  // namespace scenescore
