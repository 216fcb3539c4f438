#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace mimlite {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Thrown for malformed user input (configs, datasets, checkpoints).  The CLI
// maps this to exit code 2, all other exceptions to exit code 3.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- FNV-1a ---------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x00000100000001b3ull;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = kFnvOffset) {
    return fnv1a(s.data(), s.size(), h);
}

// Digest of a matrix's raw values (column-major storage order).
inline std::uint64_t mat_digest(const Mat& m, std::uint64_t h = kFnvOffset) {
    return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw InputError(msg);
}

}  // namespace mimlite
