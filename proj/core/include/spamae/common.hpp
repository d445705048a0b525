#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spamae {

// Error taxonomy. The CLI maps these onto exit codes: config errors -> 2,
// everything else thrown at runtime -> 3.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<size_t>;
using cplx  = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi           = 3.14159265358979323846;

std::string shape_to_string(const Shape& s);
size_t shape_numel(const Shape& s);

// Dense complex matrix, row-major (rows = antennas, cols = subcarriers).
struct CMat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<cplx> data;

    CMat() = default;
    CMat(size_t r, size_t c) : rows(r), cols(c), data(r * c) {}

    cplx& at(size_t r, size_t c) { return data[r * cols + c]; }
    const cplx& at(size_t r, size_t c) const { return data[r * cols + c]; }
    size_t numel() const { return rows * cols; }
};

// FNV-1a over raw bytes; used for reproducibility hashes in manifests,
// reports, and the frozen-backbone checks.
uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a_str(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull);
std::string hash_hex(uint64_t h);

}  // namespace spamae
