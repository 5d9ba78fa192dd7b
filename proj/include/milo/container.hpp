#pragma once

// On-disk container shared by coefficients, instance sets and weights.
//
//   "MILO" | u32 version | u32 metadata length | metadata (compact JSON)
//   then, until end of file, named arrays:
//   u16 name length | name | u8 rank | u32 extents[rank] | f64 payload (row-major)
//
// All integers and floats are little-endian.

#include "milo/tensor.hpp"
#include "milo/problems.hpp"
#include "milo/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace milo {

inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> extents;
    std::vector<double> data;

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Container {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    void add(std::string name, const Matrix& m);
    void add_vector(std::string name, const Vector& v);
    const NamedArray& at(std::string_view name) const;
    bool contains(std::string_view name) const;
    /// Rank-1 arrays read as a column; rank-2 as stored.
    Matrix matrix(std::string_view name) const;
    Vector vector(std::string_view name) const;

    friend bool operator==(const Container& a, const Container& b)
    {
        return a.metadata == b.metadata && a.arrays == b.arrays;
    }
};

std::string encode(const Container& c);
Container decode(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// Writes text atomically enough for CLI use; throws on failure.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

Container to_container(const CoefficientSet& c);
CoefficientSet coefficients_from(const Container& c);

Container instances_container(const CoefficientSet& coeffs, const Matrix& params, std::string_view split);
Matrix instances_from(const Container& c, const CoefficientSet& coeffs);

Container to_container(const ModelWeights& w);
ModelWeights weights_from(const Container& c);

} // namespace milo
