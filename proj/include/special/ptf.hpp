#pragma once

// PTF: a minimal little-endian tensor container.
//
//   "SPCL" | version u32 = 1 | dtype u32 | ndim u32 | ndim x u32 extents | payload
//
// Payload is row-major (last index fastest). dtype 0 = f32, 1 = u16.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "special/grid.hpp"

namespace special::ptf {

inline constexpr char kMagic[4] = {'S', 'P', 'C', 'L'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint32_t { F32 = 0, U16 = 1 };

enum class ErrorKind { BadMagic, UnknownVersion, UnknownDtype, Truncated, ExtentOverflow, Shape, Io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::variant<std::vector<float>, std::vector<std::uint16_t>> data;

    DType dtype() const { return data.index() == 0 ? DType::F32 : DType::U16; }
    std::size_t element_count() const;
    std::uint64_t dims_product() const;

    const std::vector<float>& f32() const;
    const std::vector<std::uint16_t>& u16() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

void write(const Tensor& tensor, std::ostream& sink);
Tensor read(std::istream& source);

void write_file(const Tensor& tensor, const std::filesystem::path& path);
Tensor read_file(const std::filesystem::path& path);

// Grid <-> tensor. Grids with one channel map to 2-D tensors, others to 3-D.
Tensor from_grid(const Grid<float>& grid);
Tensor from_grid(const Grid<std::uint16_t>& grid);
Grid<float> to_float_grid(const Tensor& tensor);
Grid<std::uint16_t> to_u16_grid(const Tensor& tensor);

}  // namespace special::ptf
