#include "special/ptf.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <fmt/format.h>

namespace special::ptf {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> bytes = {
        static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
        static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes.data(), bytes.size());
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (in.gcount() != 4)
        throw Error(ErrorKind::Truncated, fmt::format("ptf: truncated header ({})", what));
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void check_sink(const std::ostream& out) {
    if (!out) throw Error(ErrorKind::Io, "ptf: write to sink failed");
}

}  // namespace

std::size_t Tensor::element_count() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
}

std::uint64_t Tensor::dims_product() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

const std::vector<float>& Tensor::f32() const {
    if (const auto* v = std::get_if<std::vector<float>>(&data)) return *v;
    throw Error(ErrorKind::Shape, "ptf: tensor is not f32");
}

const std::vector<std::uint16_t>& Tensor::u16() const {
    if (const auto* v = std::get_if<std::vector<std::uint16_t>>(&data)) return *v;
    throw Error(ErrorKind::Shape, "ptf: tensor is not u16");
}

void write(const Tensor& tensor, std::ostream& sink) {
    for (auto d : tensor.dims) {
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw Error(ErrorKind::ExtentOverflow, fmt::format("ptf: extent {} exceeds 32 bits", d));
    }
    if (tensor.dims_product() != tensor.element_count())
        throw Error(ErrorKind::Shape,
                    fmt::format("ptf: dims product {} != element count {}", tensor.dims_product(),
                                tensor.element_count()));

    sink.write(kMagic, 4);
    put_u32(sink, kVersion);
    put_u32(sink, static_cast<std::uint32_t>(tensor.dtype()));
    put_u32(sink, static_cast<std::uint32_t>(tensor.dims.size()));
    for (auto d : tensor.dims) put_u32(sink, static_cast<std::uint32_t>(d));

    std::visit(
        [&](const auto& values) {
            using T = typename std::decay_t<decltype(values)>::value_type;
            std::vector<char> payload(values.size() * sizeof(T));
            for (std::size_t i = 0; i < values.size(); ++i) {
                const auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                                   std::uint16_t>>(values[i]);
                for (std::size_t b = 0; b < sizeof(T); ++b)
                    payload[i * sizeof(T) + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
            }
            sink.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        },
        tensor.data);
    check_sink(sink);
}

Tensor read(std::istream& source) {
    char magic[4] = {};
    source.read(magic, 4);
    if (source.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw Error(ErrorKind::BadMagic, "ptf: bad magic");
    const auto version = get_u32(source, "version");
    if (version != kVersion)
        throw Error(ErrorKind::UnknownVersion, fmt::format("ptf: unknown version {}", version));
    const auto dtype = get_u32(source, "dtype");
    if (dtype != static_cast<std::uint32_t>(DType::F32) &&
        dtype != static_cast<std::uint32_t>(DType::U16))
        throw Error(ErrorKind::UnknownDtype, fmt::format("ptf: unknown dtype {}", dtype));
    const auto ndim = get_u32(source, "ndim");

    Tensor t;
    t.dims.reserve(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(source, "extent"));
    const auto count = t.dims_product();

    auto read_payload = [&](auto& values) {
        using T = typename std::decay_t<decltype(values)>::value_type;
        std::vector<unsigned char> raw(count * sizeof(T));
        source.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        const auto got = static_cast<std::uint64_t>(source.gcount());
        if (got != raw.size())
            throw Error(ErrorKind::Truncated,
                        fmt::format("ptf: payload truncated ({} of {} bytes)", got, raw.size()));
        values.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t> bits = 0;
            for (std::size_t b = 0; b < sizeof(T); ++b)
                bits |= static_cast<decltype(bits)>(raw[i * sizeof(T) + b]) << (8 * b);
            values[i] = std::bit_cast<T>(bits);
        }
    };

    if (dtype == static_cast<std::uint32_t>(DType::F32)) {
        std::vector<float> values;
        read_payload(values);
        t.data = std::move(values);
    } else {
        std::vector<std::uint16_t> values;
        read_payload(values);
        t.data = std::move(values);
    }
    return t;
}

void write_file(const Tensor& tensor, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, fmt::format("ptf: cannot open {} for writing", path.string()));
    write(tensor, out);
}

Tensor read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, fmt::format("ptf: cannot open {}", path.string()));
    return read(in);
}

namespace {

template <typename T>
Tensor grid_tensor(const Grid<T>& grid) {
    Tensor t;
    if (grid.channels() == 1)
        t.dims = {grid.height(), grid.width()};
    else
        t.dims = {grid.height(), grid.width(), grid.channels()};
    t.data = grid.data();
    return t;
}

template <typename T>
Grid<T> tensor_grid(const Tensor& t, const std::vector<T>& values) {
    if (t.dims.size() == 2) return Grid<T>(t.dims[0], t.dims[1], 1, values);
    if (t.dims.size() == 3) return Grid<T>(t.dims[0], t.dims[1], t.dims[2], values);
    throw Error(ErrorKind::Shape, fmt::format("ptf: expected a 2-D or 3-D tensor, got {}-D", t.dims.size()));
}

}  // namespace

Tensor from_grid(const Grid<float>& grid) { return grid_tensor(grid); }
Tensor from_grid(const Grid<std::uint16_t>& grid) { return grid_tensor(grid); }
Grid<float> to_float_grid(const Tensor& tensor) { return tensor_grid(tensor, tensor.f32()); }
Grid<std::uint16_t> to_u16_grid(const Tensor& tensor) { return tensor_grid(tensor, tensor.u16()); }

}  // namespace special::ptf
