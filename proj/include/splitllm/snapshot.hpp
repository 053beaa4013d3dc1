#pragma once

#include "splitllm/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace splitllm {

/// Little-endian byte sink shared by the snapshot and wire formats.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v);
    void f32(float v);
    void f64(double v);
    void tag(std::string_view four_cc);

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) noexcept : bytes_(bytes) {}

    std::uint8_t u8();
    std::uint32_t u32();
    float f32();
    double f64();
    void expect_tag(std::string_view four_cc);

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

enum class DType : std::uint32_t { Real32 = 0, Real64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Real32; }
template <>
constexpr DType dtype_of<double>() { return DType::Real64; }

/// Matrix block: "SLMX", u32 rows, u32 cols, u32 dtype, row-major payload.
constexpr std::size_t kMatrixHeaderBytes = 16;

template <typename T>
std::size_t matrix_block_size(std::size_t rows, std::size_t cols) {
    return kMatrixHeaderBytes + rows * cols * sizeof(T);
}

template <typename T>
void write_matrix(ByteWriter& out, const BasicMatrix<T>& m);

template <typename T>
BasicMatrix<T> read_matrix(ByteReader& in);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

} // namespace splitllm
