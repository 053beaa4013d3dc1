#include "splitllm/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace splitllm {

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    u32(static_cast<std::uint32_t>(bits));
    u32(static_cast<std::uint32_t>(bits >> 32));
}

void ByteWriter::tag(std::string_view four_cc) {
    for (char c : four_cc) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteReader::need(std::size_t n) const {
    require(remaining() >= n, ErrorKind::Parse,
            "truncated buffer: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                std::to_string(remaining()));
}

std::uint8_t ByteReader::u8() {
    need(1);
    return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return std::bit_cast<double>(lo | (hi << 32));
}

void ByteReader::expect_tag(std::string_view four_cc) {
    need(four_cc.size());
    require(std::memcmp(bytes_.data() + pos_, four_cc.data(), four_cc.size()) == 0, ErrorKind::Parse,
            "bad magic at offset " + std::to_string(pos_) + ", expected '" + std::string(four_cc) + "'");
    pos_ += four_cc.size();
}

template <typename T>
void write_matrix(ByteWriter& out, const BasicMatrix<T>& m) {
    out.tag("SLMX");
    out.u32(static_cast<std::uint32_t>(m.rows()));
    out.u32(static_cast<std::uint32_t>(m.cols()));
    out.u32(static_cast<std::uint32_t>(dtype_of<T>()));
    for (T v : m.values()) {
        if constexpr (std::is_same_v<T, float>)
            out.f32(v);
        else
            out.f64(v);
    }
}

template <typename T>
BasicMatrix<T> read_matrix(ByteReader& in) {
    in.expect_tag("SLMX");
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    const std::uint32_t dtype = in.u32();
    require(dtype == static_cast<std::uint32_t>(dtype_of<T>()), ErrorKind::Parse,
            "matrix dtype tag " + std::to_string(dtype) + " does not match the requested precision");
    BasicMatrix<T> m(rows, cols);
    for (T& v : m.values()) {
        if constexpr (std::is_same_v<T, float>)
            v = in.f32();
        else
            v = in.f64();
    }
    return m;
}

template void write_matrix(ByteWriter&, const BasicMatrix<float>&);
template void write_matrix(ByteWriter&, const BasicMatrix<double>&);
template BasicMatrix<float> read_matrix<float>(ByteReader&);
template BasicMatrix<double> read_matrix<double>(ByteReader&);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path.string() + "' failed");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace splitllm
