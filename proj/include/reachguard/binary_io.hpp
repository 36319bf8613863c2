#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "reachguard/common.hpp"

namespace reachguard {

// Little-endian primitive encoding independent of host byte order.
class ByteWriter {
public:
    explicit ByteWriter(std::ostream& out) : out_(out) {}

    void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }
    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }

private:
    template <typename U>
    void le(U v) {
        std::array<char, sizeof(U)> buf{};
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
        }
        out_.write(buf.data(), sizeof(U));
    }

    std::ostream& out_;
};

class ByteReader {
public:
    ByteReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

    void expect_magic(std::string_view m) {
        std::string got(m.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(m.size()));
        if (!in_ || got != m) {
            throw FormatError(context_ + ": bad magic, expected " + std::string(m));
        }
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(le<std::uint8_t>()); }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    template <typename U>
    U le() {
        std::array<unsigned char, sizeof(U)> buf{};
        in_.read(reinterpret_cast<char*>(buf.data()), sizeof(U));
        if (!in_) {
            throw FormatError(context_ + ": truncated file");
        }
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v = static_cast<U>(v | (static_cast<U>(buf[i]) << (8 * i)));
        }
        return v;
    }

    std::istream& in_;
    std::string context_;
};

}  // namespace reachguard
