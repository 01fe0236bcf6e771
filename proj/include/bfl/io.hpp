#pragma once

// Little-endian binary helpers and content hashing shared by the file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "bfl/error.hpp"

namespace bfl::io {

namespace detail {

template <class T>
T to_little(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::little) {
        return value;
    } else {
        std::array<unsigned char, sizeof(T)> bytes;
        std::memcpy(bytes.data(), &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&value, bytes.data(), sizeof(T));
        return value;
    }
}

} // namespace detail

class binary_writer {
public:
    explicit binary_writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw format_error("cannot open for writing", path.string());
    }

    void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

    template <class T>
    void put(T value) {
        value = detail::to_little(value);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_doubles(std::span<const double> values) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(values.data()),
                       static_cast<std::streamsize>(values.size_bytes()));
        } else {
            for (double v : values) put(v);
        }
    }

    void close() {
        out_.close();
        if (!out_) throw format_error("write failed", path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class binary_reader {
public:
    explicit binary_reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw format_error("cannot open for reading", path.string());
    }

    void expect_magic(std::string_view tag) {
        std::string got(tag.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (!in_ || got != tag) throw format_error("bad magic, expected " + std::string(tag), path_.string());
    }

    template <class T>
    T get() {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (!in_) throw format_error("truncated file", path_.string());
        return detail::to_little(value);
    }

    void get_doubles(std::span<double> values) {
        in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
        if (!in_) throw format_error("truncated file", path_.string());
        if constexpr (std::endian::native != std::endian::little) {
            for (double& v : values) v = detail::to_little(v);
        }
    }

    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) throw format_error("trailing bytes", path_.string());
    }

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

// FNV-1a, 64 bit. Stable across runs and platforms for identical byte input.
class hasher {
public:
    hasher& bytes(const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ull;
        }
        return *this;
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    hasher& add(T value) {
        value = detail::to_little(value);
        return bytes(&value, sizeof(T));
    }

    hasher& add(std::span<const double> values) {
        for (double v : values) add(v);
        return *this;
    }

    hasher& add(std::string_view s) { return bytes(s.data(), s.size()); }

    std::uint64_t value() const { return state_; }

    std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << state_;
        return os.str();
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open for reading", path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot open for writing", path.string());
    out << text;
    if (!out) throw format_error("write failed", path.string());
}

} // namespace bfl::io
