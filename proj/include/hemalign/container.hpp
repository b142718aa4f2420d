// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary framing shared by dataset and checkpoint files:
// 8-byte magic, u32 version, body, trailing CRC32 of everything after the magic.

#ifndef HEMALIGN_CONTAINER_HPP
#define HEMALIGN_CONTAINER_HPP

#include <boost/crc.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "hemalign/error.hpp"
#include "hemalign/tensor.hpp"

namespace hemalign {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    boost::crc_32_type crc;
    crc.process_bytes(data, n);
    return crc.checksum();
}

class ByteWriter {
public:
    explicit ByteWriter(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    void shape(const Shape& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        for (auto e : s) u32(static_cast<std::uint32_t>(e));
    }

    /// Appends the CRC32 of all bytes after the magic and writes the file.
    void finish(const std::string& path, std::size_t magic_len = 8) {
        u32(crc32(bytes_.data() + magic_len, bytes_.size() - magic_len));
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw IoError("short write to '" + path + "'");
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    /// Loads the file, checks the magic and the trailing CRC32.
    ByteReader(const std::string& path, std::string_view magic) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        init(magic);
    }

    ByteReader(std::vector<std::uint8_t> bytes, std::string_view magic) : bytes_(std::move(bytes)) { init(magic); }

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    Shape shape() {
        const std::size_t at = pos_;
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), at);
        Shape s(rank);
        std::uint64_t total = 1;
        for (auto& e : s) {
            const std::size_t eat = pos_;
            e = u32();
            if (e == 0) throw FormatError("zero tensor extent", eat);
            total *= e;
            if (total > (end_ - pos_)) throw FormatError("tensor payload exceeds file size", at);
        }
        return s;
    }

    std::size_t offset() const noexcept { return pos_; }

    /// Fails unless every byte before the CRC has been consumed.
    void expect_end() const {
        if (pos_ != end_) throw FormatError("trailing bytes before checksum", pos_);
    }

private:
    void init(std::string_view magic) {
        if (bytes_.size() < magic.size() || std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0)
            throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", 0);
        if (bytes_.size() < magic.size() + 4) throw FormatError("file truncated before checksum", bytes_.size());
        end_ = bytes_.size() - 4;
        std::uint32_t stored = 0;
        for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes_[end_ + i]) << (8 * i);
        if (crc32(bytes_.data() + magic.size(), end_ - magic.size()) != stored)
            throw FormatError("checksum mismatch (file corrupted or truncated)", end_);
        pos_ = magic.size();
    }

    void need(std::size_t n) const {
        if (n > end_ - pos_) throw FormatError("unexpected end of data", pos_);
    }

    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::size_t end_ = 0;
};

} // namespace hemalign

#endif // HEMALIGN_CONTAINER_HPP
