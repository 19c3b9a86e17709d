#pragma once

// Little-endian binary encode/decode helpers shared by the checkpoint and
// dataset file formats.

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace emloc::binio {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& buf, double d) {
    put_u64(buf, std::bit_cast<std::uint64_t>(d));
}

/// Sequential reader with bounds checking; every decode error carries the
/// file's role so CLI messages stay one-line and specific.
class Reader {
public:
    Reader(const std::vector<std::uint8_t>& buf, std::string what)
        : buf_(buf), what_(std::move(what)) {}

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    void magic(const char* expect) {
        need(8);
        for (int i = 0; i < 8; ++i) {
            if (buf_[pos_ + i] != static_cast<std::uint8_t>(expect[i])) {
                throw std::runtime_error(what_ + ": bad magic (not a " + what_ + " file)");
            }
        }
        pos_ += 8;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void expect_end() {
        if (pos_ != buf_.size()) {
            throw std::runtime_error(what_ + ": trailing bytes after payload");
        }
    }

private:
    void need(std::size_t n) {
        if (buf_.size() - pos_ < n) {
            throw std::runtime_error(what_ + ": truncated file");
        }
    }

    const std::vector<std::uint8_t>& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open: " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) {
        in.read(reinterpret_cast<char*>(bytes.data()), size);
        if (!in) throw std::runtime_error("read failed: " + path);
    }
    return bytes;
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len);

}  // namespace emloc::binio
