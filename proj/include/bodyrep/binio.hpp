#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bodyrep {

// All binary artifacts are little-endian with an 8-byte magic prefix.
// This code targets little-endian hosts only.

inline void write_magic(std::ofstream& out, const char magic[8]) { out.write(magic, 8); }

inline void expect_magic(std::ifstream& in, const char magic[8], const std::string& what) {
    char buf[8] = {};
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic, 8) != 0) {
        throw std::runtime_error(what + ": bad magic (wrong or corrupt file)");
    }
}

inline void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::ifstream& in, const std::string& what) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error(what + ": truncated file");
    return v;
}

inline void write_f32_block(std::ofstream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_f32_block(std::ifstream& in, size_t count, const std::string& what) {
    std::vector<float> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error(what + ": truncated file");
    return v;
}

}  // namespace bodyrep
