#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aptlab/tensor.hpp"

namespace aptlab::io {

// Little-endian binary helpers for the checkpoint containers. Raw byte writes
// of doubles assume an LE host, which covers every platform this targets.

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
    char buf[4] = {};
    is.read(buf, 4);
    if (!is || std::string(buf, 4) != std::string(magic, 4))
        throw std::runtime_error(what + ": bad magic");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(what + ": truncated file");
    return v;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& is, std::size_t n, const std::string& what) {
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error(what + ": truncated file");
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

// FNV-1a over the raw bytes of one or more tensors; used for freeze checks.
inline std::uint64_t checksum(std::uint64_t h, const Tensor& t) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.v.data());
    for (std::size_t i = 0; i < t.v.size() * sizeof(double); ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t checksum(std::initializer_list<const Tensor*> ts) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const Tensor* t : ts) h = checksum(h, *t);
    return h;
}

}  // namespace aptlab::io
