#include "mito/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mito {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("fnv1a64_file: cannot open " + path);
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

void write_params_bin(const std::string& path, const std::vector<float>& flat) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_params_bin: cannot write " + path);
    }
    const std::uint32_t magic = kParamsMagic;
    const std::uint32_t version = kParamsVersion;
    const std::uint64_t count = flat.size();
    out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(float)));
    if (!out) {
        throw std::runtime_error("write_params_bin: short write to " + path);
    }
}

std::vector<float> read_params_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_params_bin: cannot open " + path);
    }
    std::uint32_t magic = 0, version = 0;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in || magic != kParamsMagic || version != kParamsVersion) {
        throw std::runtime_error("read_params_bin: bad header in " + path);
    }
    std::vector<float> flat(count);
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) {
        throw std::runtime_error("read_params_bin: truncated file " + path);
    }
    return flat;
}

}  // namespace mito
