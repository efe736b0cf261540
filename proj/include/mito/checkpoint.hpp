#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mito {

/// FNV-1a 64-bit, used for params/file integrity checks in manifests.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64_file(const std::string& path);

/// Checkpoints are directories: params.bin (raw little-endian float dump
/// with a short header) + manifest.json (kind, config, seed, checksum).
/// Loaders verify the checksum and the kind and refuse mismatches.
void write_params_bin(const std::string& path, const std::vector<float>& flat);
std::vector<float> read_params_bin(const std::string& path);

/// Manifest helpers live with the models (detector.cpp / classifier.cpp);
/// this header only fixes the shared binary format.
inline constexpr std::uint32_t kParamsMagic = 0x4f54494d;  // "MITO"
inline constexpr std::uint32_t kParamsVersion = 1;

}  // namespace mito
