#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dtvin/vinet.hpp"

namespace dtvin::vinet {

/// Model plus any auxiliary tensors (optimizer state, counters) stored alongside it.
struct Checkpoint {
    ModelParams model;
    std::map<std::string, NdArray> extra;
};

/// Little-endian: "DTVC", u32 version=1, u8 variant, u8 flags (bit0 apply_softmax),
/// u32 M, F, F', A, N, J; then until end of file: u16 name length, name, u8 rank,
/// u32 dims[rank], f64 data. Auxiliary tensors are written after the model under their own names.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dtvin::vinet
