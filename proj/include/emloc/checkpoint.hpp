#pragma once

#include <string>

#include "emloc/model.hpp"

namespace emloc {

/// Binary network checkpoint: magic "EMLCKPT1", version, layer count and
/// per-layer descriptors (kind, dims, rank, bias flag, activation id, LoRA
/// flag and rank), then all floats little-endian in declared order, then a
/// CRC32 of the payload. save/load round-trips are bit-identical; the CRC is
/// verified on load.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace emloc
