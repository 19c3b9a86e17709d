#pragma once

#include <string>

#include "emloc/matrix.hpp"

namespace emloc {

/// Row-aligned inputs and targets.
struct Dataset {
    Matrix inputs;   // rows x input_dim
    Matrix targets;  // rows x target_dim

    std::size_t rows() const { return inputs.rows(); }
};

/// Binary dataset file: magic "EMLDATA1", version, row count, input dim,
/// target dim, then the input block followed by the target block as
/// little-endian 64-bit floats, and a trailing CRC32 of that payload.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace emloc
