#include "emloc/dataset.hpp"

#include <stdexcept>

#include "binio.hpp"

namespace emloc {

namespace {
constexpr char kMagic[9] = "EMLDATA1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
    if (data.inputs.rows() != data.targets.rows()) {
        throw std::invalid_argument("save_dataset: input/target row mismatch");
    }

    std::vector<std::uint8_t> file;
    for (int i = 0; i < 8; ++i) file.push_back(static_cast<std::uint8_t>(kMagic[i]));
    binio::put_u32(file, kVersion);
    binio::put_u64(file, data.inputs.rows());
    binio::put_u32(file, static_cast<std::uint32_t>(data.inputs.cols()));
    binio::put_u32(file, static_cast<std::uint32_t>(data.targets.cols()));

    std::vector<std::uint8_t> payload;
    for (double v : data.inputs.data()) binio::put_f64(payload, v);
    for (double v : data.targets.data()) binio::put_f64(payload, v);

    file.insert(file.end(), payload.begin(), payload.end());
    binio::put_u32(file, binio::crc32_of(payload.data(), payload.size()));
    binio::write_file(path, file);
}

Dataset load_dataset(const std::string& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::Reader r(bytes, "dataset");
    r.magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
    }
    const std::uint64_t rows = r.u64();
    const std::uint32_t in_dim = r.u32();
    const std::uint32_t target_dim = r.u32();
    if (rows == 0 || in_dim == 0 || target_dim == 0) {
        throw std::runtime_error("dataset: empty dimensions");
    }

    const std::size_t payload_start = r.pos();
    if (r.remaining() < 4) throw std::runtime_error("dataset: truncated file");
    const std::size_t payload_len = r.remaining() - 4;

    Dataset data;
    data.inputs = Matrix(rows, in_dim);
    data.targets = Matrix(rows, target_dim);
    for (double& v : data.inputs.data()) v = r.f64();
    for (double& v : data.targets.data()) v = r.f64();

    if (r.pos() != payload_start + payload_len) {
        throw std::runtime_error("dataset: payload size mismatch");
    }
    const std::uint32_t stored_crc = r.u32();
    r.expect_end();
    const std::uint32_t actual_crc =
        binio::crc32_of(bytes.data() + payload_start, payload_len);
    if (stored_crc != actual_crc) {
        throw std::runtime_error("dataset: CRC mismatch (corrupted payload)");
    }
    if (!data.inputs.all_finite() || !data.targets.all_finite()) {
        throw std::runtime_error("dataset: non-finite values in payload");
    }
    return data;
}

}  // namespace emloc
