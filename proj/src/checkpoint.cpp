#include "emloc/checkpoint.hpp"

#include <zlib.h>

#include <stdexcept>

#include "binio.hpp"

namespace emloc {

namespace binio {
std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len) {
    return static_cast<std::uint32_t>(
        ::crc32(0UL, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len)));
}
}  // namespace binio

namespace {

constexpr char kMagic[9] = "EMLCKPT1";
constexpr std::uint32_t kVersion = 1;

void put_matrix(std::vector<std::uint8_t>& payload, const Matrix& m) {
    for (double v : m.data()) binio::put_f64(payload, v);
}

Matrix read_matrix(binio::Reader& r, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = r.f64();
    return m;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    net.validate();

    std::vector<std::uint8_t> header;
    for (int i = 0; i < 8; ++i) header.push_back(static_cast<std::uint8_t>(kMagic[i]));
    binio::put_u32(header, kVersion);
    binio::put_u32(header, static_cast<std::uint32_t>(net.layers.size()));

    std::vector<std::uint8_t> payload;
    for (const Layer& layer : net.layers) {
        header.push_back(layer.factorized() ? 1 : 0);
        binio::put_u32(header, static_cast<std::uint32_t>(layer.d_in()));
        binio::put_u32(header, static_cast<std::uint32_t>(layer.d_out()));
        binio::put_u32(header, layer.factorized()
                                   ? static_cast<std::uint32_t>(layer.factorized_weight().rank())
                                   : 0);
        header.push_back(layer.bias ? 1 : 0);
        header.push_back(static_cast<std::uint8_t>(layer.activation));
        header.push_back(layer.lora ? 1 : 0);
        binio::put_u32(header,
                       layer.lora ? static_cast<std::uint32_t>(layer.lora->rank()) : 0);

        if (layer.factorized()) {
            put_matrix(payload, layer.factorized_weight().w_u);
            put_matrix(payload, layer.factorized_weight().w_v);
        } else {
            put_matrix(payload, layer.full_weight());
        }
        if (layer.bias) put_matrix(payload, *layer.bias);
        if (layer.lora) {
            put_matrix(payload, layer.lora->w_a);
            put_matrix(payload, layer.lora->w_b);
        }
    }

    std::vector<std::uint8_t> file = std::move(header);
    file.insert(file.end(), payload.begin(), payload.end());
    binio::put_u32(file, binio::crc32_of(payload.data(), payload.size()));
    binio::write_file(path, file);
}

Network load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::Reader r(bytes, "checkpoint");
    r.magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    }
    const std::uint32_t layer_count = r.u32();
    if (layer_count == 0) throw std::runtime_error("checkpoint: zero layers");

    struct Descriptor {
        bool factorized;
        std::size_t d_in, d_out, rank;
        bool has_bias;
        std::uint8_t activation;
        bool has_lora;
        std::size_t lora_rank;
    };
    std::vector<Descriptor> descs(layer_count);
    for (Descriptor& d : descs) {
        d.factorized = r.u8() != 0;
        d.d_in = r.u32();
        d.d_out = r.u32();
        d.rank = r.u32();
        d.has_bias = r.u8() != 0;
        d.activation = r.u8();
        d.has_lora = r.u8() != 0;
        d.lora_rank = r.u32();
        if (d.d_in == 0 || d.d_out == 0) {
            throw std::runtime_error("checkpoint: zero layer dimension");
        }
        if (d.factorized && (d.rank == 0 || d.rank > std::min(d.d_in, d.d_out))) {
            throw std::runtime_error("checkpoint: invalid factorized rank");
        }
        if (d.has_lora && (d.lora_rank == 0 || d.lora_rank > std::min(d.d_in, d.d_out))) {
            throw std::runtime_error("checkpoint: invalid LoRA rank");
        }
        if (d.activation > 2) throw std::runtime_error("checkpoint: unknown activation id");
    }

    const std::size_t payload_start = r.pos();
    if (r.remaining() < 4) throw std::runtime_error("checkpoint: truncated file");
    const std::size_t payload_len = r.remaining() - 4;

    Network net;
    for (const Descriptor& d : descs) {
        Layer layer;
        if (d.factorized) {
            FactorizedWeight f;
            f.w_u = read_matrix(r, d.d_in, d.rank);
            f.w_v = read_matrix(r, d.rank, d.d_out);
            layer.weight = std::move(f);
        } else {
            layer.weight = read_matrix(r, d.d_in, d.d_out);
        }
        if (d.has_bias) layer.bias = read_matrix(r, 1, d.d_out);
        if (d.has_lora) {
            LoraModule lora;
            lora.w_a = read_matrix(r, d.d_in, d.lora_rank);
            lora.w_b = read_matrix(r, d.lora_rank, d.d_out);
            layer.lora = std::move(lora);
        }
        layer.activation = static_cast<Activation>(d.activation);
        net.layers.push_back(std::move(layer));
    }

    if (r.pos() != payload_start + payload_len) {
        throw std::runtime_error("checkpoint: payload size mismatch");
    }
    const std::uint32_t stored_crc = r.u32();
    r.expect_end();
    const std::uint32_t actual_crc =
        binio::crc32_of(bytes.data() + payload_start, payload_len);
    if (stored_crc != actual_crc) {
        throw std::runtime_error("checkpoint: CRC mismatch (corrupted payload)");
    }

    for (const Layer& layer : net.layers) {
        const bool finite =
            layer.factorized()
                ? layer.factorized_weight().w_u.all_finite() &&
                      layer.factorized_weight().w_v.all_finite()
                : layer.full_weight().all_finite();
        if (!finite || (layer.bias && !layer.bias->all_finite()) ||
            (layer.lora &&
             !(layer.lora->w_a.all_finite() && layer.lora->w_b.all_finite()))) {
            throw std::runtime_error("checkpoint: non-finite values in payload");
        }
    }
    net.validate();
    return net;
}

}  // namespace emloc
