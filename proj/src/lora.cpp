#include "emloc/lora.hpp"

#include <cmath>
#include <stdexcept>

#include "emloc/rng.hpp"

namespace emloc {

LoraModule init_lora(std::size_t d_in, std::size_t d_out, std::size_t r,
                     std::uint64_t seed) {
    if (d_in == 0 || d_out == 0) {
        throw std::invalid_argument("init_lora: dimensions must be positive");
    }
    if (r < 1 || r > std::min(d_in, d_out)) {
        throw std::invalid_argument("init_lora: rank " + std::to_string(r) +
                                    " out of range [1, " +
                                    std::to_string(std::min(d_in, d_out)) + "]");
    }
    LoraModule lora;
    lora.w_a = random_gaussian(d_in, r, 1.0 / std::sqrt(static_cast<double>(d_in)), seed);
    lora.w_b = Matrix(r, d_out);
    return lora;
}

Matrix lora_forward(const Matrix& x, const Matrix& host, const LoraModule& lora) {
    if (x.cols() != host.rows() || x.cols() != lora.d_in()) {
        throw std::invalid_argument("lora_forward: dimension mismatch");
    }
    Matrix out = matmul(x, host);
    Matrix low = matmul(matmul(x, lora.w_a), lora.w_b);
    return add(out, low);
}

Matrix merge_lora(const Matrix& w, const LoraModule& lora) {
    if (w.rows() != lora.d_in() || w.cols() != lora.d_out()) {
        throw std::invalid_argument("merge_lora: dimension mismatch");
    }
    return add(w, lora_update(lora));
}

Matrix lora_update(const LoraModule& lora) {
    return matmul(lora.w_a, lora.w_b);
}

std::size_t parameter_count(const LoraModule& lora) {
    return lora.rank() * (lora.d_in() + lora.d_out());
}

}  // namespace emloc
