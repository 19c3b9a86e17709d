#pragma once

#include <cstdint>

#include "emloc/matrix.hpp"

namespace emloc {

/// Trainable low-rank adapter attached beside a frozen host weight. The
/// effective update is w_a * w_b (d_in x d_out) and is zero right after
/// initialization, so fine-tuning starts at the base model.
struct LoraModule {
    Matrix w_a;  // d_in x r
    Matrix w_b;  // r x d_out

    std::size_t rank() const { return w_a.cols(); }
    std::size_t d_in() const { return w_a.rows(); }
    std::size_t d_out() const { return w_b.cols(); }
};

/// w_a entries i.i.d. Gaussian with std 1/sqrt(d_in), w_b zero. Deterministic
/// for a fixed seed.
LoraModule init_lora(std::size_t d_in, std::size_t d_out, std::size_t r,
                     std::uint64_t seed);

/// x * host + (x * w_a) * w_b, with the low-rank path kept factored.
Matrix lora_forward(const Matrix& x, const Matrix& host, const LoraModule& lora);

/// w + w_a * w_b.
Matrix merge_lora(const Matrix& w, const LoraModule& lora);

/// Materialized update w_a * w_b.
Matrix lora_update(const LoraModule& lora);

/// Trainable parameters per adapter: r * (d_in + d_out).
std::size_t parameter_count(const LoraModule& lora);

}  // namespace emloc
