#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emloc/dataset.hpp"
#include "emloc/model.hpp"

namespace emloc {

enum class LrSchedule : std::uint8_t { cosine = 0, constant = 1 };

struct TrainConfig {
    double lr = 4e-5;
    std::size_t iterations = 500;
    std::size_t batch_size = 8;
    std::size_t lora_rank = 8;
    double lambda = 3.0;
    std::uint64_t seed = 0;
    LrSchedule schedule = LrSchedule::cosine;
};

/// Adam first/second moment estimates for one parameter matrix.
struct AdamState {
    Matrix m;
    Matrix v;
    std::size_t t = 0;

    AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

/// Bias-corrected Adam update with beta1=0.9, beta2=0.999, eps=1e-8 and no
/// weight decay. Increments state.t.
void adam_step(Matrix& params, const Matrix& grads, AdamState& state, double lr_t);

/// lr0 * 0.5 * (1 + cos(pi * step / total)); no warmup.
double cosine_lr(std::size_t step, std::size_t total, double lr0);

struct CurvePoint {
    std::size_t step;
    double lr;
    double loss;
};

struct TrainResult {
    Network net;
    std::vector<CurvePoint> curve;
};

/// LoRA-only fine-tuning with Adam. Base weights and biases stay bit-frozen.
/// Batches are drawn uniformly with replacement from data (the whole set, in
/// order, when batch_size >= rows). Deterministic for a fixed seed.
TrainResult finetune(const Network& net, const Dataset& data, const TrainConfig& cfg,
                     LossKind loss_kind = LossKind::mse);

/// Mean-squared eval loss of net on data.
double evaluate_mse(const Network& net, const Dataset& data);

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path);

enum class MemoryMode { inference, finetune };

/// Analytic byte counts at 8 bytes per float.
struct MemoryBudget {
    std::uint64_t params_bytes = 0;
    std::uint64_t optimizer_bytes = 0;   // 2x trainable bytes (Adam m and v)
    std::uint64_t activation_bytes = 0;  // tape inputs when fine-tuning
    std::uint64_t total_bytes = 0;
};

/// params from the floats actually stored; optimizer = 2x trainable bytes in
/// finetune mode, else 0; activations = the tape (every layer input for
/// batch_size rows) in finetune mode, else one layer's activation for a
/// single row.
MemoryBudget account_memory(const Network& net, const TrainConfig& cfg, MemoryMode mode);

}  // namespace emloc
