#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "emloc/factorized.hpp"
#include "emloc/lora.hpp"
#include "emloc/matrix.hpp"

namespace emloc {

enum class Activation : std::uint8_t { identity = 0, tanh = 1, relu = 2 };

/// One linear layer: a full or factorized weight, optional bias (1 x d_out),
/// at most one LoRA adapter, and a pointwise nonlinearity applied after the
/// affine map.
struct Layer {
    std::variant<Matrix, FactorizedWeight> weight;
    std::optional<Matrix> bias;
    std::optional<LoraModule> lora;
    Activation activation = Activation::identity;

    bool factorized() const { return std::holds_alternative<FactorizedWeight>(weight); }
    const Matrix& full_weight() const { return std::get<Matrix>(weight); }
    const FactorizedWeight& factorized_weight() const {
        return std::get<FactorizedWeight>(weight);
    }
    std::size_t d_in() const;
    std::size_t d_out() const;
};

/// Feed-forward stack of linear layers. Consecutive layer dimensions chain.
struct Network {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().d_in(); }
    std::size_t output_dim() const { return layers.back().d_out(); }

    /// Throws when dimensions do not chain or a layer is malformed.
    void validate() const;
};

enum class ForwardMode { inference, training, capture };

/// Per-layer inputs recorded during a training- or capture-mode forward pass.
/// Inputs are all the backward pass needs; pre-activations are recomputed.
struct Tape {
    std::vector<Matrix> inputs;
};

Matrix forward(const Network& net, const Matrix& x);
Matrix forward(const Network& net, const Matrix& x, ForwardMode mode, Tape* tape);

struct LoraGrad {
    std::size_t layer;
    Matrix w_a;
    Matrix w_b;
};

/// Exact reverse-mode gradients of the loss w.r.t. every LoRA factor. Base
/// weights and biases receive no gradient. grad_out is dLoss/dOutput of the
/// forward pass that produced the tape.
std::vector<LoraGrad> backward_lora(const Network& net, const Tape& tape,
                                    const Matrix& grad_out);

enum class LossKind { mse, softmax_cross_entropy };

struct LossResult {
    double value;
    Matrix grad;  // dLoss/dPred
};

/// Mean-reduced loss. For cross-entropy, target is a rows x 1 matrix of class
/// indices.
LossResult loss(const Matrix& pred, const Matrix& target, LossKind kind);

/// Copy of net with a freshly initialized LoRA adapter of the given rank on
/// every linear layer (per-layer seeds derived from seed).
Network attach_lora(const Network& net, std::size_t rank, std::uint64_t seed);

std::size_t trainable_parameter_count(const Network& net);

/// Multiply-accumulates per input row through the host weight:
/// d_in * d_out for a full layer, n * (d_in + d_out) for a factorized one.
std::size_t host_macs_per_row(const Layer& layer);
std::size_t lora_macs_per_row(const Layer& layer);
std::size_t forward_macs_per_row(const Network& net);

}  // namespace emloc
