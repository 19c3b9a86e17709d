#include "emloc/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "emloc/rng.hpp"

namespace emloc {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
constexpr std::uint64_t kBytesPerFloat = 8;
}  // namespace

void adam_step(Matrix& params, const Matrix& grads, AdamState& state, double lr_t) {
    if (!same_shape(params, grads) || !same_shape(params, state.m)) {
        throw std::invalid_argument("adam_step: shape mismatch");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads.data()[i];
        double& m = state.m.data()[i];
        double& v = state.v.data()[i];
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g * g;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        params.data()[i] -= lr_t * m_hat / (std::sqrt(v_hat) + kEps);
    }
}

double cosine_lr(std::size_t step, std::size_t total, double lr0) {
    if (step > total) throw std::invalid_argument("cosine_lr: step beyond total");
    if (total == 0) return lr0;
    const double frac = static_cast<double>(step) / static_cast<double>(total);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * frac));
}

TrainResult finetune(const Network& net, const Dataset& data, const TrainConfig& cfg,
                     LossKind loss_kind) {
    net.validate();
    if (cfg.iterations < 1) throw std::invalid_argument("finetune: iterations must be >= 1");
    if (!(cfg.lr >= 0.0)) throw std::invalid_argument("finetune: negative learning rate");
    if (cfg.batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
    if (data.rows() == 0) throw std::invalid_argument("finetune: empty dataset");

    TrainResult result;
    result.net = net;

    std::vector<std::size_t> lora_layers;
    for (std::size_t l = 0; l < result.net.layers.size(); ++l) {
        if (result.net.layers[l].lora) lora_layers.push_back(l);
    }
    if (lora_layers.empty()) {
        throw std::invalid_argument("finetune: network has no LoRA modules");
    }

    struct LayerState {
        AdamState a;
        AdamState b;
    };
    std::vector<LayerState> states;
    states.reserve(lora_layers.size());
    for (std::size_t l : lora_layers) {
        const LoraModule& lora = *result.net.layers[l].lora;
        states.push_back({AdamState(lora.w_a.rows(), lora.w_a.cols()),
                          AdamState(lora.w_b.rows(), lora.w_b.cols())});
    }

    const bool full_batch = cfg.batch_size >= data.rows();
    std::mt19937_64 eng(derive_seed(cfg.seed, 0xba7c4));
    std::uniform_int_distribution<std::size_t> pick(0, data.rows() - 1);

    result.curve.reserve(cfg.iterations);
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        const double lr_t = cfg.schedule == LrSchedule::cosine
                                ? cosine_lr(step, cfg.iterations, cfg.lr)
                                : cfg.lr;

        Matrix xb, yb;
        if (full_batch) {
            xb = data.inputs;
            yb = data.targets;
        } else {
            xb = Matrix(cfg.batch_size, data.inputs.cols());
            yb = Matrix(cfg.batch_size, data.targets.cols());
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t r = pick(eng);
                for (std::size_t j = 0; j < xb.cols(); ++j) xb(i, j) = data.inputs(r, j);
                for (std::size_t j = 0; j < yb.cols(); ++j) yb(i, j) = data.targets(r, j);
            }
        }

        Tape tape;
        Matrix pred = forward(result.net, xb, ForwardMode::training, &tape);
        LossResult ls = loss(pred, yb, loss_kind);
        std::vector<LoraGrad> grads = backward_lora(result.net, tape, ls.grad);

        for (std::size_t gi = 0; gi < grads.size(); ++gi) {
            LoraModule& lora = *result.net.layers[grads[gi].layer].lora;
            adam_step(lora.w_a, grads[gi].w_a, states[gi].a, lr_t);
            adam_step(lora.w_b, grads[gi].w_b, states[gi].b, lr_t);
        }
        result.curve.push_back({step, lr_t, ls.value});
    }
    return result;
}

double evaluate_mse(const Network& net, const Dataset& data) {
    if (data.rows() == 0) throw std::invalid_argument("evaluate_mse: empty dataset");
    Matrix pred = forward(net, data.inputs);
    return loss(pred, data.targets, LossKind::mse).value;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_curve_csv: cannot open " + path);
    out << "step,lr,loss\n";
    char line[96];
    for (const CurvePoint& p : curve) {
        std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", p.step, p.lr, p.loss);
        out << line;
    }
    if (!out) throw std::runtime_error("write_curve_csv: write failed for " + path);
}

namespace {

std::uint64_t stored_floats(const Layer& layer) {
    std::uint64_t n = 0;
    if (layer.factorized()) {
        const FactorizedWeight& f = layer.factorized_weight();
        n += static_cast<std::uint64_t>(f.w_u.size()) + f.w_v.size();
    } else {
        n += layer.full_weight().size();
    }
    if (layer.bias) n += layer.bias->size();
    if (layer.lora) n += static_cast<std::uint64_t>(layer.lora->w_a.size()) +
                         layer.lora->w_b.size();
    return n;
}

}  // namespace

MemoryBudget account_memory(const Network& net, const TrainConfig& cfg, MemoryMode mode) {
    MemoryBudget b;
    std::uint64_t widest = 0;
    std::uint64_t tape_floats = 0;
    for (const Layer& layer : net.layers) {
        b.params_bytes += stored_floats(layer) * kBytesPerFloat;
        widest = std::max<std::uint64_t>(widest, std::max(layer.d_in(), layer.d_out()));
        tape_floats += static_cast<std::uint64_t>(cfg.batch_size) * layer.d_in();
    }
    if (mode == MemoryMode::finetune) {
        b.optimizer_bytes =
            2 * static_cast<std::uint64_t>(trainable_parameter_count(net)) * kBytesPerFloat;
        b.activation_bytes = tape_floats * kBytesPerFloat;
    } else {
        b.optimizer_bytes = 0;
        b.activation_bytes = widest * kBytesPerFloat;
    }
    b.total_bytes = b.params_bytes + b.optimizer_bytes + b.activation_bytes;
    return b;
}

}  // namespace emloc
