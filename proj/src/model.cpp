#include "emloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "emloc/rng.hpp"

namespace emloc {

std::size_t Layer::d_in() const {
    return factorized() ? factorized_weight().d_in() : full_weight().rows();
}

std::size_t Layer::d_out() const {
    return factorized() ? factorized_weight().d_out() : full_weight().cols();
}

void Network::validate() const {
    if (layers.empty()) throw std::invalid_argument("Network: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& layer = layers[l];
        if (layer.bias && (layer.bias->rows() != 1 || layer.bias->cols() != layer.d_out())) {
            throw std::invalid_argument("Network: bias shape mismatch at layer " +
                                        std::to_string(l));
        }
        if (layer.lora && (layer.lora->d_in() != layer.d_in() ||
                           layer.lora->d_out() != layer.d_out())) {
            throw std::invalid_argument("Network: LoRA shape mismatch at layer " +
                                        std::to_string(l));
        }
        if (l + 1 < layers.size() && layer.d_out() != layers[l + 1].d_in()) {
            throw std::invalid_argument("Network: layer dimensions do not chain at layer " +
                                        std::to_string(l));
        }
    }
}

namespace {

Matrix host_forward(const Matrix& x, const Layer& layer) {
    if (layer.factorized()) {
        const FactorizedWeight& f = layer.factorized_weight();
        return matmul(matmul(x, f.w_u), f.w_v);
    }
    return matmul(x, layer.full_weight());
}

void apply_activation(Matrix& z, Activation act) {
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
            for (double& v : z.data()) v = std::tanh(v);
            return;
        case Activation::relu:
            for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
            return;
    }
}

Matrix pre_activation(const Matrix& x, const Layer& layer) {
    Matrix z = host_forward(x, layer);
    if (layer.lora) {
        z = add(z, matmul(matmul(x, layer.lora->w_a), layer.lora->w_b));
    }
    if (layer.bias) {
        for (std::size_t i = 0; i < z.rows(); ++i) {
            for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += (*layer.bias)(0, j);
        }
    }
    return z;
}

// Derivative of the activation evaluated at pre-activation z, folded into g.
void backprop_activation(Matrix& g, const Matrix& z, Activation act) {
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double t = std::tanh(z.data()[i]);
                g.data()[i] *= 1.0 - t * t;
            }
            return;
        case Activation::relu:
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!(z.data()[i] > 0.0)) g.data()[i] = 0.0;
            }
            return;
    }
}

}  // namespace

Matrix forward(const Network& net, const Matrix& x) {
    return forward(net, x, ForwardMode::inference, nullptr);
}

Matrix forward(const Network& net, const Matrix& x, ForwardMode mode, Tape* tape) {
    net.validate();
    if (x.cols() != net.input_dim()) {
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                    " columns, network expects " +
                                    std::to_string(net.input_dim()));
    }
    if (mode != ForwardMode::inference) {
        if (tape == nullptr) throw std::invalid_argument("forward: mode requires a tape");
        tape->inputs.clear();
    }
    Matrix h = x;
    for (const Layer& layer : net.layers) {
        if (mode != ForwardMode::inference) tape->inputs.push_back(h);
        Matrix z = pre_activation(h, layer);
        apply_activation(z, layer.activation);
        h = std::move(z);
    }
    return h;
}

std::vector<LoraGrad> backward_lora(const Network& net, const Tape& tape,
                                    const Matrix& grad_out) {
    if (tape.inputs.size() != net.layers.size()) {
        throw std::invalid_argument("backward_lora: tape does not match network");
    }
    if (grad_out.rows() != tape.inputs.front().rows() ||
        grad_out.cols() != net.output_dim()) {
        throw std::invalid_argument("backward_lora: grad_out shape mismatch");
    }

    std::vector<LoraGrad> grads;
    Matrix g = grad_out;
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const Layer& layer = net.layers[l];
        const Matrix& x = tape.inputs[l];
        if (x.cols() != layer.d_in()) {
            throw std::invalid_argument("backward_lora: stale tape at layer " +
                                        std::to_string(l));
        }
        Matrix z = pre_activation(x, layer);
        backprop_activation(g, z, layer.activation);

        if (layer.lora) {
            const LoraModule& lora = *layer.lora;
            Matrix xa = matmul(x, lora.w_a);                       // rows x r
            LoraGrad lg;
            lg.layer = l;
            lg.w_b = matmul(transpose(xa), g);                     // r x d_out
            lg.w_a = matmul(transpose(x), matmul(g, transpose(lora.w_b)));
            grads.push_back(std::move(lg));
        }

        if (l > 0) {
            Matrix gx;
            if (layer.factorized()) {
                const FactorizedWeight& f = layer.factorized_weight();
                gx = matmul(matmul(g, transpose(f.w_v)), transpose(f.w_u));
            } else {
                gx = matmul(g, transpose(layer.full_weight()));
            }
            if (layer.lora) {
                gx = add(gx, matmul(matmul(g, transpose(layer.lora->w_b)),
                                    transpose(layer.lora->w_a)));
            }
            g = std::move(gx);
        }
    }
    // Emitted back-to-front above; return in layer order.
    std::reverse(grads.begin(), grads.end());
    return grads;
}

LossResult loss(const Matrix& pred, const Matrix& target, LossKind kind) {
    if (kind == LossKind::mse) {
        if (!same_shape(pred, target)) {
            throw std::invalid_argument("loss: mse shape mismatch");
        }
        const double inv = 1.0 / static_cast<double>(pred.size());
        LossResult r{0.0, Matrix(pred.rows(), pred.cols())};
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred.data()[i] - target.data()[i];
            r.value += d * d * inv;
            r.grad.data()[i] = 2.0 * d * inv;
        }
        return r;
    }

    // softmax cross-entropy over rows; target holds class indices.
    if (target.rows() != pred.rows() || target.cols() != 1) {
        throw std::invalid_argument("loss: cross-entropy expects rows x 1 class indices");
    }
    const std::size_t rows = pred.rows();
    const std::size_t k = pred.cols();
    const double inv = 1.0 / static_cast<double>(rows);
    LossResult r{0.0, Matrix(rows, k)};
    for (std::size_t i = 0; i < rows; ++i) {
        const double t = target(i, 0);
        const auto cls = static_cast<std::size_t>(t);
        if (t < 0.0 || cls >= k || static_cast<double>(cls) != t) {
            throw std::invalid_argument("loss: class index out of range at row " +
                                        std::to_string(i));
        }
        double mx = pred(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, pred(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(pred(i, j) - mx);
        const double lse = mx + std::log(sum);
        r.value += (lse - pred(i, cls)) * inv;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(pred(i, j) - lse);
            r.grad(i, j) = (p - (j == cls ? 1.0 : 0.0)) * inv;
        }
    }
    return r;
}

Network attach_lora(const Network& net, std::size_t rank, std::uint64_t seed) {
    net.validate();
    Network out = net;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        Layer& layer = out.layers[l];
        if (layer.lora) {
            throw std::invalid_argument("attach_lora: layer " + std::to_string(l) +
                                        " already has a LoRA module");
        }
        layer.lora = init_lora(layer.d_in(), layer.d_out(), rank,
                               derive_seed(seed, 0x10ad000 + l));
    }
    return out;
}

std::size_t trainable_parameter_count(const Network& net) {
    std::size_t total = 0;
    for (const Layer& layer : net.layers) {
        if (layer.lora) total += parameter_count(*layer.lora);
    }
    return total;
}

std::size_t host_macs_per_row(const Layer& layer) {
    if (layer.factorized()) {
        const FactorizedWeight& f = layer.factorized_weight();
        return f.rank() * (f.d_in() + f.d_out());
    }
    return layer.d_in() * layer.d_out();
}

std::size_t lora_macs_per_row(const Layer& layer) {
    if (!layer.lora) return 0;
    return layer.lora->rank() * (layer.lora->d_in() + layer.lora->d_out());
}

std::size_t forward_macs_per_row(const Network& net) {
    std::size_t total = 0;
    for (const Layer& layer : net.layers) {
        total += host_macs_per_row(layer) + lora_macs_per_row(layer);
    }
    return total;
}

}  // namespace emloc
