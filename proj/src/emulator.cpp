#include "emloc/emulator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "emloc/linalg.hpp"

namespace emloc {

void accumulate_activations(CalibrationStats& stats, const Matrix& x_batch) {
    if (x_batch.cols() != stats.gram.rows()) {
        throw std::invalid_argument("accumulate_activations: batch has " +
                                    std::to_string(x_batch.cols()) +
                                    " columns, gram side is " +
                                    std::to_string(stats.gram.rows()));
    }
    stats.gram = add(stats.gram, matmul(transpose(x_batch), x_batch));
    stats.count += x_batch.rows();
}

Matrix whitening_factor(const CalibrationStats& stats) {
    if (stats.count == 0) {
        throw std::invalid_argument("whitening_factor: no calibration samples accumulated");
    }
    const std::size_t d = stats.gram.rows();
    const double inv_count = 1.0 / static_cast<double>(stats.count);
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += stats.gram(i, i);
    const double mean_diag = trace * inv_count / static_cast<double>(d);

    for (double eps : {1e-6, 1e-3}) {
        Matrix g = scale(stats.gram, inv_count);
        const double ridge = eps * mean_diag;
        for (std::size_t i = 0; i < d; ++i) g(i, i) += ridge;
        try {
            return cholesky(g);
        } catch (const NotPositiveDefiniteError&) {
            // fall through to the larger ridge
        }
    }
    throw NotPositiveDefiniteError(
        "whitening_factor: gram not positive definite after regularization");
}

namespace {

// Splits sigma^(1/2) between the two factors of a truncated SVD.
FactorizedWeight balanced_split(const SvdResult& t) {
    FactorizedWeight f;
    f.w_u = t.u;
    f.w_v = t.vt;
    for (std::size_t j = 0; j < t.sigma.size(); ++j) {
        const double s = std::sqrt(t.sigma[j]);
        for (std::size_t i = 0; i < f.w_u.rows(); ++i) f.w_u(i, j) *= s;
        for (std::size_t i = 0; i < f.w_v.cols(); ++i) f.w_v(j, i) *= s;
    }
    return f;
}

}  // namespace

FactorizedWeight activation_aware_factorize(const Matrix& w,
                                            const CalibrationStats& stats,
                                            std::size_t n) {
    if (stats.gram.rows() != w.rows()) {
        throw std::invalid_argument("activation_aware_factorize: gram side " +
                                    std::to_string(stats.gram.rows()) +
                                    " does not match weight rows " +
                                    std::to_string(w.rows()));
    }
    if (n < 1 || n > std::min(w.rows(), w.cols())) {
        throw std::invalid_argument("activation_aware_factorize: rank out of range");
    }
    const Matrix l = whitening_factor(stats);
    const Matrix lt = transpose(l);
    SvdResult t = truncated_svd(matmul(lt, w), n);
    FactorizedWeight f = balanced_split(t);
    // Undo the whitening on the left factor: w_u = (L^T)^-1 * U_n * S^(1/2).
    f.w_u = solve_upper_triangular(lt, f.w_u);
    return f;
}

FactorizedWeight plain_factorize(const Matrix& w, std::size_t n) {
    if (n < 1 || n > std::min(w.rows(), w.cols())) {
        throw std::invalid_argument("plain_factorize: rank out of range");
    }
    return balanced_split(truncated_svd(w, n));
}

std::size_t rank_for_ratio(std::size_t d_in, std::size_t d_out, double ratio) {
    if (d_in == 0 || d_out == 0) {
        throw std::invalid_argument("rank_for_ratio: dimensions must be positive");
    }
    if (!(ratio > 0.0)) {
        throw std::invalid_argument("rank_for_ratio: ratio must be positive");
    }
    const double prod = static_cast<double>(d_in) * static_cast<double>(d_out);
    const double sum = static_cast<double>(d_in + d_out);
    const auto n = static_cast<std::size_t>(std::floor(ratio * prod / sum));
    if (n < 1) {
        throw std::invalid_argument("rank_for_ratio: ratio " + std::to_string(ratio) +
                                    " too small for rank >= 1");
    }
    return std::min(n, std::min(d_in, d_out));
}

Network build_emulator(const Network& net, const Dataset& calib, double ratio,
                       const LayerFilter& include) {
    net.validate();
    if (calib.rows() == 0) {
        throw std::invalid_argument("build_emulator: calibration set is empty");
    }
    if (!(ratio > 0.0)) {
        throw std::invalid_argument("build_emulator: ratio must be positive");
    }

    Network out = net;
    if (ratio == 1.0) return out;  // emulator degenerates to the model itself

    // One capture pass on the original network records every layer's inputs.
    Tape captured;
    forward(net, calib.inputs, ForwardMode::capture, &captured);

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        if (layer.factorized()) continue;
        if (include && !include(l)) continue;

        CalibrationStats stats(layer.d_in());
        accumulate_activations(stats, captured.inputs[l]);
        const std::size_t n = rank_for_ratio(layer.d_in(), layer.d_out(), ratio);
        out.layers[l].weight =
            activation_aware_factorize(layer.full_weight(), stats, n);
    }
    return out;
}

}  // namespace emloc
