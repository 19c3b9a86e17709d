#include "emloc/correction.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "emloc/linalg.hpp"

namespace emloc {

namespace {

// Singular values below this fraction of sigma_max belong to directions
// outside the adapter's active subspace; their correction rows are zeroed.
constexpr double kRankTol = 1e-10;

struct Reparameterized {
    LoraModule module;
    std::vector<double> sigma;
};

Reparameterized reparameterize_with_spectrum(const LoraModule& lora) {
    SvdResult s = svd(lora.w_a);
    Reparameterized rep;
    rep.module.w_a = s.u;  // d_in x r, orthonormal columns
    Matrix sv = s.vt;      // r x r
    for (std::size_t i = 0; i < sv.rows(); ++i) {
        for (std::size_t j = 0; j < sv.cols(); ++j) sv(i, j) *= s.sigma[i];
    }
    rep.module.w_b = matmul(sv, lora.w_b);
    rep.sigma = std::move(s.sigma);
    return rep;
}

// delta = w_a'^T * w - (w_a'^T * w_u) * w_v, never forming w_u * w_v.
Matrix misalignment_factored(const Matrix& wa_prime, const Matrix& w,
                             const FactorizedWeight& w_emu) {
    Matrix at = transpose(wa_prime);
    Matrix full_part = matmul(at, w);
    Matrix emu_part = matmul(matmul(at, w_emu.w_u), w_emu.w_v);
    return subtract(full_part, emu_part);
}

Matrix misalignment_full(const Matrix& wa_prime, const Matrix& w, const Matrix& w_emu) {
    return matmul(transpose(wa_prime), subtract(w, w_emu));
}

std::pair<LoraModule, CorrectionReport> correct_with_delta(const Reparameterized& rep,
                                                           Matrix delta, double lambda) {
    const double sigma_max = rep.sigma.empty() ? 0.0 : rep.sigma.front();
    for (std::size_t i = 0; i < rep.sigma.size(); ++i) {
        if (rep.sigma[i] < kRankTol * sigma_max || sigma_max == 0.0) {
            for (std::size_t j = 0; j < delta.cols(); ++j) delta(i, j) = 0.0;
        }
    }

    CorrectionReport report;
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        const double nd = row_norm(delta, i);
        const double nb = row_norm(rep.module.w_b, i);
        double ratio = 0.0;
        if (nb > 0.0) {
            ratio = nd / nb;
        } else if (nd > 0.0) {
            ratio = std::numeric_limits<double>::infinity();
        }
        report.max_row_correction_ratio = std::max(report.max_row_correction_ratio, ratio);
    }

    Matrix clamped = clamp_delta(delta, rep.module.w_b, lambda);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        bool changed = false;
        for (std::size_t j = 0; j < delta.cols(); ++j) {
            if (clamped(i, j) != delta(i, j)) {
                changed = true;
                break;
            }
        }
        if (changed) ++report.rows_clamped;
    }

    LoraModule corrected;
    corrected.w_a = rep.module.w_a;
    corrected.w_b = subtract(rep.module.w_b, clamped);
    return {std::move(corrected), report};
}

void check_correction_shapes(const LoraModule& lora, std::size_t emu_d_in,
                             std::size_t emu_d_out, const Matrix& w) {
    if (w.rows() != lora.d_in() || w.cols() != lora.d_out()) {
        throw std::invalid_argument("correct_lora: weight/LoRA shape mismatch");
    }
    if (emu_d_in != w.rows() || emu_d_out != w.cols()) {
        throw std::invalid_argument("correct_lora: emulator weight shape mismatch");
    }
}

}  // namespace

LoraModule reparameterize(const LoraModule& lora) {
    return reparameterize_with_spectrum(lora).module;
}

Matrix clamp_delta(const Matrix& delta, const Matrix& w_b_prime, double lambda) {
    if (!same_shape(delta, w_b_prime)) {
        throw std::invalid_argument("clamp_delta: shape mismatch");
    }
    if (std::isnan(lambda) || lambda < 0.0) {
        throw std::invalid_argument("clamp_delta: lambda must be >= 0");
    }
    if (std::isinf(lambda)) return delta;

    Matrix out = delta;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const double cap = lambda * row_norm(w_b_prime, i);
        const double nd = row_norm(out, i);
        if (nd > cap) {
            const double f = cap > 0.0 ? cap / nd : 0.0;
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= f;
        }
    }
    return out;
}

std::pair<LoraModule, CorrectionReport> correct_lora(const LoraModule& lora,
                                                     const Matrix& w,
                                                     const FactorizedWeight& w_emu,
                                                     double lambda) {
    check_correction_shapes(lora, w_emu.d_in(), w_emu.d_out(), w);
    Reparameterized rep = reparameterize_with_spectrum(lora);
    auto result = correct_with_delta(rep, misalignment_factored(rep.module.w_a, w, w_emu),
                                     lambda);
    result.second.residual = verify_correction(lora, result.first, w, w_emu);
    return result;
}

std::pair<LoraModule, CorrectionReport> correct_lora(const LoraModule& lora,
                                                     const Matrix& w,
                                                     const Matrix& w_emu,
                                                     double lambda) {
    check_correction_shapes(lora, w_emu.rows(), w_emu.cols(), w);
    Reparameterized rep = reparameterize_with_spectrum(lora);
    auto result = correct_with_delta(rep, misalignment_full(rep.module.w_a, w, w_emu),
                                     lambda);
    result.second.residual = verify_correction(lora, result.first, w, w_emu);
    return result;
}

namespace {

double residual_against(const LoraModule& lora, const LoraModule& corrected,
                        const Matrix& w, const Matrix& emu_effective) {
    const Matrix at = transpose(corrected.w_a);  // r x d_in
    // a_i^T (w + corrected) per basis column, adapter paths kept factored.
    Matrix merged_side = add(matmul(at, w),
                             matmul(matmul(at, corrected.w_a), corrected.w_b));
    Matrix emulator_side = add(matmul(at, emu_effective),
                               matmul(matmul(at, lora.w_a), lora.w_b));
    Matrix diff = subtract(merged_side, emulator_side);
    double worst = 0.0;
    for (std::size_t i = 0; i < diff.rows(); ++i) {
        worst = std::max(worst, row_norm(diff, i));
    }
    return worst;
}

}  // namespace

double verify_correction(const LoraModule& lora, const LoraModule& corrected,
                         const Matrix& w, const FactorizedWeight& w_emu) {
    return residual_against(lora, corrected, w, effective_weight(w_emu));
}

double verify_correction(const LoraModule& lora, const LoraModule& corrected,
                         const Matrix& w, const Matrix& w_emu) {
    return residual_against(lora, corrected, w, w_emu);
}

std::pair<Network, NetworkCorrectionReport> correct_network(const Network& net_lora,
                                                            const Network& net_full,
                                                            double lambda) {
    net_lora.validate();
    net_full.validate();
    if (net_lora.layers.size() != net_full.layers.size()) {
        throw std::invalid_argument("correct_network: layer counts differ");
    }

    Network out = net_full;
    NetworkCorrectionReport report;
    for (std::size_t l = 0; l < net_lora.layers.size(); ++l) {
        const Layer& emu_layer = net_lora.layers[l];
        const Layer& full_layer = net_full.layers[l];
        if (emu_layer.d_in() != full_layer.d_in() ||
            emu_layer.d_out() != full_layer.d_out() ||
            emu_layer.activation != full_layer.activation) {
            throw std::invalid_argument("correct_network: structural mismatch at layer " +
                                        std::to_string(l));
        }
        if (full_layer.factorized()) {
            throw std::invalid_argument(
                "correct_network: full network has a factorized layer " +
                std::to_string(l));
        }
        if (!emu_layer.lora) continue;

        std::pair<LoraModule, CorrectionReport> corrected =
            emu_layer.factorized()
                ? correct_lora(*emu_layer.lora, full_layer.full_weight(),
                               emu_layer.factorized_weight(), lambda)
                : correct_lora(*emu_layer.lora, full_layer.full_weight(),
                               emu_layer.full_weight(), lambda);
        out.layers[l].lora = std::move(corrected.first);
        report.layers.emplace_back(l, corrected.second);
    }
    return {std::move(out), std::move(report)};
}

}  // namespace emloc
