#pragma once

#include <functional>

#include "emloc/dataset.hpp"
#include "emloc/factorized.hpp"
#include "emloc/matrix.hpp"
#include "emloc/model.hpp"

namespace emloc {

/// Running second moment of a layer's input activations. Rows of every
/// accumulated batch are input vectors, so gram = sum_i x_i x_i^T stays
/// symmetric positive semidefinite by construction.
struct CalibrationStats {
    Matrix gram;  // d_in x d_in
    std::size_t count = 0;

    explicit CalibrationStats(std::size_t d_in) : gram(d_in, d_in) {}
};

/// gram += x_batch^T * x_batch; count += rows. Accumulation order is the
/// input order.
void accumulate_activations(CalibrationStats& stats, const Matrix& x_batch);

/// Cholesky factor L of the regularized, count-normalized gram:
/// G' = gram/count + eps * (trace(gram)/(count*d_in)) * I with eps = 1e-6,
/// retried once with eps = 1e-3 when the factorization fails. Calibration
/// sets smaller than d_in leave the raw gram singular.
Matrix whitening_factor(const CalibrationStats& stats);

/// Rank-n factorization minimizing the activation-weighted reconstruction
/// error: whiten with L = whitening_factor(stats), take the truncated SVD of
/// L^T * w, and unwhiten the left factor. The square-root of the kept
/// singular values is split evenly between w_u and w_v; the split is part of
/// the checkpoint contract.
FactorizedWeight activation_aware_factorize(const Matrix& w,
                                            const CalibrationStats& stats,
                                            std::size_t n);

/// Plain truncated SVD of w with the same balanced square-root split.
FactorizedWeight plain_factorize(const Matrix& w, std::size_t n);

/// Kept rank for a target parameter fraction:
/// n = floor(ratio * d_in * d_out / (d_in + d_out)), clamped to
/// [1, min(d_in, d_out)]. Throws when the ratio is too small for rank 1.
std::size_t rank_for_ratio(std::size_t d_in, std::size_t d_out, double ratio);

using LayerFilter = std::function<bool(std::size_t)>;

/// Replaces every linear weight of net with its activation-aware low-rank
/// factorization at rank_for_ratio, using one capture-mode forward pass over
/// the calibration inputs on the original network. Biases, activations and
/// any attached LoRA are copied unchanged; the input network is not modified.
///
/// ratio == 1.0 keeps every weight unfactorized (the emulator degenerates to
/// a copy of the model, the conventional-PEFT special case). An optional
/// filter restricts factorization to layers for which it returns true.
Network build_emulator(const Network& net, const Dataset& calib, double ratio,
                       const LayerFilter& include = {});

}  // namespace emloc
