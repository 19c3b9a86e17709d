#pragma once

#include <utility>
#include <vector>

#include "emloc/factorized.hpp"
#include "emloc/lora.hpp"
#include "emloc/matrix.hpp"
#include "emloc/model.hpp"

namespace emloc {

/// Per-layer observability for the correction step.
struct CorrectionReport {
    std::size_t rows_clamped = 0;
    /// max ||delta_i|| / ||b_i|| over rows before clamping; how strongly the
    /// raw correction would dominate the learned update.
    double max_row_correction_ratio = 0.0;
    /// Verification residual of the corrected module (see verify_correction).
    double residual = 0.0;
};

struct NetworkCorrectionReport {
    std::vector<std::pair<std::size_t, CorrectionReport>> layers;
};

/// Rewrites (w_a, w_b) as (u, sigma * vt * w_b) via the SVD of w_a. The
/// product is unchanged; the new w_a has orthonormal columns, so each basis
/// direction's output is governed by one row of the new w_b.
LoraModule reparameterize(const LoraModule& lora);

/// Row-wise cap: row i of delta is rescaled to norm lambda * ||b_i|| when it
/// exceeds it (direction preserved). Rows whose b_i is zero are zeroed for
/// finite lambda; an infinite lambda disables clamping entirely.
Matrix clamp_delta(const Matrix& delta, const Matrix& w_b_prime, double lambda);

/// Corrects a LoRA module trained beside w_emu so it can be merged into the
/// original weight w: reparameterize, measure the per-basis-direction
/// misalignment delta = w_a'^T (w - w_emu) without materializing the
/// emulator product, and subtract the clamped delta from w_b'.
std::pair<LoraModule, CorrectionReport> correct_lora(const LoraModule& lora,
                                                     const Matrix& w,
                                                     const FactorizedWeight& w_emu,
                                                     double lambda);
std::pair<LoraModule, CorrectionReport> correct_lora(const LoraModule& lora,
                                                     const Matrix& w,
                                                     const Matrix& w_emu,
                                                     double lambda);

/// Max over the corrected module's basis columns a_i of
/// ||a_i^T (w + corrected) - a_i^T (w_emu + lora)||_2. An unclamped
/// correction of a full-rank module keeps this at the numerical floor.
double verify_correction(const LoraModule& lora, const LoraModule& corrected,
                         const Matrix& w, const FactorizedWeight& w_emu);
double verify_correction(const LoraModule& lora, const LoraModule& corrected,
                         const Matrix& w, const Matrix& w_emu);

/// Applies correct_lora at every LoRA-bearing layer of net_lora (trained on
/// the emulator) and returns net_full with the corrected modules attached,
/// unmerged. The two networks must correspond layer by layer.
std::pair<Network, NetworkCorrectionReport> correct_network(const Network& net_lora,
                                                            const Network& net_full,
                                                            double lambda);

}  // namespace emloc
