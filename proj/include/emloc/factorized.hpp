#pragma once

#include "emloc/matrix.hpp"

namespace emloc {

/// Low-rank replacement for a full linear weight, stored in factored form.
/// The effective weight w_u * w_v keeps the original input/output dimensions;
/// only the rank of the transformation changes.
struct FactorizedWeight {
    Matrix w_u;  // d_in x n
    Matrix w_v;  // n x d_out

    std::size_t rank() const { return w_u.cols(); }
    std::size_t d_in() const { return w_u.rows(); }
    std::size_t d_out() const { return w_v.cols(); }
};

inline Matrix effective_weight(const FactorizedWeight& f) {
    return matmul(f.w_u, f.w_v);
}

}  // namespace emloc
