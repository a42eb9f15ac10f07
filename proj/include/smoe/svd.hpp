#pragma once

#include <vector>

#include "smoe/matrix.hpp"

namespace smoe {

// m ≈ u * diag(sigma) * v^T with k = min(rows, cols).
// u is rows×k and v is cols×k, both column-orthonormal; sigma is non-negative
// and sorted descending.
struct SvdResult {
    Matrix u;
    std::vector<float> sigma;
    Matrix v;
};

// One-sided Jacobi. Throws std::runtime_error if the sweep cap is hit before
// convergence and std::invalid_argument on non-finite input.
SvdResult svd(const Matrix& m);

}  // namespace smoe
