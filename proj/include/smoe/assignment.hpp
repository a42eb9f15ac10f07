#pragma once

#include "smoe/matrix.hpp"

namespace smoe {

// Permutation p maximizing sum_i score(i, p(i)) over a square score matrix.
// Among optima, returns the lexicographically smallest mapping.
Permutation solve_assignment(const Matrix& score);

// sum_i score(i, p(i)), accumulated in double in row order.
double assignment_score(const Matrix& score, const Permutation& p);

}  // namespace smoe
