#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace smoe {

// Dense row-major matrix. Values are stored as 32-bit floats; every reduction
// over entries accumulates in 64-bit.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0f) {}

    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    std::span<const float> row(int i) const {
        return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
    }
    std::span<float> row(int i) {
        return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix identity(int n);
Matrix transpose(const Matrix& m);

// c = a * b, accumulated in double. Throws on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

// y = m * x and y = m^T * x.
std::vector<float> matvec(const Matrix& m, std::span<const float> x);
std::vector<float> matvec_transposed(const Matrix& m, std::span<const float> x);

double dot(std::span<const float> u, std::span<const float> v);
double norm(std::span<const float> u);

// u.v / (|u||v|), clamped to [-1, 1]. Returns 0 when either norm < 1e-12.
double cosine(std::span<const float> u, std::span<const float> v);

double frobenius_norm(const Matrix& m);
bool all_finite(const Matrix& m);

// Bijection over 0..n-1. mapping[i] is the source index that fills slot i.
struct Permutation {
    std::vector<int> mapping;

    int size() const { return static_cast<int>(mapping.size()); }
};

bool is_permutation(const Permutation& p);
Permutation identity_permutation(int n);
Permutation inverse(const Permutation& p);

}  // namespace smoe
