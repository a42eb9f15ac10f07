#include "smoe/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smoe {

Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions do not match");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k)
                acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
            c.at(i, j) = static_cast<float>(acc);
        }
    }
    return c;
}

std::vector<float> matvec(const Matrix& m, std::span<const float> x) {
    if (static_cast<size_t>(m.cols) != x.size())
        throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<float> y(m.rows);
    for (int i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m.cols; ++j)
            acc += static_cast<double>(m.at(i, j)) * static_cast<double>(x[j]);
        y[i] = static_cast<float>(acc);
    }
    return y;
}

std::vector<float> matvec_transposed(const Matrix& m, std::span<const float> x) {
    if (static_cast<size_t>(m.rows) != x.size())
        throw std::invalid_argument("matvec_transposed: dimension mismatch");
    std::vector<double> acc(m.cols, 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        for (int j = 0; j < m.cols; ++j)
            acc[j] += static_cast<double>(m.at(i, j)) * xi;
    }
    std::vector<float> y(m.cols);
    for (int j = 0; j < m.cols; ++j) y[j] = static_cast<float>(acc[j]);
    return y;
}

double dot(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < u.size(); ++i)
        acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
    return acc;
}

double norm(std::span<const float> u) {
    double acc = 0.0;
    for (float x : u) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu < 1e-12 || nv < 1e-12) return 0.0;
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (float x : m.data) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

bool all_finite(const Matrix& m) {
    for (float x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

bool is_permutation(const Permutation& p) {
    const int n = p.size();
    std::vector<char> seen(n, 0);
    for (int v : p.mapping) {
        if (v < 0 || v >= n || seen[v]) return false;
        seen[v] = 1;
    }
    return true;
}

Permutation identity_permutation(int n) {
    Permutation p;
    p.mapping.resize(n);
    for (int i = 0; i < n; ++i) p.mapping[i] = i;
    return p;
}

Permutation inverse(const Permutation& p) {
    Permutation inv;
    inv.mapping.resize(p.mapping.size());
    for (int i = 0; i < p.size(); ++i) inv.mapping[p.mapping[i]] = i;
    return inv;
}

}  // namespace smoe
