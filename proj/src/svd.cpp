#include "smoe/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace smoe {

namespace {

// Orthonormal completion for columns whose singular value underflowed: pick
// the canonical basis vector with the largest residual against the columns
// built so far, orthogonalize twice, normalize.
void complete_column(std::vector<double>& u, int m, int n_built, int target) {
    int best_t = 0;
    double best_res = -1.0;
    for (int t = 0; t < m; ++t) {
        double proj = 0.0;
        for (int k = 0; k < n_built; ++k) {
            const double c = u[static_cast<size_t>(k) * m + t];
            proj += c * c;
        }
        const double res = 1.0 - proj;
        if (res > best_res) {
            best_res = res;
            best_t = t;
        }
    }
    std::vector<double> col(m, 0.0);
    col[best_t] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
        for (int k = 0; k < n_built; ++k) {
            double proj = 0.0;
            for (int i = 0; i < m; ++i) proj += col[i] * u[static_cast<size_t>(k) * m + i];
            for (int i = 0; i < m; ++i) col[i] -= proj * u[static_cast<size_t>(k) * m + i];
        }
    }
    double nrm = 0.0;
    for (double x : col) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (int i = 0; i < m; ++i) u[static_cast<size_t>(target) * m + i] = col[i] / nrm;
}

}  // namespace

SvdResult svd(const Matrix& input) {
    if (!all_finite(input)) throw std::invalid_argument("svd: non-finite entries");
    if (input.rows == 0 || input.cols == 0) throw std::invalid_argument("svd: empty matrix");

    const bool transposed = input.rows < input.cols;
    const Matrix src = transposed ? transpose(input) : input;
    const int m = src.rows;
    const int n = src.cols;

    // Column-major working copies in double.
    std::vector<double> a(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a[static_cast<size_t>(j) * m + i] = src.at(i, j);
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int j = 0; j < n; ++j) v[static_cast<size_t>(j) * n + j] = 1.0;

    const double tol = 1e-13;
    const int max_sweeps = 100;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double* cp = a.data() + static_cast<size_t>(p) * m;
                double* cq = a.data() + static_cast<size_t>(q) * m;
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    app += cp[i] * cp[i];
                    aqq += cq[i] * cq[i];
                    apq += cp[i] * cq[i];
                }
                if (apq * apq <= tol * tol * app * aqq) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double xp = cp[i], xq = cq[i];
                    cp[i] = c * xp - s * xq;
                    cq[i] = s * xp + c * xq;
                }
                double* vp = v.data() + static_cast<size_t>(p) * n;
                double* vq = v.data() + static_cast<size_t>(q) * n;
                for (int i = 0; i < n; ++i) {
                    const double xp = vp[i], xq = vq[i];
                    vp[i] = c * xp - s * xq;
                    vq[i] = s * xp + c * xq;
                }
            }
        }
        if (!rotated) converged = true;
    }
    if (!converged) throw std::runtime_error("svd: Jacobi sweeps did not converge");

    std::vector<double> sig(n);
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        const double* cj = a.data() + static_cast<size_t>(j) * m;
        for (int i = 0; i < m; ++i) acc += cj[i] * cj[i];
        sig[j] = std::sqrt(acc);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sig[x] > sig[y]; });

    const double sigma_max = sig.empty() ? 0.0 : sig[order[0]];
    const double tiny = sigma_max * 1e-14;

    std::vector<double> u_cols(static_cast<size_t>(m) * n, 0.0);
    std::vector<double> v_cols(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> sigma_sorted(n);
    std::vector<int> needs_completion;
    for (int k = 0; k < n; ++k) {
        const int j = order[k];
        sigma_sorted[k] = sig[j];
        for (int i = 0; i < n; ++i)
            v_cols[static_cast<size_t>(k) * n + i] = v[static_cast<size_t>(j) * n + i];
        if (sig[j] > tiny && sig[j] > 0.0) {
            const double* cj = a.data() + static_cast<size_t>(j) * m;
            for (int i = 0; i < m; ++i)
                u_cols[static_cast<size_t>(k) * m + i] = cj[i] / sig[j];
        } else {
            needs_completion.push_back(k);
        }
    }
    for (int k : needs_completion) complete_column(u_cols, m, k, k);

    SvdResult r;
    r.u = Matrix(m, n);
    r.v = Matrix(n, n);
    r.sigma.resize(n);
    for (int k = 0; k < n; ++k) {
        r.sigma[k] = static_cast<float>(sigma_sorted[k]);
        for (int i = 0; i < m; ++i)
            r.u.at(i, k) = static_cast<float>(u_cols[static_cast<size_t>(k) * m + i]);
        for (int i = 0; i < n; ++i)
            r.v.at(i, k) = static_cast<float>(v_cols[static_cast<size_t>(k) * n + i]);
    }
    if (transposed) std::swap(r.u, r.v);
    return r;
}

}  // namespace smoe
