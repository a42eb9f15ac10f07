#include "smoe/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace smoe {

namespace {

// Shortest-augmenting-path Hungarian, O(n^3), on the minimization form
// cost(i,j) = -score(i,j). Returns row->col and the dual potentials.
void hungarian(const Matrix& score, std::vector<int>& row_to_col,
               std::vector<double>& u, std::vector<double>& v) {
    const int n = score.rows;
    const double INF = std::numeric_limits<double>::infinity();
    auto cost = [&](int i, int j) { return -static_cast<double>(score.at(i - 1, j - 1)); };

    u.assign(n + 1, 0.0);
    v.assign(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, INF);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    row_to_col.assign(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
}

// Kuhn augmenting path over an adjacency bitmap restricted to free columns.
bool try_augment(int row, const std::vector<std::vector<int>>& adj,
                 const std::vector<char>& col_blocked, std::vector<int>& match_col,
                 std::vector<char>& visited) {
    for (int j : adj[row]) {
        if (col_blocked[j] || visited[j]) continue;
        visited[j] = 1;
        if (match_col[j] < 0 || try_augment(match_col[j], adj, col_blocked, match_col, visited)) {
            match_col[j] = row;
            return true;
        }
    }
    return false;
}

// Can rows first_row..n-1 be perfectly matched into unblocked columns?
bool suffix_matchable(int first_row, int n, const std::vector<std::vector<int>>& adj,
                      const std::vector<char>& col_blocked) {
    std::vector<int> match_col(n, -1);
    for (int r = first_row; r < n; ++r) {
        std::vector<char> visited(n, 0);
        if (!try_augment(r, adj, col_blocked, match_col, visited)) return false;
    }
    return true;
}

}  // namespace

double assignment_score(const Matrix& score, const Permutation& p) {
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) acc += static_cast<double>(score.at(i, p.mapping[i]));
    return acc;
}

Permutation solve_assignment(const Matrix& score) {
    if (score.rows != score.cols)
        throw std::invalid_argument("solve_assignment: score matrix must be square");
    const int n = score.rows;
    Permutation result;
    if (n == 0) return result;

    std::vector<int> base;
    std::vector<double> u, v;
    hungarian(score, base, u, v);

    result.mapping = base;
    if (n > 512) return result;  // refinement matters only at expert-count scale

    // Complementary slackness: every optimal assignment lives on tight edges of
    // the optimal duals. Walk rows in order, taking the smallest tight column
    // that still leaves the remaining rows matchable.
    double scale = 1.0;
    for (float x : score.data) scale = std::max(scale, static_cast<double>(std::abs(x)));
    const double eps = 1e-10 * scale;

    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double rc = -static_cast<double>(score.at(i, j)) - u[i + 1] - v[j + 1];
            if (rc <= eps) adj[i].push_back(j);
        }

    std::vector<int> refined(n, -1);
    std::vector<char> col_blocked(n, 0);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
        ok = false;
        for (int j : adj[i]) {
            if (col_blocked[j]) continue;
            col_blocked[j] = 1;
            if (suffix_matchable(i + 1, n, adj, col_blocked)) {
                refined[i] = j;
                ok = true;
                break;
            }
            col_blocked[j] = 0;
        }
    }
    if (ok) {
        Permutation cand;
        cand.mapping = refined;
        // Guard against a too-loose tightness epsilon.
        if (assignment_score(score, cand) >= assignment_score(score, result) - eps * n)
            result = cand;
    }
    return result;
}

}  // namespace smoe
