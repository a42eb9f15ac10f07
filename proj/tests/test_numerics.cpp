#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "smoe/assignment.hpp"
#include "smoe/matrix.hpp"
#include "smoe/svd.hpp"

using namespace smoe;

TEST_CASE("matmul identity and scalar cases") {
    Matrix a(2, 2);
    a.data = {1, 2, 3, 4};
    const Matrix r = matmul(identity(2), a);
    CHECK(r.data == a.data);

    Matrix row(1, 2);
    row.data = {1, 2};
    Matrix col(2, 1);
    col.data = {3, 4};
    CHECK(matmul(row, col).at(0, 0) == doctest::Approx(11.0));

    Matrix bad(3, 3);
    CHECK_THROWS_AS(matmul(row, bad), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(101);
    const Matrix a = oracle::random_matrix(rng, 5, 4);
    const Matrix b = oracle::random_matrix(rng, 4, 3);
    const Matrix got = matmul(a, b);
    const Matrix want = oracle::matmul_naive(a, b);
    for (size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-6);
}

TEST_CASE("cosine basics and zero-norm guard") {
    const std::vector<float> e1 = {1, 0};
    const std::vector<float> e2 = {0, 1};
    const std::vector<float> zero = {0, 0};
    const std::vector<float> v12 = {1, 2};
    CHECK(cosine(e1, e1) == doctest::Approx(1.0));
    CHECK(cosine(e1, e2) == doctest::Approx(0.0));
    CHECK(cosine(zero, v12) == 0.0);
    const std::vector<float> v123 = {1, 2, 3};
    CHECK_THROWS_AS(cosine(e1, v123), std::invalid_argument);
}

TEST_CASE("cosine is bitwise symmetric") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> u(17), v(17);
        for (auto& x : u) x = static_cast<float>(rng.gaussian());
        for (auto& x : v) x = static_cast<float>(rng.gaussian());
        CHECK(cosine(u, v) == cosine(v, u));
    }
}

TEST_CASE("svd of a diagonal matrix") {
    Matrix m(2, 2);
    m.at(0, 0) = 3.0f;
    m.at(1, 1) = 1.0f;
    const SvdResult r = svd(m);
    CHECK(r.sigma[0] == doctest::Approx(3.0));
    CHECK(r.sigma[1] == doctest::Approx(1.0));
}

TEST_CASE("svd of a rank-1 outer product") {
    Rng rng(13);
    std::vector<float> u(6), v(4);
    for (auto& x : u) x = static_cast<float>(rng.gaussian());
    for (auto& x : v) x = static_cast<float>(rng.gaussian());
    Matrix m(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) m.at(i, j) = u[i] * v[j];
    const SvdResult r = svd(m);
    CHECK(r.sigma[1] <= 1e-6 * r.sigma[0]);
}

TEST_CASE("svd singular values match the Gram-matrix oracle") {
    Rng rng(29);
    const Matrix m = oracle::random_matrix(rng, 6, 4);
    const SvdResult r = svd(m);
    const std::vector<double> want = oracle::singular_values_via_gram(m);
    REQUIRE(r.sigma.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(r.sigma[i] - want[i]) < 1e-5 * (1.0 + want[0]));
}

namespace {

void check_svd_contract(const Matrix& m) {
    const SvdResult r = svd(m);
    // sigma descending and non-negative
    for (size_t i = 0; i + 1 < r.sigma.size(); ++i) CHECK(r.sigma[i] >= r.sigma[i + 1]);
    for (float s : r.sigma) CHECK(s >= 0.0f);
    // reconstruction
    Matrix us = r.u;
    for (int i = 0; i < us.rows; ++i)
        for (int j = 0; j < us.cols; ++j) us.at(i, j) *= r.sigma[j];
    const Matrix rec = matmul(us, transpose(r.v));
    CHECK(oracle::frobenius_diff(rec, m) <= 1e-5 * (1.0 + frobenius_norm(m)));
    // column orthonormality
    for (const Matrix* q : {&r.u, &r.v}) {
        const Matrix g = matmul(transpose(*q), *q);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j)
                CHECK(std::abs(g.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-5);
    }
}

}  // namespace

TEST_CASE("svd contract holds on assorted shapes") {
    Rng rng(31);
    check_svd_contract(oracle::random_matrix(rng, 8, 5));
    check_svd_contract(oracle::random_matrix(rng, 5, 8));
    check_svd_contract(oracle::random_matrix(rng, 7, 7));
    check_svd_contract(Matrix(4, 3));  // zero matrix
    Matrix rank_deficient(6, 4);
    const Matrix f1 = oracle::random_matrix(rng, 6, 1);
    const Matrix f2 = oracle::random_matrix(rng, 1, 4);
    rank_deficient = matmul(f1, f2);
    check_svd_contract(rank_deficient);
}

TEST_CASE("svd rejects non-finite input") {
    Matrix m(2, 2);
    m.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(svd(m), std::invalid_argument);
}

TEST_CASE("assignment on fixed 2x2 cases") {
    Matrix diag(2, 2);
    diag.data = {2, 1, 1, 2};
    Permutation p = solve_assignment(diag);
    CHECK(p.mapping == std::vector<int>{0, 1});
    CHECK(assignment_score(diag, p) == doctest::Approx(4.0));

    Matrix anti(2, 2);
    anti.data = {0, 5, 5, 0};
    p = solve_assignment(anti);
    CHECK(p.mapping == std::vector<int>{1, 0});
    CHECK(assignment_score(anti, p) == doctest::Approx(10.0));

    Matrix rect(2, 3);
    CHECK_THROWS_AS(solve_assignment(rect), std::invalid_argument);
}

TEST_CASE("assignment equals brute force exactly for n <= 7") {
    Rng rng(47);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.eng() % 6);  // 2..7
        const Matrix score = oracle::random_matrix(rng, n, n);
        const Permutation p = solve_assignment(score);
        REQUIRE(is_permutation(p));
        CHECK(assignment_score(score, p) == oracle::assignment_brute_force(score));
    }
}

TEST_CASE("assignment beats the identity permutation") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.eng() % 11);
        const Matrix score = oracle::random_matrix(rng, n, n, 3.0);
        const Permutation p = solve_assignment(score);
        CHECK(assignment_score(score, p) >=
              assignment_score(score, identity_permutation(n)));
    }
}

TEST_CASE("assignment tie-break is the lexicographically smallest mapping") {
    // Constant matrix: every permutation is optimal, identity is smallest.
    Matrix flat(4, 4);
    for (float& v : flat.data) v = 2.5f;
    CHECK(solve_assignment(flat).mapping == std::vector<int>{0, 1, 2, 3});

    // Two tied optima {0->1,1->0} vs {0->0,1->1} at equal score.
    Matrix tied(2, 2);
    tied.data = {1, 1, 1, 1};
    CHECK(solve_assignment(tied).mapping == std::vector<int>{0, 1});
}
