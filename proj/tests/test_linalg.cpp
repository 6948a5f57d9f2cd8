#include <doctest.h>

#include <cmath>

#include "eris/linalg.hpp"

using eris::Matrix;

TEST_CASE("matmul hand example") {
    const Matrix a{{1, 2}, {3, 4}};
    const Matrix b{{0}, {1}};
    CHECK(eris::matmul(a, b) == Matrix{{2}, {4}});
}

TEST_CASE("matmul identity and dimension mismatch") {
    const Matrix a{{1, 2}, {3, 4}};
    CHECK(eris::matmul(Matrix::identity(2), a) == a);
    CHECK_THROWS_AS(eris::matmul(Matrix(2, 3), Matrix(2, 2)), eris::DimensionError);
}

TEST_CASE("transposed products agree with explicit transposes") {
    eris::Rng rng(3);
    const Matrix a = eris::sample_normal(rng, 5, 4, 1.0);
    const Matrix b = eris::sample_normal(rng, 5, 3, 1.0);
    const Matrix c = eris::sample_normal(rng, 6, 4, 1.0);
    const Matrix tn = eris::matmul_tn(a, b);
    const Matrix tn_ref = eris::matmul(a.transposed(), b);
    const Matrix nt = eris::matmul_nt(a, c);
    const Matrix nt_ref = eris::matmul(a, c.transposed());
    for (std::size_t i = 0; i < tn.size(); ++i) CHECK(tn.data()[i] == doctest::Approx(tn_ref.data()[i]).epsilon(1e-14));
    for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt.data()[i] == doctest::Approx(nt_ref.data()[i]).epsilon(1e-14));
}

TEST_CASE("matmul is associative on random triples") {
    eris::Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = eris::sample_normal(rng, 4, 5, 1.0);
        const Matrix b = eris::sample_normal(rng, 5, 3, 1.0);
        const Matrix c = eris::sample_normal(rng, 3, 6, 1.0);
        const Matrix l = eris::matmul(eris::matmul(a, b), c);
        const Matrix r = eris::matmul(a, eris::matmul(b, c));
        const double rel = eris::frob_norm(l - r) / eris::frob_norm(l);
        CHECK(rel <= 1e-10);
    }
}

TEST_CASE("frobenius norms") {
    CHECK(eris::frob_norm_sq(Matrix(3, 2)) == 0.0);
    CHECK(eris::frob_norm_sq(Matrix::identity(2)) == 2.0);
    CHECK(eris::frob_norm_sq(Matrix{{1, 2}, {3, 4}}) == 30.0);
    CHECK(eris::frob_dot(Matrix{{1, 2}}, Matrix{{3, 4}}) == 11.0);

    eris::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix m = eris::sample_normal(rng, 3, 3, 1.0);
        CHECK(eris::frob_norm_sq(m) > 0.0);
    }
}

TEST_CASE("sample_normal determinism, variance and contract") {
    eris::Rng r1(42), r2(42);
    CHECK(eris::sample_normal(r1, 10, 10, 1.0) == eris::sample_normal(r2, 10, 10, 1.0));

    eris::Rng rng(9);
    const Matrix m = eris::sample_normal(rng, 100, 100, 0.01);
    double mean = 0.0;
    for (double v : m.data()) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0.0;
    for (double v : m.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m.size() - 1);
    CHECK(std::abs(var - 1e-4) <= 0.2 * 1e-4);

    CHECK_THROWS(eris::sample_normal(rng, 2, 2, -1.0));
}

TEST_CASE("rng streams") {
    eris::Rng a(1);
    const eris::Rng child = a.split(7);
    const auto before = a.counter();
    (void)a.split(8);
    CHECK(a.counter() == before);

    eris::Rng c1 = child, c2 = a.split(7);
    for (int i = 0; i < 100; ++i) CHECK(c1.next_u64() == c2.next_u64());

    eris::Rng x = a.split(1), y = a.split(2);
    int same = 0;
    for (int i = 0; i < 100; ++i) same += x.next_u64() == y.next_u64();
    CHECK(same == 0);

    eris::Rng u(77);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        CHECK(u.below(5) < 5);
    }
}

TEST_CASE("elementwise operators check shapes") {
    Matrix a{{1, 2}};
    CHECK_THROWS_AS(a += Matrix(2, 1), eris::DimensionError);
    CHECK((a + a) == Matrix{{2, 4}});
    CHECK((2.0 * a) == Matrix{{2, 4}});
    CHECK((a - a) == Matrix(1, 2));
}
