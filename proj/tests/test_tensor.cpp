#include <catch2/catch_amalgamated.hpp>

#include "imse/tensor.hpp"

using namespace imse;

namespace {

// Independent reference: plain triple loop, no reassociation tricks.
Tensor matmul_ref(const Tensor& a, const Tensor& b) {
    int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
            out(i, j) = acc;
        }
    return out;
}

Tensor dwconv2d_ref(const Tensor& x, const Tensor& w, int64_t ph, int64_t pw) {
    int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    int64_t kh = w.shape[1], kw = w.shape[2];
    Tensor out({C, H + 2 * ph - kh + 1, W + 2 * pw - kw + 1});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < out.shape[1]; ++i)
            for (int64_t j = 0; j < out.shape[2]; ++j) {
                double acc = 0.0;
                for (int64_t a = 0; a < kh; ++a)
                    for (int64_t b = 0; b < kw; ++b) {
                        int64_t si = i + a - ph, sj = j + b - pw;
                        if (si >= 0 && si < H && sj >= 0 && sj < W) acc += w(c, a, b) * x(c, si, sj);
                    }
                out(c, i, j) = acc;
            }
    return out;
}

} // namespace

TEST_CASE("tensor construction enforces invariants") {
    Tensor t({2, 3}, 1.5);
    REQUIRE(t.numel() == 6);
    REQUIRE(t(1, 2) == 1.5);
    REQUIRE_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor({-1}), std::invalid_argument);
}

TEST_CASE("matmul identity and hand cases") {
    Tensor eye({2, 2});
    eye(0, 0) = eye(1, 1) = 1.0;
    Tensor a({2, 2});
    a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
    Tensor r = matmul(eye, a);
    REQUIRE(max_abs_diff(r, a) == 0.0);

    Tensor row({1, 2});
    row(0, 0) = 1; row(0, 1) = 2;
    Tensor col({2, 1});
    col(0, 0) = 3; col(1, 0) = 4;
    Tensor prod = matmul(row, col);
    REQUIRE(prod.numel() == 1);
    REQUIRE(prod(0) == 11.0);
}

TEST_CASE("matmul matches triple-loop reference") {
    Rng rng(7);
    Tensor a = rand_init({5, 7}, rng, 1.0);
    Tensor b = rand_init({7, 3}, rng, 1.0);
    REQUIRE(max_abs_diff(matmul(a, b), matmul_ref(a, b)) <= 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3}), b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[2x3]") != std::string::npos);
        REQUIRE(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = rand_init({4, 6}, rng, 1.0);
        Tensor b = rand_init({6, 5}, rng, 1.0);
        Tensor c = rand_init({5, 3}, rng, 1.0);
        Tensor lhs = matmul(matmul(a, b), c);
        Tensor rhs = matmul(a, matmul(b, c));
        REQUIRE(max_rel_diff(lhs, rhs) <= 1e-9);
    }
}

TEST_CASE("dwconv2d delta kernel is identity") {
    Rng rng(3);
    Tensor x = rand_init({2, 4, 5}, rng, 1.0);
    Tensor w({2, 3, 3});
    w(0, 1, 1) = 1.0;
    w(1, 1, 1) = 1.0;
    REQUIRE(max_abs_diff(dwconv2d(x, w, 1, 1), x) == 0.0);
}

TEST_CASE("dwconv2d overlap counting") {
    Tensor x({1, 3, 3}, 1.0);
    Tensor w({1, 3, 3}, 1.0);
    Tensor y = dwconv2d(x, w, 1, 1);
    REQUIRE(y(0, 1, 1) == 9.0);
    REQUIRE(y(0, 0, 0) == 4.0);
    REQUIRE(y(0, 2, 0) == 4.0);
    REQUIRE(y(0, 0, 1) == 6.0);
}

TEST_CASE("dwconv2d matches loop reference") {
    Rng rng(21);
    Tensor x = rand_init({2, 5, 5}, rng, 1.0);
    Tensor w = rand_init({2, 3, 3}, rng, 1.0);
    REQUIRE(max_abs_diff(dwconv2d(x, w, 1, 1), dwconv2d_ref(x, w, 1, 1)) <= 1e-12);

    // strip kernels too
    Tensor ws = rand_init({2, 1, 5}, rng, 1.0);
    REQUIRE(max_abs_diff(dwconv2d(x, ws, 0, 2), dwconv2d_ref(x, ws, 0, 2)) <= 1e-12);
}

TEST_CASE("dwconv2d rejects even kernels") {
    Tensor x({1, 4, 4});
    Tensor w({1, 2, 2});
    REQUIRE_THROWS_AS(dwconv2d(x, w, 0, 0), std::invalid_argument);
}

TEST_CASE("dwconv2d is linear") {
    Rng rng(5);
    Tensor x = rand_init({3, 6, 6}, rng, 1.0);
    Tensor y = rand_init({3, 6, 6}, rng, 1.0);
    Tensor w = rand_init({3, 3, 3}, rng, 1.0);
    Tensor both = dwconv2d(add(x, y), w, 1, 1);
    Tensor sum = add(dwconv2d(x, w, 1, 1), dwconv2d(y, w, 1, 1));
    REQUIRE(max_abs_diff(both, sum) <= 1e-10);
}

TEST_CASE("reduce_sum examples") {
    Tensor a({2, 2});
    a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
    Tensor s0 = reduce_sum(a, 0);
    REQUIRE(s0.shape == std::vector<int64_t>{2});
    REQUIRE(s0(0) == 4.0);
    REQUIRE(s0(1) == 6.0);

    Tensor z({3, 4});
    Tensor sz = reduce_sum(z, 1);
    for (double v : sz.data) REQUIRE(v == 0.0);

    REQUIRE_THROWS_AS(reduce_sum(a, 2), std::invalid_argument);
}

TEST_CASE("reduce_sum matches scalar loop") {
    Rng rng(13);
    Tensor x = rand_init({4, 6}, rng, 2.0);
    Tensor s = reduce_sum(x, 1);
    for (int64_t i = 0; i < 4; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < 6; ++j) acc += x(i, j);
        REQUIRE(s(i) == acc);
    }
}

TEST_CASE("rand_init determinism and spread") {
    Rng a(99), b(99), c(100);
    Tensor ta = rand_init({4, 4}, a, 0.5);
    Tensor tb = rand_init({4, 4}, b, 0.5);
    Tensor tc = rand_init({4, 4}, c, 0.5);
    REQUIRE(ta.data == tb.data);
    REQUIRE(max_abs_diff(ta, tc) > 0.0);
    REQUIRE_THROWS_AS(rand_init({2}, a, 0.0), std::invalid_argument);

    Rng big(7);
    Tensor draws = rand_init({100000}, big, 2.0);
    double mean = 0.0;
    for (double v : draws.data) mean += v;
    mean /= static_cast<double>(draws.numel());
    REQUIRE(std::fabs(mean) <= 0.01 * 2.0);
}

TEST_CASE("kernels are bit-identical across runs") {
    Rng rng(31);
    Tensor a = rand_init({6, 6}, rng, 1.0);
    Tensor b = rand_init({6, 6}, rng, 1.0);
    Tensor m1 = matmul(a, b);
    Tensor m2 = matmul(a, b);
    REQUIRE(m1.data == m2.data);

    Tensor x = rand_init({2, 8, 8}, rng, 1.0);
    Tensor w = rand_init({2, 3, 3}, rng, 1.0);
    REQUIRE(dwconv2d(x, w, 1, 1).data == dwconv2d(x, w, 1, 1).data);
}

TEST_CASE("parallel mode matches sequential") {
    Rng rng(17);
    Tensor x = rand_init({8, 10, 10}, rng, 1.0);
    Tensor w = rand_init({8, 3, 3}, rng, 1.0);
    Tensor seq = dwconv2d(x, w, 1, 1);
    set_parallel(true);
    Tensor par = dwconv2d(x, w, 1, 1);
    set_parallel(false);
    REQUIRE(seq.data == par.data);
}
