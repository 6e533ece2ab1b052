#include <catch2/catch_amalgamated.hpp>

#include "imse/mala.hpp"

using namespace imse;

namespace {

// Hand example used throughout: phi(Q)=[2], phi(K)=[1,3], V=[1,-1].
// s=8, beta=1.125, gamma=4, A=[-1.75, 2.75], Y=-4.5.
struct HandCase {
    Tensor q{std::vector<int64_t>{1, 1}};
    Tensor k{std::vector<int64_t>{2, 1}};
    Tensor v{std::vector<int64_t>{2, 1}};
    HandCase() {
        q(0, 0) = 1.0; // phi(1) = 2
        k(0, 0) = 0.0; // phi(0) = 1
        k(1, 0) = 2.0; // phi(2) = 3
        v(0, 0) = 1.0;
        v(1, 0) = -1.0;
    }
};

double fd_rel_err(double analytic, double numeric) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
}

// Central finite differences of L(Q,K,V) = sum(G .* Y(Q,K,V)) against
// mala_backward, coordinate by coordinate.
double fd_check_mala(int64_t n, int64_t d, int64_t dv, uint64_t seed) {
    Rng rng(seed);
    Tensor q = rand_init({n, d}, rng, 1.0);
    Tensor k = rand_init({n, d}, rng, 1.0);
    Tensor v = rand_init({n, dv}, rng, 1.0);
    Tensor g = rand_init({n, dv}, rng, 1.0);

    auto loss = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
        Tensor y = mala_linear(qq, kk, vv);
        double acc = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += g(i) * y(i);
        return acc;
    };

    MalaGrads grads = mala_backward(q, k, v, g);
    const double h = 1e-5;
    double worst = 0.0;
    auto probe = [&](Tensor& t, const Tensor& analytic) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            double keep = t(i);
            t(i) = keep + h;
            double up = loss(q, k, v);
            t(i) = keep - h;
            double dn = loss(q, k, v);
            t(i) = keep;
            worst = std::max(worst, fd_rel_err(analytic(i), (up - dn) / (2.0 * h)));
        }
    };
    probe(q, grads.dq);
    probe(k, grads.dk);
    probe(v, grads.dv);
    return worst;
}

} // namespace

TEST_CASE("phi closed-form values") {
    Tensor x({3});
    x(0) = 0.0; x(1) = 1.0; x(2) = -1.0;
    Tensor y = phi(x);
    REQUIRE(y(0) == 1.0);
    REQUIRE(y(1) == 2.0);
    REQUIRE(y(2) == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
    for (double v : y.data) REQUIRE(v > 0.0);
}

TEST_CASE("single-key weight is algebraically forced to 1") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor q = rand_init({1, 3}, rng, 2.0);
        Tensor k = rand_init({1, 3}, rng, 2.0);
        Tensor v = rand_init({1, 2}, rng, 2.0);
        MalaQuadraticResult r = mala_quadratic(q, k, v);
        REQUIRE(r.attn(0, 0) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(max_abs_diff(r.y, v) <= 1e-12);
    }
}

TEST_CASE("hand example: scores and output") {
    HandCase hc;
    MalaQuadraticResult r = mala_quadratic(hc.q, hc.k, hc.v);
    REQUIRE(r.attn(0, 0) == Catch::Approx(-1.75).margin(1e-12));
    REQUIRE(r.attn(0, 1) == Catch::Approx(2.75).margin(1e-12));
    REQUIRE(r.y(0, 0) == Catch::Approx(-4.5).margin(1e-12));

    Tensor ylin = mala_linear(hc.q, hc.k, hc.v);
    REQUIRE(ylin(0, 0) == Catch::Approx(-4.5).margin(1e-12));
}

TEST_CASE("score rows sum to one") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        int64_t n = 1 + rng.below(32);
        int64_t d = 1 + rng.below(6);
        int64_t dv = 1 + rng.below(6);
        Tensor q = rand_init({n, d}, rng, 2.0);
        Tensor k = rand_init({n, d}, rng, 2.0);
        Tensor v = rand_init({n, dv}, rng, 2.0);
        MalaQuadraticResult r = mala_quadratic(q, k, v);
        for (int64_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (int64_t j = 0; j < n; ++j) row += r.attn(i, j);
            REQUIRE(row == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("context aggregates match summation loop") {
    Rng rng(31);
    Tensor k = rand_init({16, 4}, rng, 1.5);
    Tensor v = rand_init({16, 3}, rng, 1.5);
    MalaContext ctx = mala_context(k, v);
    for (int64_t a = 0; a < 4; ++a) {
        double ks = 0.0;
        for (int64_t j = 0; j < 16; ++j) ks += phi_scalar(k(j, a));
        REQUIRE(std::fabs(ctx.ksum(a) - ks) <= 1e-12);
        REQUIRE(ctx.ksum(a) > 0.0);
        for (int64_t b = 0; b < 3; ++b) {
            double kv = 0.0;
            for (int64_t j = 0; j < 16; ++j) kv += phi_scalar(k(j, a)) * v(j, b);
            REQUIRE(std::fabs(ctx.kv(a, b) - kv) <= 1e-12);
        }
    }

    Tensor vz({4, 2});
    MalaContext zctx = mala_context(rand_init({4, 3}, rng, 1.0), vz);
    for (double x : zctx.kv.data) REQUIRE(x == 0.0);
    for (double x : zctx.vsum.data) REQUIRE(x == 0.0);

    // N=1: kv is the outer product phi(k0)^T v0
    Tensor k1 = rand_init({1, 3}, rng, 1.0);
    Tensor v1 = rand_init({1, 2}, rng, 1.0);
    MalaContext c1 = mala_context(k1, v1);
    for (int64_t a = 0; a < 3; ++a)
        for (int64_t b = 0; b < 2; ++b)
            REQUIRE(c1.kv(a, b) == Catch::Approx(phi_scalar(k1(0, a)) * v1(0, b)).margin(1e-15));
}

TEST_CASE("constant value vector passes through") {
    Rng rng(41);
    Tensor q = rand_init({12, 4}, rng, 1.0);
    Tensor k = rand_init({12, 4}, rng, 1.0);
    Tensor v({12, 3});
    for (int64_t j = 0; j < 12; ++j) { v(j, 0) = 2.5; v(j, 1) = -0.5; v(j, 2) = 7.0; }
    Tensor y = mala_linear(q, k, v);
    for (int64_t i = 0; i < 12; ++i) {
        REQUIRE(y(i, 0) == Catch::Approx(2.5).margin(1e-9));
        REQUIRE(y(i, 1) == Catch::Approx(-0.5).margin(1e-9));
        REQUIRE(y(i, 2) == Catch::Approx(7.0).margin(1e-9));
    }
}

TEST_CASE("linear path equals quadratic oracle") {
    Rng rng(57);
    for (int trial = 0; trial < 10; ++trial) {
        int64_t n = 1 + rng.below(64);
        Tensor q = rand_init({n, 8}, rng, 1.0);
        Tensor k = rand_init({n, 8}, rng, 1.0);
        Tensor v = rand_init({n, 8}, rng, 1.0);
        Tensor yl = mala_linear(q, k, v);
        MalaQuadraticResult r = mala_quadratic(q, k, v);
        REQUIRE(max_rel_diff(yl, r.y) <= 1e-9);
        REQUIRE(max_rel_diff(mala_reference_y(q, k, v), r.y) <= 1e-12);
    }
}

TEST_CASE("empty sequences are rejected at construction") {
    REQUIRE_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
}

TEST_CASE("backward: zero cotangent gives zero gradients") {
    Rng rng(61);
    Tensor q = rand_init({6, 3}, rng, 1.0);
    Tensor k = rand_init({6, 3}, rng, 1.0);
    Tensor v = rand_init({6, 2}, rng, 1.0);
    MalaGrads g = mala_backward(q, k, v, Tensor({6, 2}));
    for (double x : g.dq.data) REQUIRE(x == 0.0);
    for (double x : g.dk.data) REQUIRE(x == 0.0);
    for (double x : g.dv.data) REQUIRE(x == 0.0);
}

TEST_CASE("backward: N=1 value gradient is the cotangent") {
    Rng rng(67);
    Tensor q = rand_init({1, 4}, rng, 1.0);
    Tensor k = rand_init({1, 4}, rng, 1.0);
    Tensor v = rand_init({1, 3}, rng, 1.0);
    Tensor dy = rand_init({1, 3}, rng, 1.0);
    MalaGrads g = mala_backward(q, k, v, dy);
    REQUIRE(max_abs_diff(g.dv, dy) <= 1e-12);
}

TEST_CASE("backward matches central finite differences") {
    REQUIRE(fd_check_mala(8, 4, 4, 101) <= 1e-4);
    REQUIRE(fd_check_mala(5, 3, 2, 202) <= 1e-4);
}

TEST_CASE("attention gap: hand values and scaling") {
    HandCase hc;
    REQUIRE(attention_gap(hc.q, hc.k, 0, 1.0) == Catch::Approx(4.5).margin(1e-12));
    REQUIRE(attention_gap(hc.q, hc.k, 0, 2.0) == Catch::Approx(8.5).margin(1e-12));

    // identical keys -> constant scores -> zero gap
    Tensor k2({3, 1});
    k2(0, 0) = k2(1, 0) = k2(2, 0) = 0.7;
    REQUIRE(attention_gap(hc.q, k2, 0, 1.0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("sharpness: gap follows (t + 1/s1) * score spread") {
    Rng rng(83);
    for (int trial = 0; trial < 20; ++trial) {
        int64_t n = 2 + rng.below(16);
        int64_t d = 1 + rng.below(5);
        Tensor q = rand_init({n, d}, rng, 1.5);
        Tensor k = rand_init({n, d}, rng, 1.5);
        Tensor pq = phi(q), pk = phi(k);

        double s1 = 0.0, amax = -1e300, amin = 1e300;
        for (int64_t j = 0; j < n; ++j) {
            double a = 0.0;
            for (int64_t c = 0; c < d; ++c) a += pq(0, c) * pk(j, c);
            s1 += a;
            amax = std::max(amax, a);
            amin = std::min(amin, a);
        }
        if (amax - amin < 1e-9) continue;

        double prev = 0.0;
        bool first = true;
        for (double t : {0.5, 1.0, 2.0, 4.0}) {
            double gap = attention_gap(q, k, 0, t);
            double predicted = (t + 1.0 / s1) * (amax - amin);
            REQUIRE(gap == Catch::Approx(predicted).epsilon(1e-9));
            if (!first) REQUIRE(gap > prev);
            prev = gap;
            first = false;
        }
    }
}

TEST_CASE("multihead: single head with identity projections is mala_linear") {
    Rng rng(91);
    MultiheadMala mha(4, 1, rng);
    mha.wq.fill(0.0); mha.wk.fill(0.0); mha.wv.fill(0.0); mha.wo.fill(0.0);
    for (int64_t i = 0; i < 4; ++i) {
        mha.wq(i, i) = 1.0;
        mha.wk(i, i) = 1.0;
        mha.wv(i, i) = 1.0;
        mha.wo(i, i) = 1.0;
    }
    Tensor x = rand_init({10, 4}, rng, 1.0);
    Tensor y = mha.forward(x);
    REQUIRE(max_abs_diff(y, mala_linear(x, x, x)) <= 1e-12);
}

TEST_CASE("multihead: output shape contract and head slicing oracle") {
    Rng rng(97);
    MultiheadMala mha(6, 2, rng);
    Tensor x = rand_init({9, 6}, rng, 1.0);
    Tensor y = mha.forward(x);
    REQUIRE(y.shape == x.shape);

    // manual two-head run
    Tensor qf = matmul(x, mha.wq), kf = matmul(x, mha.wk), vf = matmul(x, mha.wv);
    Tensor concat({9, 6});
    for (int64_t h = 0; h < 2; ++h) {
        Tensor yh = mala_linear(detail::slice_cols(qf, h * 3, (h + 1) * 3),
                                detail::slice_cols(kf, h * 3, (h + 1) * 3),
                                detail::slice_cols(vf, h * 3, (h + 1) * 3));
        detail::put_cols(concat, yh, h * 3);
    }
    REQUIRE(max_abs_diff(y, matmul(concat, mha.wo)) <= 1e-12);

    REQUIRE_THROWS_AS(MultiheadMala(6, 4, rng), std::invalid_argument);
}

TEST_CASE("multihead backward matches finite differences") {
    Rng rng(113);
    MultiheadMala mha(4, 2, rng);
    Tensor x = rand_init({6, 4}, rng, 1.0);
    Tensor g = rand_init({6, 4}, rng, 1.0);

    auto loss = [&](const Tensor& xx) {
        Tensor y = mha.forward(xx);
        double acc = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += g(i) * y(i);
        return acc;
    };

    MultiheadMalaCache cache;
    mha.forward(x, &cache);
    mha.zero_grads();
    Tensor dx = mha.backward(g, cache);

    const double h = 1e-5;
    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double keep = x(i);
        x(i) = keep + h;
        double up = loss(x);
        x(i) = keep - h;
        double dn = loss(x);
        x(i) = keep;
        worst = std::max(worst, fd_rel_err(dx(i), (up - dn) / (2.0 * h)));
    }
    // weight gradients, sampled
    for (Tensor* wt : {&mha.wq, &mha.wk, &mha.wv, &mha.wo}) {
        Tensor* gt = wt == &mha.wq ? &mha.gwq : wt == &mha.wk ? &mha.gwk
                     : wt == &mha.wv ? &mha.gwv : &mha.gwo;
        for (int64_t i = 0; i < wt->numel(); i += 3) {
            double keep = (*wt)(i);
            (*wt)(i) = keep + h;
            double up = loss(x);
            (*wt)(i) = keep - h;
            double dn = loss(x);
            (*wt)(i) = keep;
            worst = std::max(worst, fd_rel_err((*gt)(i), (up - dn) / (2.0 * h)));
        }
    }
    REQUIRE(worst <= 1e-4);
}
