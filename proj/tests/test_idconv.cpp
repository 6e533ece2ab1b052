#include <catch2/catch_amalgamated.hpp>

#include "imse/idconv.hpp"

using namespace imse;

namespace {

// Naive per-channel reference over the whole split/convolve/concat block.
Tensor idconv_ref(const Tensor& x, const IdConvWeights& w, const IdConvConfig& cfg) {
    int64_t H = x.shape[1], W = x.shape[2];
    Tensor out({cfg.channels, H, W});
    auto conv_one = [&](int64_t xc, int64_t oc, const Tensor& ker, int64_t kc,
                        int64_t ph, int64_t pw) {
        int64_t kh = ker.shape[1], kw = ker.shape[2];
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int64_t a = 0; a < kh; ++a)
                    for (int64_t b = 0; b < kw; ++b) {
                        int64_t si = i + a - ph, sj = j + b - pw;
                        if (si >= 0 && si < H && sj >= 0 && sj < W)
                            acc += ker(kc, a, b) * x(xc, si, sj);
                    }
                out(oc, i, j) = acc;
            }
    };
    int64_t c = 0;
    for (int64_t g = 0; g < cfg.split[0]; ++g, ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) out(c, i, j) = x(c, i, j);
    for (int64_t g = 0; g < cfg.split[1]; ++g, ++c)
        conv_one(c, c, w.w_square, g, (cfg.square_kernel - 1) / 2, (cfg.square_kernel - 1) / 2);
    for (int64_t g = 0; g < cfg.split[2]; ++g, ++c)
        conv_one(c, c, w.w_hband, g, 0, (cfg.band_kernel - 1) / 2);
    for (int64_t g = 0; g < cfg.split[3]; ++g, ++c)
        conv_one(c, c, w.w_vband, g, (cfg.band_kernel - 1) / 2, 0);
    return out;
}

} // namespace

TEST_CASE("equal split and validation") {
    IdConvConfig c16 = IdConvConfig::equal_split(16);
    REQUIRE(c16.split == std::array<int64_t, 4>{4, 4, 4, 4});

    IdConvConfig c6 = IdConvConfig::equal_split(6);
    REQUIRE(c6.split == std::array<int64_t, 4>{3, 1, 1, 1});

    IdConvConfig bad = c16;
    bad.split[2] = 5;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    IdConvConfig even = c16;
    even.band_kernel = 10;
    REQUIRE_THROWS_AS(even.validate(), std::invalid_argument);
}

TEST_CASE("split/concat round trip") {
    Rng rng(3);
    Tensor x = rand_init({16, 5, 7}, rng, 1.0);
    IdConvConfig cfg = IdConvConfig::equal_split(16);
    std::array<Tensor, 4> parts = split_channels(x, cfg);
    for (int i = 0; i < 4; ++i) REQUIRE(parts[i].shape[0] == 4);
    Tensor back = concat_channels(parts, cfg, 5, 7);
    REQUIRE(back.data == x.data);

    // degenerate split: everything identity
    IdConvConfig ident;
    ident.channels = 16;
    ident.split = {16, 0, 0, 0};
    std::array<Tensor, 4> only = split_channels(x, ident);
    REQUIRE(only[0].data == x.data);
    REQUIRE(only[1].numel() == 0);

    Tensor wrong({8, 5, 7});
    REQUIRE_THROWS_AS(split_channels(wrong, cfg), std::invalid_argument);
}

TEST_CASE("center-delta kernels make the block an identity") {
    Rng rng(7);
    IdConvConfig cfg = IdConvConfig::equal_split(8);
    Tensor x = rand_init({8, 6, 9}, rng, 1.0);
    IdConvWeights w;
    w.w_square = Tensor({2, 3, 3});
    w.w_hband = Tensor({2, 1, 11});
    w.w_vband = Tensor({2, 11, 1});
    for (int64_t g = 0; g < 2; ++g) {
        w.w_square(g, 1, 1) = 1.0;
        w.w_hband(g, 0, 5) = 1.0;
        w.w_vband(g, 5, 0) = 1.0;
    }
    Tensor y = idconv_forward(x, w, cfg);
    REQUIRE(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("vertical band smears an impulse along the frequency axis") {
    IdConvConfig cfg;
    cfg.channels = 1;
    cfg.split = {0, 0, 0, 1};
    Tensor x({1, 15, 6});
    x(0, 7, 3) = 1.0;
    IdConvWeights w;
    w.w_vband = Tensor({1, 11, 1}, 1.0);
    Tensor y = idconv_forward(x, w, cfg);
    int ones = 0;
    for (int64_t h = 0; h < 15; ++h)
        for (int64_t t = 0; t < 6; ++t) {
            if (t == 3 && h >= 2 && h <= 12) {
                REQUIRE(y(0, h, t) == 1.0);
                ++ones;
            } else {
                REQUIRE(y(0, h, t) == 0.0);
            }
        }
    REQUIRE(ones == 11);
}

TEST_CASE("forward matches the naive loop reference") {
    Rng rng(11);
    IdConvConfig cfg = IdConvConfig::equal_split(8);
    Tensor x = rand_init({8, 7, 12}, rng, 1.0);
    IdConvWeights w = IdConvWeights::init(cfg, rng);
    REQUIRE(max_abs_diff(idconv_forward(x, w, cfg), idconv_ref(x, w, cfg)) <= 1e-12);
    REQUIRE(idconv_forward(x, w, cfg).shape == x.shape);
}

TEST_CASE("branch locality") {
    Rng rng(13);
    IdConvConfig cfg = IdConvConfig::equal_split(8);
    Tensor x = rand_init({8, 6, 6}, rng, 1.0);
    IdConvWeights w = IdConvWeights::init(cfg, rng);
    Tensor base = idconv_forward(x, w, cfg);

    // perturb one channel of group 3 (the 1xK branch occupies channels 4..5)
    Tensor xp = x;
    xp(4, 2, 2) += 0.5;
    Tensor bumped = idconv_forward(xp, w, cfg);
    for (int64_t c = 0; c < 8; ++c) {
        double d = 0.0;
        for (int64_t i = 0; i < 6; ++i)
            for (int64_t j = 0; j < 6; ++j) d = std::max(d, std::fabs(bumped(c, i, j) - base(c, i, j)));
        if (c == 4) {
            REQUIRE(d > 0.0);
        } else {
            REQUIRE(d == 0.0);
        }
    }
}

TEST_CASE("strip branches are translation-equivariant along their free axis") {
    Rng rng(17);
    IdConvConfig hcfg;
    hcfg.channels = 1;
    hcfg.split = {0, 0, 1, 0};
    IdConvWeights hw;
    hw.w_hband = rand_init({1, 1, 11}, rng, 1.0);

    Tensor x = rand_init({1, 9, 14}, rng, 1.0);
    Tensor shifted({1, 9, 14});
    for (int64_t h = 0; h < 8; ++h)
        for (int64_t t = 0; t < 14; ++t) shifted(0, h + 1, t) = x(0, h, t);

    Tensor y = idconv_forward(x, hw, hcfg);
    Tensor ys = idconv_forward(shifted, hw, hcfg);
    // the 1xK kernel has no frequency extent: shifting input rows shifts output rows exactly
    for (int64_t h = 0; h < 8; ++h)
        for (int64_t t = 0; t < 14; ++t)
            REQUIRE(ys(0, h + 1, t) == Catch::Approx(y(0, h, t)).margin(1e-15));

    IdConvConfig vcfg;
    vcfg.channels = 1;
    vcfg.split = {0, 0, 0, 1};
    IdConvWeights vw;
    vw.w_vband = rand_init({1, 11, 1}, rng, 1.0);
    Tensor tshift({1, 9, 14});
    for (int64_t h = 0; h < 9; ++h)
        for (int64_t t = 0; t < 13; ++t) tshift(0, h, t + 1) = x(0, h, t);
    Tensor yv = idconv_forward(x, vw, vcfg);
    Tensor yvs = idconv_forward(tshift, vw, vcfg);
    for (int64_t h = 0; h < 9; ++h)
        for (int64_t t = 0; t < 13; ++t)
            REQUIRE(yvs(0, h, t + 1) == Catch::Approx(yv(0, h, t)).margin(1e-15));
}

TEST_CASE("parameter counting") {
    REQUIRE(idconv_param_count(IdConvConfig::equal_split(16)) == 124);

    IdConvConfig ident;
    ident.channels = 8;
    ident.split = {8, 0, 0, 0};
    REQUIRE(idconv_param_count(ident) == 0);

    IdConvConfig doubled = IdConvConfig::equal_split(32);
    REQUIRE(idconv_param_count(doubled) == 2 * idconv_param_count(IdConvConfig::equal_split(16)));
}

TEST_CASE("backward: zero cotangent, identity passthrough, finite differences") {
    Rng rng(23);
    IdConvConfig cfg = IdConvConfig::equal_split(4);
    Tensor x = rand_init({4, 6, 6}, rng, 1.0);
    IdConvWeights w = IdConvWeights::init(cfg, rng);

    IdConvGrads gz = idconv_backward(x, w, cfg, Tensor({4, 6, 6}));
    for (double v : gz.dx.data) REQUIRE(v == 0.0);
    for (double v : gz.dw_square.data) REQUIRE(v == 0.0);

    Tensor dy = rand_init({4, 6, 6}, rng, 1.0);
    IdConvGrads g = idconv_backward(x, w, cfg, dy);
    // identity branch slice of dX equals the matching dY slice exactly
    for (int64_t i = 0; i < 6; ++i)
        for (int64_t j = 0; j < 6; ++j) REQUIRE(g.dx(0, i, j) == dy(0, i, j));

    auto loss = [&](const Tensor& xx, const IdConvWeights& ww) {
        Tensor y = idconv_forward(xx, ww, cfg);
        double acc = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += dy(i) * y(i);
        return acc;
    };
    const double h = 1e-5;
    double worst = 0.0;
    auto rel = [](double a, double b) {
        return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
    };
    for (int64_t i = 0; i < x.numel(); ++i) {
        double keep = x(i);
        x(i) = keep + h;
        double up = loss(x, w);
        x(i) = keep - h;
        double dn = loss(x, w);
        x(i) = keep;
        worst = std::max(worst, rel(g.dx(i), (up - dn) / (2.0 * h)));
    }
    for (auto [wt, gt] : {std::pair{&w.w_square, &g.dw_square},
                          std::pair{&w.w_hband, &g.dw_hband},
                          std::pair{&w.w_vband, &g.dw_vband}}) {
        for (int64_t i = 0; i < wt->numel(); ++i) {
            double keep = (*wt)(i);
            (*wt)(i) = keep + h;
            double up = loss(x, w);
            (*wt)(i) = keep - h;
            double dn = loss(x, w);
            (*wt)(i) = keep;
            worst = std::max(worst, rel((*gt)(i), (up - dn) / (2.0 * h)));
        }
    }
    REQUIRE(worst <= 1e-4);
}
