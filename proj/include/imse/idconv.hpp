#pragma once

#include <array>

#include "imse/tensor.hpp"

namespace imse {

// Inception-style depthwise embedding. Channels split into four groups:
// identity / square kernel / horizontal band (1xK, along the time axis) /
// vertical band (Kx1, along the frequency axis), convolved depthwise and
// re-concatenated. Feature maps are [C x H x W] with H = frequency bins and
// W = time frames, so the 1xK branch tracks durations and the Kx1 branch
// tracks harmonic stacks. No biases on the depthwise kernels.

struct IdConvConfig {
    int64_t channels = 0;
    std::array<int64_t, 4> split{0, 0, 0, 0}; // identity, square, 1xK, Kx1
    int64_t square_kernel = 3;
    int64_t band_kernel = 11;

    /// C/4 channels per branch; any remainder goes to the identity branch.
    static IdConvConfig equal_split(int64_t channels, int64_t square_kernel = 3,
                                    int64_t band_kernel = 11) {
        IdConvConfig cfg;
        cfg.channels = channels;
        int64_t g = channels / 4;
        cfg.split = {channels - 3 * g, g, g, g};
        cfg.square_kernel = square_kernel;
        cfg.band_kernel = band_kernel;
        return cfg;
    }

    void validate() const {
        int64_t total = split[0] + split[1] + split[2] + split[3];
        if (total != channels)
            throw std::invalid_argument("idconv: split sums to " + std::to_string(total) +
                                        ", expected " + std::to_string(channels));
        for (int64_t g : split)
            if (g < 0) throw std::invalid_argument("idconv: negative group size");
        if (square_kernel < 1 || square_kernel % 2 == 0 || band_kernel < 1 || band_kernel % 2 == 0)
            throw std::invalid_argument("idconv: kernel sizes must be odd and positive");
    }
};

/// Kernel parameters per config: k^2*g2 + K*g3 + K*g4, no biases.
inline int64_t idconv_param_count(const IdConvConfig& cfg) {
    cfg.validate();
    return cfg.square_kernel * cfg.square_kernel * cfg.split[1] +
           cfg.band_kernel * cfg.split[2] + cfg.band_kernel * cfg.split[3];
}

/// Branch kernels; groups of size zero hold an empty tensor.
struct IdConvWeights {
    Tensor w_square; // [g2 x k x k]
    Tensor w_hband;  // [g3 x 1 x K]
    Tensor w_vband;  // [g4 x K x 1]

    static IdConvWeights init(const IdConvConfig& cfg, Rng& rng) {
        cfg.validate();
        IdConvWeights w;
        int64_t k = cfg.square_kernel, K = cfg.band_kernel;
        if (cfg.split[1] > 0) w.w_square = rand_init({cfg.split[1], k, k}, rng, 1.0 / k);
        if (cfg.split[2] > 0) w.w_hband = rand_init({cfg.split[2], 1, K}, rng, 1.0 / std::sqrt((double)K));
        if (cfg.split[3] > 0) w.w_vband = rand_init({cfg.split[3], K, 1}, rng, 1.0 / std::sqrt((double)K));
        return w;
    }
};

namespace detail {

inline Tensor channel_range(const Tensor& x, int64_t c0, int64_t c1) {
    int64_t H = x.shape[1], W = x.shape[2];
    Tensor out({c1 - c0, H, W});
    std::copy(x.data.begin() + static_cast<size_t>(c0 * H * W),
              x.data.begin() + static_cast<size_t>(c1 * H * W), out.data.begin());
    return out;
}

inline void put_channels(Tensor& dst, const Tensor& src, int64_t c0) {
    int64_t H = dst.shape[1], W = dst.shape[2];
    std::copy(src.data.begin(), src.data.end(),
              dst.data.begin() + static_cast<size_t>(c0 * H * W));
}

// gradient of dwconv2d w.r.t. its input: full correlation with the flipped kernel
inline Tensor dwconv2d_grad_input(const Tensor& dy, const Tensor& w, int64_t ph, int64_t pw,
                                  int64_t H, int64_t W) {
    int64_t C = dy.shape[0], kh = w.shape[1], kw = w.shape[2];
    Tensor dx({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < dy.shape[1]; ++i)
            for (int64_t j = 0; j < dy.shape[2]; ++j) {
                double g = dy(c, i, j);
                if (g == 0.0) continue;
                for (int64_t a = 0; a < kh; ++a) {
                    int64_t si = i + a - ph;
                    if (si < 0 || si >= H) continue;
                    for (int64_t b = 0; b < kw; ++b) {
                        int64_t sj = j + b - pw;
                        if (sj < 0 || sj >= W) continue;
                        dx(c, si, sj) += w(c, a, b) * g;
                    }
                }
            }
    return dx;
}

inline Tensor dwconv2d_grad_weights(const Tensor& dy, const Tensor& x, int64_t ph, int64_t pw,
                                    int64_t kh, int64_t kw) {
    int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Tensor dw({C, kh, kw});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < dy.shape[1]; ++i)
            for (int64_t j = 0; j < dy.shape[2]; ++j) {
                double g = dy(c, i, j);
                if (g == 0.0) continue;
                for (int64_t a = 0; a < kh; ++a) {
                    int64_t si = i + a - ph;
                    if (si < 0 || si >= H) continue;
                    for (int64_t b = 0; b < kw; ++b) {
                        int64_t sj = j + b - pw;
                        if (sj < 0 || sj >= W) continue;
                        dw(c, a, b) += x(c, si, sj) * g;
                    }
                }
            }
    return dw;
}

} // namespace detail

/// Contiguous channel groups in config order; concat(split(x)) == x.
/// Empty groups come back as default-constructed tensors.
inline std::array<Tensor, 4> split_channels(const Tensor& x, const IdConvConfig& cfg) {
    cfg.validate();
    if (x.rank() != 3 || x.shape[0] != cfg.channels)
        throw std::invalid_argument("idconv: input " + shape_str(x.shape) +
                                    " does not carry " + std::to_string(cfg.channels) + " channels");
    std::array<Tensor, 4> parts;
    int64_t c = 0;
    for (int i = 0; i < 4; ++i) {
        if (cfg.split[static_cast<size_t>(i)] > 0)
            parts[static_cast<size_t>(i)] =
                detail::channel_range(x, c, c + cfg.split[static_cast<size_t>(i)]);
        c += cfg.split[static_cast<size_t>(i)];
    }
    return parts;
}

inline Tensor concat_channels(const std::array<Tensor, 4>& parts, const IdConvConfig& cfg,
                              int64_t H, int64_t W) {
    Tensor out({cfg.channels, H, W});
    int64_t c = 0;
    for (int i = 0; i < 4; ++i) {
        if (cfg.split[static_cast<size_t>(i)] > 0) {
            detail::put_channels(out, parts[static_cast<size_t>(i)], c);
            c += cfg.split[static_cast<size_t>(i)];
        }
    }
    return out;
}

/// Y = concat(X1, DW_kxk(X2), DW_1xK(X3), DW_Kx1(X4)); spatial and channel
/// shape preserved, branch 1 copied through untouched.
inline Tensor idconv_forward(const Tensor& x, const IdConvWeights& w, const IdConvConfig& cfg) {
    std::array<Tensor, 4> parts = split_channels(x, cfg);
    int64_t H = x.shape[1], W = x.shape[2];
    int64_t k = cfg.square_kernel, K = cfg.band_kernel;
    std::array<Tensor, 4> outs;
    outs[0] = parts[0];
    if (cfg.split[1] > 0) outs[1] = dwconv2d(parts[1], w.w_square, (k - 1) / 2, (k - 1) / 2);
    if (cfg.split[2] > 0) outs[2] = dwconv2d(parts[2], w.w_hband, 0, (K - 1) / 2);
    if (cfg.split[3] > 0) outs[3] = dwconv2d(parts[3], w.w_vband, (K - 1) / 2, 0);
    return concat_channels(outs, cfg, H, W);
}

struct IdConvGrads {
    Tensor dx;
    Tensor dw_square, dw_hband, dw_vband;
};

inline IdConvGrads idconv_backward(const Tensor& x, const IdConvWeights& w,
                                   const IdConvConfig& cfg, const Tensor& dy) {
    if (dy.shape != x.shape)
        throw std::invalid_argument("idconv_backward: dY " + shape_str(dy.shape) +
                                    " vs input " + shape_str(x.shape));
    std::array<Tensor, 4> xs = split_channels(x, cfg);
    std::array<Tensor, 4> gs = split_channels(dy, cfg);
    int64_t H = x.shape[1], W = x.shape[2];
    int64_t k = cfg.square_kernel, K = cfg.band_kernel;

    IdConvGrads out;
    std::array<Tensor, 4> dxs;
    dxs[0] = gs[0]; // identity branch passes the gradient through unchanged
    if (cfg.split[1] > 0) {
        int64_t p = (k - 1) / 2;
        dxs[1] = detail::dwconv2d_grad_input(gs[1], w.w_square, p, p, H, W);
        out.dw_square = detail::dwconv2d_grad_weights(gs[1], xs[1], p, p, k, k);
    }
    if (cfg.split[2] > 0) {
        int64_t p = (K - 1) / 2;
        dxs[2] = detail::dwconv2d_grad_input(gs[2], w.w_hband, 0, p, H, W);
        out.dw_hband = detail::dwconv2d_grad_weights(gs[2], xs[2], 0, p, 1, K);
    }
    if (cfg.split[3] > 0) {
        int64_t p = (K - 1) / 2;
        dxs[3] = detail::dwconv2d_grad_input(gs[3], w.w_vband, p, 0, H, W);
        out.dw_vband = detail::dwconv2d_grad_weights(gs[3], xs[3], p, 0, K, 1);
    }
    out.dx = concat_channels(dxs, cfg, H, W);
    return out;
}

} // namespace imse
