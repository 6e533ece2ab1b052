#pragma once

#include "imse/tensor.hpp"

namespace imse {

// Amplitude-aware linear attention. Scores use strictly positive kernel
// features u = phi(x) and per-query scalars
//
//   s     = phi(q_i) . sum_m phi(k_m)
//   beta  = 1 + 1/s
//   gamma = s / N
//   A_ij  = beta * phi(q_i).phi(k_j) - gamma
//
// Each score row sums to exactly beta*s - N*gamma = 1, so the weights stay
// row-stochastic while growing sharper with the query magnitude. The value
// aggregation factors through sum_j phi(k_j)^T v_j and sum_j v_j, giving an
// O(N) path that never forms the NxN matrix.

/// Kernel feature map: x+1 for x >= 0, exp(x) below; strictly positive.
inline double phi_scalar(double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); }

/// d/dx of phi_scalar; continuous at 0.
inline double phi_grad_scalar(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

inline Tensor phi(const Tensor& x) { return elementwise(x, phi_scalar); }
inline Tensor phi_grad(const Tensor& x) { return elementwise(x, phi_grad_scalar); }

// Lower clamp for the query/key coupling scalar. phi > 0 makes s > 0 in
// exact arithmetic; the clamp keeps 1/s finite if long sequences of very
// negative logits underflow.
inline constexpr double kMalaScalarFloor = 1e-6;

struct MalaContext {
    Tensor kv;   // [d x dv]  sum_j phi(k_j)^T v_j
    Tensor vsum; // [dv]      sum_j v_j
    Tensor ksum; // [d]       sum_m phi(k_m)
};

namespace detail {

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw std::invalid_argument("mala: Q, K, V must be rank-2");
    if (q.shape[1] != k.shape[1])
        throw std::invalid_argument("mala: Q " + shape_str(q.shape) + " and K " +
                                    shape_str(k.shape) + " disagree on head dim");
    if (k.shape[0] != v.shape[0])
        throw std::invalid_argument("mala: K " + shape_str(k.shape) + " and V " +
                                    shape_str(v.shape) + " disagree on sequence length");
    if (q.shape[0] == 0 || k.shape[0] == 0)
        throw std::invalid_argument("mala: empty sequence");
}

} // namespace detail

inline MalaContext mala_context(const Tensor& k, const Tensor& v) {
    if (k.rank() != 2 || v.rank() != 2 || k.shape[0] != v.shape[0])
        throw std::invalid_argument("mala_context: K " + shape_str(k.shape) + " vs V " +
                                    shape_str(v.shape));
    int64_t n = k.shape[0], d = k.shape[1], dv = v.shape[1];
    MalaContext ctx{Tensor({d, dv}), Tensor({dv}), Tensor({d})};
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t a = 0; a < d; ++a) {
            double u = phi_scalar(k(j, a));
            ctx.ksum(a) += u;
            for (int64_t b = 0; b < dv; ++b) ctx.kv(a, b) += u * v(j, b);
        }
        for (int64_t b = 0; b < dv; ++b) ctx.vsum(b) += v(j, b);
    }
    return ctx;
}

struct MalaQuadraticResult {
    Tensor y;    // [N x dv]
    Tensor attn; // [N x N], row-stochastic
};

/// Reference path: materializes the full attention matrix (Eq. by Eq.),
/// O(N^2) time and memory. Kept in the library as the documentation-grade
/// oracle for the linear path.
inline MalaQuadraticResult mala_quadratic(const Tensor& q, const Tensor& k, const Tensor& v) {
    detail::check_qkv(q, k, v);
    int64_t n = q.shape[0], m = k.shape[0], d = q.shape[1], dv = v.shape[1];
    Tensor pq = phi(q), pk = phi(k);
    Tensor ksum = reduce_sum(pk, 0);

    MalaQuadraticResult res{Tensor({n, dv}), Tensor({n, m})};
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t a = 0; a < d; ++a) s += pq(i, a) * ksum(a);
        s = std::max(s, kMalaScalarFloor);
        double beta = 1.0 + 1.0 / s;
        double gamma = s / static_cast<double>(m);
        for (int64_t j = 0; j < m; ++j) {
            double score = 0.0;
            for (int64_t a = 0; a < d; ++a) score += pq(i, a) * pk(j, a);
            double w = beta * score - gamma;
            res.attn(i, j) = w;
            for (int64_t b = 0; b < dv; ++b) res.y(i, b) += w * v(j, b);
        }
    }
    return res;
}

/// Same arithmetic as mala_quadratic's Y but without storing the attention
/// matrix; O(N^2) time, O(N) memory. Used as the quadratic-mode timing
/// kernel in benchmarks.
inline Tensor mala_reference_y(const Tensor& q, const Tensor& k, const Tensor& v) {
    detail::check_qkv(q, k, v);
    int64_t n = q.shape[0], m = k.shape[0], d = q.shape[1], dv = v.shape[1];
    Tensor pq = phi(q), pk = phi(k);
    Tensor ksum = reduce_sum(pk, 0);

    Tensor y({n, dv});
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t a = 0; a < d; ++a) s += pq(i, a) * ksum(a);
        s = std::max(s, kMalaScalarFloor);
        double beta = 1.0 + 1.0 / s;
        double gamma = s / static_cast<double>(m);
        double* yrow = &y.data[static_cast<size_t>(i * dv)];
        for (int64_t j = 0; j < m; ++j) {
            double score = 0.0;
            for (int64_t a = 0; a < d; ++a) score += pq(i, a) * pk(j, a);
            double w = beta * score - gamma;
            const double* vrow = &v.data[static_cast<size_t>(j * dv)];
            for (int64_t b = 0; b < dv; ++b) yrow[b] += w * vrow[b];
        }
    }
    return y;
}

/// O(N) path via the precomputed context aggregates:
/// y_i = beta * phi(q_i) KV - gamma * vsum.
inline Tensor mala_linear(const Tensor& q, const Tensor& k, const Tensor& v) {
    detail::check_qkv(q, k, v);
    int64_t n = q.shape[0], m = k.shape[0], d = q.shape[1], dv = v.shape[1];
    MalaContext ctx = mala_context(k, v);

    Tensor y({n, dv});
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        double* yrow = &y.data[static_cast<size_t>(i * dv)];
        for (int64_t a = 0; a < d; ++a) s += phi_scalar(q(i, a)) * ctx.ksum(a);
        s = std::max(s, kMalaScalarFloor);
        double beta = 1.0 + 1.0 / s;
        double gamma = s / static_cast<double>(m);
        for (int64_t a = 0; a < d; ++a) {
            double pa = beta * phi_scalar(q(i, a));
            const double* kvrow = &ctx.kv.data[static_cast<size_t>(a * dv)];
            for (int64_t b = 0; b < dv; ++b) yrow[b] += pa * kvrow[b];
        }
        for (int64_t b = 0; b < dv; ++b) yrow[b] -= gamma * ctx.vsum(b);
    }
    return y;
}

/// Spread of one score row, max_j A_ij - min_j A_ij, with the post-kernel
/// query row scaled by t. Test instrument for the sharpness property: the
/// gap equals (t + 1/s1) * (a_max - a_min) where s1 is the unscaled coupling
/// scalar, so it grows strictly with t whenever key scores are non-constant.
inline double attention_gap(const Tensor& q, const Tensor& k, int64_t query_index, double t) {
    if (t <= 0.0) throw std::invalid_argument("attention_gap: t must be > 0");
    if (q.rank() != 2 || k.rank() != 2 || q.shape[1] != k.shape[1])
        throw std::invalid_argument("attention_gap: Q " + shape_str(q.shape) + " vs K " +
                                    shape_str(k.shape));
    if (query_index < 0 || query_index >= q.shape[0])
        throw std::invalid_argument("attention_gap: query index out of range");
    int64_t m = k.shape[0], d = q.shape[1];
    Tensor pk = phi(k);
    std::vector<double> prow(static_cast<size_t>(d));
    for (int64_t a = 0; a < d; ++a) prow[static_cast<size_t>(a)] = t * phi_scalar(q(query_index, a));

    double s = 0.0;
    for (int64_t j = 0; j < m; ++j)
        for (int64_t a = 0; a < d; ++a) s += prow[static_cast<size_t>(a)] * pk(j, a);
    s = std::max(s, kMalaScalarFloor);
    double beta = 1.0 + 1.0 / s;
    double gamma = s / static_cast<double>(m);

    double lo = 0.0, hi = 0.0;
    for (int64_t j = 0; j < m; ++j) {
        double score = 0.0;
        for (int64_t a = 0; a < d; ++a) score += prow[static_cast<size_t>(a)] * pk(j, a);
        double w = beta * score - gamma;
        if (j == 0) { lo = hi = w; }
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    return hi - lo;
}

struct MalaGrads {
    Tensor dq, dk, dv;
};

/// Analytic gradients of the linear-path forward. Derivation sketch, with
/// P = phi(Q), U = phi(K), KV = U^T V, g_i = dY_i:
///   dL/ds_i   = -(g_i . P_i KV)/s_i^2 - (g_i . vsum)/N
///   dP_i      = beta_i KV g_i + (dL/ds_i) ksum
///   dU        = V Gkv^T + 1 (sum_i dL/ds_i P_i)^T,  Gkv = sum_i beta_i P_i g_i^T
///   dV        = U Gkv - 1 (sum_i gamma_i g_i)^T
/// then dQ = dP * phi'(Q), dK = dU * phi'(K). Same asymptotic cost as the
/// O(N) forward. Gradients flow through beta and gamma in full.
inline MalaGrads mala_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                               const Tensor& dy) {
    detail::check_qkv(q, k, v);
    int64_t n = q.shape[0], m = k.shape[0], d = q.shape[1], dv = v.shape[1];
    if (dy.rank() != 2 || dy.shape[0] != n || dy.shape[1] != dv)
        throw std::invalid_argument("mala_backward: dY " + shape_str(dy.shape) +
                                    " does not match output [" + std::to_string(n) + "x" +
                                    std::to_string(dv) + "]");

    Tensor pq = phi(q), pk = phi(k);
    MalaContext ctx = mala_context(k, v);

    Tensor dp({n, d});
    Tensor gkv({d, dv});      // sum_i beta_i * outer(P_i, g_i)
    Tensor g_ksum({d});       // sum_i sigma_i * P_i
    Tensor g_vsum({dv});      // sum_i (-gamma_i) * g_i

    for (int64_t i = 0; i < n; ++i) {
        const double* prow = &pq.data[static_cast<size_t>(i * d)];
        const double* grow = &dy.data[static_cast<size_t>(i * dv)];

        double s_raw = 0.0;
        for (int64_t a = 0; a < d; ++a) s_raw += prow[a] * ctx.ksum(a);
        bool clamped = s_raw < kMalaScalarFloor;
        double s = clamped ? kMalaScalarFloor : s_raw;
        double beta = 1.0 + 1.0 / s;
        double gamma = s / static_cast<double>(m);

        // c_i = P_i KV, w = g.c, z = g.vsum
        double w = 0.0;
        for (int64_t a = 0; a < d; ++a) {
            const double* kvrow = &ctx.kv.data[static_cast<size_t>(a * dv)];
            double dot = 0.0;
            for (int64_t b = 0; b < dv; ++b) dot += grow[b] * kvrow[b];
            w += prow[a] * dot;
            // accumulate Gkv and the beta*KV*g part of dP in one pass
            dp(i, a) = beta * dot;
            for (int64_t b = 0; b < dv; ++b) gkv(a, b) += beta * prow[a] * grow[b];
        }
        double z = 0.0;
        for (int64_t b = 0; b < dv; ++b) z += grow[b] * ctx.vsum(b);

        double sigma = clamped ? 0.0 : (-w / (s * s) - z / static_cast<double>(m));
        for (int64_t a = 0; a < d; ++a) {
            dp(i, a) += sigma * ctx.ksum(a);
            g_ksum(a) += sigma * prow[a];
        }
        for (int64_t b = 0; b < dv; ++b) g_vsum(b) += -gamma * grow[b];
    }

    MalaGrads out{Tensor({n, d}), Tensor({m, d}), Tensor({m, dv})};
    for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d; ++a) out.dq(i, a) = dp(i, a) * phi_grad_scalar(q(i, a));

    for (int64_t j = 0; j < m; ++j) {
        for (int64_t a = 0; a < d; ++a) {
            double du = g_ksum(a);
            const double* kvg = &gkv.data[static_cast<size_t>(a * dv)];
            const double* vrow = &v.data[static_cast<size_t>(j * dv)];
            for (int64_t b = 0; b < dv; ++b) du += kvg[b] * vrow[b];
            out.dk(j, a) = du * phi_grad_scalar(k(j, a));
        }
        for (int64_t b = 0; b < dv; ++b) {
            double acc = g_vsum(b);
            for (int64_t a = 0; a < d; ++a) acc += pk(j, a) * gkv(a, b);
            out.dv(j, b) = acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head wrapper: shared projections, per-head linear-path attention,
// concat, output projection. No biases on the projections.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
    Tensor out({x.shape[0], c1 - c0});
    for (int64_t i = 0; i < x.shape[0]; ++i)
        for (int64_t j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    return out;
}

inline void put_cols(Tensor& dst, const Tensor& src, int64_t c0) {
    for (int64_t i = 0; i < src.shape[0]; ++i)
        for (int64_t j = 0; j < src.shape[1]; ++j) dst(i, c0 + j) = src(i, j);
}

} // namespace detail

struct MultiheadMalaCache {
    Tensor x, qf, kf, vf, concat;
};

struct MultiheadMala {
    int64_t dim = 0;
    int64_t heads = 1;
    Tensor wq, wk, wv, wo; // [D x D]
    Tensor gwq, gwk, gwv, gwo;

    MultiheadMala() = default;
    MultiheadMala(int64_t d, int64_t h, Rng& rng) : dim(d), heads(h) {
        if (h < 1 || d % h != 0)
            throw std::invalid_argument("multihead_mala: dim " + std::to_string(d) +
                                        " not divisible by heads " + std::to_string(h));
        double sc = 1.0 / std::sqrt(static_cast<double>(d));
        wq = rand_init({d, d}, rng, sc);
        wk = rand_init({d, d}, rng, sc);
        wv = rand_init({d, d}, rng, sc);
        wo = rand_init({d, d}, rng, sc);
        zero_grads();
    }

    void zero_grads() {
        gwq = Tensor({dim, dim});
        gwk = Tensor({dim, dim});
        gwv = Tensor({dim, dim});
        gwo = Tensor({dim, dim});
    }

    int64_t param_count() const { return 4 * dim * dim; }

    Tensor forward(const Tensor& x, MultiheadMalaCache* cache = nullptr) const {
        if (x.rank() != 2 || x.shape[1] != dim)
            throw std::invalid_argument("multihead_mala: input " + shape_str(x.shape) +
                                        " does not match dim " + std::to_string(dim));
        Tensor qf = matmul(x, wq), kf = matmul(x, wk), vf = matmul(x, wv);
        int64_t hd = dim / heads;
        Tensor concat({x.shape[0], dim});
        for (int64_t h = 0; h < heads; ++h) {
            Tensor yh = mala_linear(detail::slice_cols(qf, h * hd, (h + 1) * hd),
                                    detail::slice_cols(kf, h * hd, (h + 1) * hd),
                                    detail::slice_cols(vf, h * hd, (h + 1) * hd));
            detail::put_cols(concat, yh, h * hd);
        }
        Tensor y = matmul(concat, wo);
        if (cache) *cache = MultiheadMalaCache{x, qf, kf, vf, concat};
        return y;
    }

    /// Accumulates weight gradients; returns dL/dx.
    Tensor backward(const Tensor& dy, const MultiheadMalaCache& c) {
        Tensor dconcat = matmul(dy, transpose(wo));
        add_inplace(gwo, matmul(transpose(c.concat), dy));

        int64_t hd = dim / heads;
        Tensor dqf({c.x.shape[0], dim}), dkf({c.x.shape[0], dim}), dvf({c.x.shape[0], dim});
        for (int64_t h = 0; h < heads; ++h) {
            MalaGrads g = mala_backward(detail::slice_cols(c.qf, h * hd, (h + 1) * hd),
                                        detail::slice_cols(c.kf, h * hd, (h + 1) * hd),
                                        detail::slice_cols(c.vf, h * hd, (h + 1) * hd),
                                        detail::slice_cols(dconcat, h * hd, (h + 1) * hd));
            detail::put_cols(dqf, g.dq, h * hd);
            detail::put_cols(dkf, g.dk, h * hd);
            detail::put_cols(dvf, g.dv, h * hd);
        }
        add_inplace(gwq, matmul(transpose(c.x), dqf));
        add_inplace(gwk, matmul(transpose(c.x), dkf));
        add_inplace(gwv, matmul(transpose(c.x), dvf));

        Tensor dx = matmul(dqf, transpose(wq));
        add_inplace(dx, matmul(dkf, transpose(wk)));
        add_inplace(dx, matmul(dvf, transpose(wv)));
        return dx;
    }
};

} // namespace imse
