#pragma once

#include "imse/idconv.hpp"
#include "imse/mala.hpp"

// Building blocks for the enhancement network. Every layer follows the same
// pattern: weights plus matching gradient tensors live on the layer, per-call
// activations live in an external cache so forward stays const and can run
// concurrently. backward() consumes the cache, accumulates weight gradients
// and returns the input gradient.

namespace imse {

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

inline double elu_scalar(double x) { return x >= 0.0 ? x : std::exp(x) - 1.0; }
inline double elu_grad_scalar(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

// ---------------------------------------------------------------------------

/// Pointwise (1x1) convolution over [C x H x W] maps, with bias.
struct Conv1x1 {
    Tensor w; // [Cout x Cin]
    Tensor b; // [Cout]
    Tensor gw, gb;

    Conv1x1() = default;
    Conv1x1(int64_t cin, int64_t cout, Rng& rng, bool zero_init = false) {
        if (zero_init) {
            w = Tensor({cout, cin});
            b = Tensor({cout});
        } else {
            w = rand_init({cout, cin}, rng, 1.0 / std::sqrt(static_cast<double>(cin)));
            b = Tensor({cout});
        }
        gw = Tensor({cout, cin});
        gb = Tensor({cout});
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }

    Tensor forward(const Tensor& x, Tensor* cache_x = nullptr) const {
        int64_t cin = w.shape[1], cout = w.shape[0], H = x.shape[1], W = x.shape[2];
        if (x.shape[0] != cin)
            throw std::invalid_argument("conv1x1: input " + shape_str(x.shape) + " vs weight " +
                                        shape_str(w.shape));
        Tensor y({cout, H, W});
        int64_t hw = H * W;
        for (int64_t co = 0; co < cout; ++co) {
            double* yp = &y.data[static_cast<size_t>(co * hw)];
            for (int64_t i = 0; i < hw; ++i) yp[i] = b(co);
            for (int64_t ci = 0; ci < cin; ++ci) {
                double wv = w(co, ci);
                if (wv == 0.0) continue;
                const double* xp = &x.data[static_cast<size_t>(ci * hw)];
                for (int64_t i = 0; i < hw; ++i) yp[i] += wv * xp[i];
            }
        }
        if (cache_x) *cache_x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Tensor& x) {
        int64_t cin = w.shape[1], cout = w.shape[0], H = x.shape[1], W = x.shape[2];
        int64_t hw = H * W;
        Tensor dx({cin, H, W});
        for (int64_t co = 0; co < cout; ++co) {
            const double* gp = &dy.data[static_cast<size_t>(co * hw)];
            double gsum = 0.0;
            for (int64_t i = 0; i < hw; ++i) gsum += gp[i];
            gb(co) += gsum;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xp = &x.data[static_cast<size_t>(ci * hw)];
                double* dxp = &dx.data[static_cast<size_t>(ci * hw)];
                double wv = w(co, ci);
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) {
                    acc += gp[i] * xp[i];
                    dxp[i] += wv * gp[i];
                }
                gw(co, ci) += acc;
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Normalization across the channel axis at every (h, w) position.
struct ChannelNorm {
    Tensor gain, bias; // [C]
    Tensor ggain, gbias;
    static constexpr double kEps = 1e-5;

    ChannelNorm() = default;
    explicit ChannelNorm(int64_t c)
        : gain(Tensor({c}, 1.0)), bias(Tensor({c})), ggain(Tensor({c})), gbias(Tensor({c})) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".gain", &gain, &ggain});
        out.push_back({prefix + ".bias", &bias, &gbias});
    }

    struct Cache {
        Tensor xhat;    // normalized input
        Tensor inv_std; // [H x W]
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
        int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
        Tensor y({C, H, W}), xhat({C, H, W}), inv_std({H, W});
        int64_t hw = H * W;
        for (int64_t p = 0; p < hw; ++p) {
            double mu = 0.0;
            for (int64_t c = 0; c < C; ++c) mu += x.data[static_cast<size_t>(c * hw + p)];
            mu /= static_cast<double>(C);
            double var = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                double d = x.data[static_cast<size_t>(c * hw + p)] - mu;
                var += d * d;
            }
            var /= static_cast<double>(C);
            double is = 1.0 / std::sqrt(var + kEps);
            inv_std.data[static_cast<size_t>(p)] = is;
            for (int64_t c = 0; c < C; ++c) {
                double xh = (x.data[static_cast<size_t>(c * hw + p)] - mu) * is;
                xhat.data[static_cast<size_t>(c * hw + p)] = xh;
                y.data[static_cast<size_t>(c * hw + p)] = xh * gain(c) + bias(c);
            }
        }
        if (cache) *cache = Cache{xhat, inv_std};
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        int64_t C = dy.shape[0], H = dy.shape[1], W = dy.shape[2];
        int64_t hw = H * W;
        Tensor dx({C, H, W});
        for (int64_t p = 0; p < hw; ++p) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                size_t idx = static_cast<size_t>(c * hw + p);
                double dxh = dy.data[idx] * gain(c);
                sum_dxh += dxh;
                sum_dxh_xh += dxh * cc.xhat.data[idx];
                ggain(c) += dy.data[idx] * cc.xhat.data[idx];
                gbias(c) += dy.data[idx];
            }
            double is = cc.inv_std.data[static_cast<size_t>(p)];
            for (int64_t c = 0; c < C; ++c) {
                size_t idx = static_cast<size_t>(c * hw + p);
                double dxh = dy.data[idx] * gain(c);
                dx.data[idx] = is / static_cast<double>(C) *
                               (static_cast<double>(C) * dxh - sum_dxh -
                                cc.xhat.data[idx] * sum_dxh_xh);
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Row-wise layer norm over the feature axis of [N x D] sequences.
struct LayerNorm {
    Tensor gain, bias; // [D]
    Tensor ggain, gbias;
    static constexpr double kEps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int64_t d)
        : gain(Tensor({d}, 1.0)), bias(Tensor({d})), ggain(Tensor({d})), gbias(Tensor({d})) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".gain", &gain, &ggain});
        out.push_back({prefix + ".bias", &bias, &gbias});
    }

    struct Cache {
        Tensor xhat;
        Tensor inv_std; // [N]
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
        int64_t N = x.shape[0], D = x.shape[1];
        Tensor y({N, D}), xhat({N, D}), inv_std({N});
        for (int64_t i = 0; i < N; ++i) {
            double mu = 0.0;
            for (int64_t j = 0; j < D; ++j) mu += x(i, j);
            mu /= static_cast<double>(D);
            double var = 0.0;
            for (int64_t j = 0; j < D; ++j) {
                double d = x(i, j) - mu;
                var += d * d;
            }
            var /= static_cast<double>(D);
            double is = 1.0 / std::sqrt(var + kEps);
            inv_std(i) = is;
            for (int64_t j = 0; j < D; ++j) {
                xhat(i, j) = (x(i, j) - mu) * is;
                y(i, j) = xhat(i, j) * gain(j) + bias(j);
            }
        }
        if (cache) *cache = Cache{xhat, inv_std};
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        int64_t N = dy.shape[0], D = dy.shape[1];
        Tensor dx({N, D});
        for (int64_t i = 0; i < N; ++i) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int64_t j = 0; j < D; ++j) {
                double dxh = dy(i, j) * gain(j);
                sum_dxh += dxh;
                sum_dxh_xh += dxh * cc.xhat(i, j);
                ggain(j) += dy(i, j) * cc.xhat(i, j);
                gbias(j) += dy(i, j);
            }
            double is = cc.inv_std(i);
            for (int64_t j = 0; j < D; ++j) {
                double dxh = dy(i, j) * gain(j);
                dx(i, j) = is / static_cast<double>(D) *
                           (static_cast<double>(D) * dxh - sum_dxh - cc.xhat(i, j) * sum_dxh_xh);
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Dense layer on [N x In] sequences.
struct Linear {
    Tensor w; // [In x Out]
    Tensor b; // [Out]
    Tensor gw, gb;

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng)
        : w(rand_init({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)))),
          b(Tensor({out})), gw(Tensor({in, out})), gb(Tensor({out})) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }

    Tensor forward(const Tensor& x, Tensor* cache_x = nullptr) const {
        Tensor y = matmul(x, w);
        for (int64_t i = 0; i < y.shape[0]; ++i)
            for (int64_t j = 0; j < y.shape[1]; ++j) y(i, j) += b(j);
        if (cache_x) *cache_x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Tensor& x) {
        add_inplace(gw, matmul(transpose(x), dy));
        for (int64_t i = 0; i < dy.shape[0]; ++i)
            for (int64_t j = 0; j < dy.shape[1]; ++j) gb(j) += dy(i, j);
        return matmul(dy, transpose(w));
    }
};

// ---------------------------------------------------------------------------

/// 2x2 stride-2 convolution; halves both spatial axes (inputs must be even).
struct DownConv {
    Tensor w; // [Cout x Cin x 2 x 2]
    Tensor b; // [Cout]
    Tensor gw, gb;

    DownConv() = default;
    DownConv(int64_t cin, int64_t cout, Rng& rng)
        : w(rand_init({cout, cin, 2, 2}, rng, 1.0 / std::sqrt(4.0 * static_cast<double>(cin)))),
          b(Tensor({cout})), gw(Tensor({cout, cin, 2, 2})), gb(Tensor({cout})) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }

    Tensor forward(const Tensor& x, Tensor* cache_x = nullptr) const {
        int64_t cin = w.shape[1], cout = w.shape[0], H = x.shape[1], W = x.shape[2];
        if (x.shape[0] != cin || H % 2 != 0 || W % 2 != 0)
            throw std::invalid_argument("downconv: bad input " + shape_str(x.shape));
        Tensor y({cout, H / 2, W / 2});
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t i = 0; i < H / 2; ++i)
                for (int64_t j = 0; j < W / 2; ++j) {
                    double acc = b(co);
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t a = 0; a < 2; ++a)
                            for (int64_t bb = 0; bb < 2; ++bb)
                                acc += w(co, ci, a, bb) * x(ci, 2 * i + a, 2 * j + bb);
                    y(co, i, j) = acc;
                }
        if (cache_x) *cache_x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Tensor& x) {
        int64_t cin = w.shape[1], cout = w.shape[0], H = x.shape[1], W = x.shape[2];
        Tensor dx({cin, H, W});
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t i = 0; i < H / 2; ++i)
                for (int64_t j = 0; j < W / 2; ++j) {
                    double g = dy(co, i, j);
                    if (g == 0.0) continue;
                    gb(co) += g;
                    for (int64_t ci = 0; ci < cin; ++ci)
                        for (int64_t a = 0; a < 2; ++a)
                            for (int64_t bb = 0; bb < 2; ++bb) {
                                gw(co, ci, a, bb) += g * x(ci, 2 * i + a, 2 * j + bb);
                                dx(ci, 2 * i + a, 2 * j + bb) += g * w(co, ci, a, bb);
                            }
                }
        return dx;
    }
};

/// 2x2 stride-2 transposed convolution; doubles both spatial axes.
struct UpConv {
    Tensor w; // [Cin x Cout x 2 x 2]
    Tensor b; // [Cout]
    Tensor gw, gb;

    UpConv() = default;
    UpConv(int64_t cin, int64_t cout, Rng& rng)
        : w(rand_init({cin, cout, 2, 2}, rng, 1.0 / std::sqrt(static_cast<double>(cin)))),
          b(Tensor({cout})), gw(Tensor({cin, cout, 2, 2})), gb(Tensor({cout})) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }

    Tensor forward(const Tensor& x, Tensor* cache_x = nullptr) const {
        int64_t cin = w.shape[0], cout = w.shape[1], H = x.shape[1], W = x.shape[2];
        if (x.shape[0] != cin)
            throw std::invalid_argument("upconv: bad input " + shape_str(x.shape));
        Tensor y({cout, 2 * H, 2 * W});
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t i = 0; i < 2 * H; ++i)
                for (int64_t j = 0; j < 2 * W; ++j) y(co, i, j) = b(co);
        for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    double xv = x(ci, i, j);
                    if (xv == 0.0) continue;
                    for (int64_t co = 0; co < cout; ++co)
                        for (int64_t a = 0; a < 2; ++a)
                            for (int64_t bb = 0; bb < 2; ++bb)
                                y(co, 2 * i + a, 2 * j + bb) += xv * w(ci, co, a, bb);
                }
        if (cache_x) *cache_x = x;
        return y;
    }

    Tensor backward(const Tensor& dy, const Tensor& x) {
        int64_t cin = w.shape[0], cout = w.shape[1], H = x.shape[1], W = x.shape[2];
        Tensor dx({cin, H, W});
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t i = 0; i < 2 * H; ++i)
                for (int64_t j = 0; j < 2 * W; ++j) gb(co) += dy(co, i, j);
        for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    double acc = 0.0;
                    for (int64_t co = 0; co < cout; ++co)
                        for (int64_t a = 0; a < 2; ++a)
                            for (int64_t bb = 0; bb < 2; ++bb) {
                                double g = dy(co, 2 * i + a, 2 * j + bb);
                                acc += g * w(ci, co, a, bb);
                                gw(ci, co, a, bb) += g * x(ci, i, j);
                            }
                    dx(ci, i, j) = acc;
                }
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Two dense layers with an ELU between, on [N x D] sequences.
struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(int64_t d, int64_t hidden, Rng& rng) : fc1(d, hidden, rng), fc2(hidden, d, rng) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }

    struct Cache {
        Tensor x, pre_act, act;
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
        Tensor h = fc1.forward(x);
        Tensor a = elementwise(h, elu_scalar);
        Tensor y = fc2.forward(a);
        if (cache) *cache = Cache{x, h, a};
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        Tensor da = fc2.backward(dy, cc.act);
        Tensor dh = elementwise(da, cc.pre_act,
                                [](double g, double x) { return g * elu_grad_scalar(x); });
        return fc1.backward(dh, cc.x);
    }
};

/// Pre-norm transformer block on one [N x D] sequence:
/// x + MHA(LN(x)), then y + FFN(LN(y)).
struct SequenceBlock {
    LayerNorm ln1, ln2;
    MultiheadMala mha;
    FeedForward ffn;

    SequenceBlock() = default;
    SequenceBlock(int64_t d, int64_t heads, int64_t ffn_mult, Rng& rng)
        : ln1(d), ln2(d), mha(d, heads, rng), ffn(d, d * ffn_mult, rng) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        ln1.collect(out, prefix + ".ln1");
        out.push_back({prefix + ".mha.wq", &mha.wq, &mha.gwq});
        out.push_back({prefix + ".mha.wk", &mha.wk, &mha.gwk});
        out.push_back({prefix + ".mha.wv", &mha.wv, &mha.gwv});
        out.push_back({prefix + ".mha.wo", &mha.wo, &mha.gwo});
        ln2.collect(out, prefix + ".ln2");
        ffn.collect(out, prefix + ".ffn");
    }

    struct Cache {
        LayerNorm::Cache ln1c, ln2c;
        MultiheadMalaCache mhac;
        FeedForward::Cache ffnc;
    };

    Tensor forward(const Tensor& x, Cache* cache) const {
        Cache local;
        Cache* cc = cache ? cache : &local;
        Tensor n1 = ln1.forward(x, &cc->ln1c);
        Tensor y1 = mha.forward(n1, &cc->mhac);
        add_inplace(y1, x);
        Tensor n2 = ln2.forward(y1, &cc->ln2c);
        Tensor y2 = ffn.forward(n2, &cc->ffnc);
        add_inplace(y2, y1);
        return y2;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        Tensor dn2 = ffn.backward(dy, cc.ffnc);
        Tensor dy1 = ln2.backward(dn2, cc.ln2c);
        add_inplace(dy1, dy);
        Tensor dn1 = mha.backward(dy1, cc.mhac);
        Tensor dx = ln1.backward(dn1, cc.ln1c);
        add_inplace(dx, dy1);
        return dx;
    }
};

} // namespace imse
