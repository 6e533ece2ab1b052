#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>

#include "imse/layers.hpp"
#include "imse/spectral.hpp"

namespace imse {

// Four-level U-Net over complex spectrograms. Each encoder level runs an
// inception-depthwise embedding unit followed by a MALA transformer block;
// levels are bridged by 2x2 strided convolutions down and transposed
// convolutions up, with concatenated skips. The head emits a bounded
// complex ratio mask applied to the input spectrogram:
//
//   mag   = 1 + tanh(g)                     in (0, 2)
//   rot   = (1 + pr, pi) / |(1 + pr, pi)|   unit phasor
//   S_out = mag * rot * S_in
//
// A zero head output therefore leaves the input untouched; the head weights
// start at zero so a freshly built model is an identity enhancer.
//
// Attention runs along time frames by default, treating each frequency bin
// as an independent sequence with the channel width as the embedding; the
// transposed arrangement (sequences along frequency) is a config switch.

enum class AttentionAxis { Time, Frequency };

struct ModelConfig {
    int64_t base_channels = 16;
    int64_t levels = 4;
    int64_t heads = 2;
    int64_t ffn_mult = 2;
    AttentionAxis attn_axis = AttentionAxis::Time;
    int64_t square_kernel = 3;
    int64_t band_kernel = 11;
    StftConfig stft;

    void validate() const {
        if (base_channels < 1 || levels < 1 || heads < 1 || ffn_mult < 1)
            throw std::invalid_argument("model config: counts must be positive");
        if (base_channels % heads != 0)
            throw std::invalid_argument("model config: base channels " +
                                        std::to_string(base_channels) +
                                        " not divisible by heads " + std::to_string(heads));
        stft.validate();
        IdConvConfig::equal_split(base_channels, square_kernel, band_kernel).validate();
    }

    int64_t channels(int64_t level) const { return base_channels << level; }
    IdConvConfig idconv(int64_t level) const {
        return IdConvConfig::equal_split(channels(level), square_kernel, band_kernel);
    }
    int64_t pad_multiple() const { return int64_t{1} << levels; }

    /// Paper-scale preset: 16 base channels, 4 levels, 510/256 STFT @ 16 kHz.
    static ModelConfig paper() { return ModelConfig{}; }

    /// Desk preset small enough for gradient checks and toy training.
    /// Attention runs along frequency here: on tonal toy data that
    /// arrangement separates signal bins from noise bins much faster.
    static ModelConfig tiny() {
        ModelConfig cfg;
        cfg.base_channels = 4;
        cfg.levels = 2;
        cfg.heads = 2;
        cfg.attn_axis = AttentionAxis::Frequency;
        cfg.stft.frame_len = 64;
        cfg.stft.hop = 32;
        return cfg;
    }
};

// ---------------------------------------------------------------------------

/// IDConv -> channel norm -> pointwise mix -> ELU, wrapped in a residual.
struct IdconvEmbed {
    IdConvConfig cfg;
    IdConvWeights w;
    Tensor gw_square, gw_hband, gw_vband;
    ChannelNorm norm;
    Conv1x1 mix;

    IdconvEmbed() = default;
    IdconvEmbed(const IdConvConfig& c, Rng& rng)
        : cfg(c), w(IdConvWeights::init(c, rng)), norm(c.channels),
          mix(c.channels, c.channels, rng) {
        if (cfg.split[1] > 0) gw_square = Tensor::zeros_like(w.w_square);
        if (cfg.split[2] > 0) gw_hband = Tensor::zeros_like(w.w_hband);
        if (cfg.split[3] > 0) gw_vband = Tensor::zeros_like(w.w_vband);
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        if (cfg.split[1] > 0) out.push_back({prefix + ".dw_square", &w.w_square, &gw_square});
        if (cfg.split[2] > 0) out.push_back({prefix + ".dw_hband", &w.w_hband, &gw_hband});
        if (cfg.split[3] > 0) out.push_back({prefix + ".dw_vband", &w.w_vband, &gw_vband});
        norm.collect(out, prefix + ".norm");
        mix.collect(out, prefix + ".mix");
    }

    struct Cache {
        Tensor x, idout, normed, pre_act;
        ChannelNorm::Cache nc;
    };

    Tensor forward(const Tensor& x, Cache* cache) const {
        Cache local;
        Cache* cc = cache ? cache : &local;
        cc->x = x;
        cc->idout = idconv_forward(x, w, cfg);
        cc->normed = norm.forward(cc->idout, &cc->nc);
        cc->pre_act = mix.forward(cc->normed);
        Tensor y = elementwise(cc->pre_act, elu_scalar);
        add_inplace(y, x);
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        Tensor dm = elementwise(dy, cc.pre_act,
                                [](double g, double x) { return g * elu_grad_scalar(x); });
        Tensor dn = mix.backward(dm, cc.normed);
        Tensor did = norm.backward(dn, cc.nc);
        IdConvGrads g = idconv_backward(cc.x, w, cfg, did);
        if (cfg.split[1] > 0) add_inplace(gw_square, g.dw_square);
        if (cfg.split[2] > 0) add_inplace(gw_hband, g.dw_hband);
        if (cfg.split[3] > 0) add_inplace(gw_vband, g.dw_vband);
        Tensor dx = g.dx;
        add_inplace(dx, dy);
        return dx;
    }
};

// ---------------------------------------------------------------------------

/// Applies one SequenceBlock to every row of a [C x H x W] map along the
/// configured axis; the other spatial axis acts as a batch.
struct MapTransformer {
    SequenceBlock block;
    AttentionAxis axis = AttentionAxis::Time;

    MapTransformer() = default;
    MapTransformer(int64_t c, int64_t heads, int64_t ffn_mult, AttentionAxis ax, Rng& rng)
        : block(c, heads, ffn_mult, rng), axis(ax) {}

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        block.collect(out, prefix);
    }

    struct Cache {
        std::vector<SequenceBlock::Cache> rows;
    };

    Tensor gather(const Tensor& x, int64_t row) const {
        int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
        if (axis == AttentionAxis::Time) {
            Tensor seq({W, C});
            for (int64_t t = 0; t < W; ++t)
                for (int64_t c = 0; c < C; ++c) seq(t, c) = x(c, row, t);
            return seq;
        }
        Tensor seq({H, C});
        for (int64_t f = 0; f < H; ++f)
            for (int64_t c = 0; c < C; ++c) seq(f, c) = x(c, f, row);
        return seq;
    }

    void scatter(Tensor& dst, const Tensor& seq, int64_t row) const {
        int64_t C = dst.shape[0];
        if (axis == AttentionAxis::Time) {
            for (int64_t t = 0; t < seq.shape[0]; ++t)
                for (int64_t c = 0; c < C; ++c) dst(c, row, t) = seq(t, c);
        } else {
            for (int64_t f = 0; f < seq.shape[0]; ++f)
                for (int64_t c = 0; c < C; ++c) dst(c, f, row) = seq(f, c);
        }
    }

    Tensor forward(const Tensor& x, Cache* cache) const {
        int64_t rows = axis == AttentionAxis::Time ? x.shape[1] : x.shape[2];
        Tensor y = Tensor::zeros_like(x);
        if (cache) cache->rows.resize(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            Tensor seq = gather(x, r);
            Tensor out = block.forward(seq, cache ? &cache->rows[static_cast<size_t>(r)] : nullptr);
            scatter(y, out, r);
        }
        return y;
    }

    Tensor backward(const Tensor& dy, const Cache& cc) {
        int64_t rows = axis == AttentionAxis::Time ? dy.shape[1] : dy.shape[2];
        Tensor dx = Tensor::zeros_like(dy);
        for (int64_t r = 0; r < rows; ++r) {
            Tensor dseq = block.backward(gather(dy, r), cc.rows[static_cast<size_t>(r)]);
            scatter(dx, dseq, r);
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------

namespace detail {

inline int64_t mirror_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    int64_t period = 2 * (n - 1);
    int64_t m = i % period;
    return m < n ? m : period - m;
}

inline Tensor mirror_pad(const Tensor& x, int64_t H2, int64_t W2) {
    int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Tensor out({C, H2, W2});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H2; ++i) {
            int64_t si = mirror_index(i, H);
            for (int64_t j = 0; j < W2; ++j)
                out(c, i, j) = x(c, si, mirror_index(j, W));
        }
    return out;
}

inline Tensor crop(const Tensor& x, int64_t H, int64_t W) {
    Tensor out({x.shape[0], H, W});
    for (int64_t c = 0; c < x.shape[0]; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) out(c, i, j) = x(c, i, j);
    return out;
}

inline Tensor uncrop(const Tensor& g, int64_t H2, int64_t W2) {
    Tensor out({g.shape[0], H2, W2});
    for (int64_t c = 0; c < g.shape[0]; ++c)
        for (int64_t i = 0; i < g.shape[1]; ++i)
            for (int64_t j = 0; j < g.shape[2]; ++j) out(c, i, j) = g(c, i, j);
    return out;
}

inline Tensor concat2(const Tensor& a, const Tensor& b) {
    Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

} // namespace detail

inline constexpr double kMaskPhaseEps = 1e-12;

struct Model {
    ModelConfig cfg;
    Conv1x1 stem;                    // 2 -> C0
    std::vector<IdconvEmbed> embed;  // one per level
    std::vector<MapTransformer> enc; // one per level (last is the bottleneck)
    std::vector<DownConv> down;      // levels-1
    std::vector<UpConv> up;          // levels-1, deepest first
    std::vector<Conv1x1> fuse;       // levels-1
    std::vector<MapTransformer> dec; // levels-1
    Conv1x1 head;                    // C0 -> 3 mask planes, zero-initialized

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        stem.collect(out, "stem");
        for (size_t i = 0; i < embed.size(); ++i) {
            embed[i].collect(out, "embed" + std::to_string(i));
            enc[i].collect(out, "enc" + std::to_string(i));
            if (i < down.size()) down[i].collect(out, "down" + std::to_string(i));
        }
        for (size_t i = 0; i < up.size(); ++i) {
            size_t level = up.size() - 1 - i; // deepest first
            up[i].collect(out, "up" + std::to_string(level));
            fuse[i].collect(out, "fuse" + std::to_string(level));
            dec[i].collect(out, "dec" + std::to_string(level));
        }
        head.collect(out, "head");
        return out;
    }

    void zero_grads() {
        for (ParamRef& p : params()) p.grad->fill(0.0);
    }

    int64_t param_count() {
        int64_t n = 0;
        for (ParamRef& p : params()) n += p.value->numel();
        return n;
    }
};

/// Deterministic construction: the RNG is consumed in a fixed layer order,
/// so one seed pins every weight.
inline Model build_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.stem = Conv1x1(2, cfg.base_channels, rng);
    for (int64_t i = 0; i < cfg.levels; ++i) {
        m.embed.emplace_back(cfg.idconv(i), rng);
        m.enc.emplace_back(cfg.channels(i), cfg.heads, cfg.ffn_mult, cfg.attn_axis, rng);
        if (i + 1 < cfg.levels) m.down.emplace_back(cfg.channels(i), cfg.channels(i + 1), rng);
    }
    for (int64_t i = cfg.levels - 2; i >= 0; --i) {
        m.up.emplace_back(cfg.channels(i + 1), cfg.channels(i), rng);
        m.fuse.emplace_back(2 * cfg.channels(i), cfg.channels(i), rng);
        m.dec.emplace_back(cfg.channels(i), cfg.heads, cfg.ffn_mult, cfg.attn_axis, rng);
    }
    m.head = Conv1x1(cfg.base_channels, 3, rng, /*zero_init=*/true);
    return m;
}

struct ModelCache {
    int64_t F = 0, T = 0;   // unpadded spectrogram dims
    int64_t Fp = 0, Tp = 0; // padded dims
    Tensor in_re, in_im;    // original planes (mask backward needs them)
    Tensor stem_x;
    std::vector<IdconvEmbed::Cache> embed_c;
    std::vector<MapTransformer::Cache> enc_c;
    std::vector<Tensor> down_x;
    std::vector<Tensor> up_x;
    std::vector<Tensor> fuse_x, fuse_pre;
    std::vector<MapTransformer::Cache> dec_c;
    Tensor head_x;
    Tensor mask; // [3 x F x T], cropped raw head output
};

/// Enhance a spectrogram; shape in == shape out for any T >= 1. Pass a cache
/// to enable enhance_backward afterwards.
inline ComplexSpectrogram forward_enhance(const Model& model, const ComplexSpectrogram& spec,
                                          ModelCache* cache = nullptr) {
    const ModelConfig& cfg = model.cfg;
    int64_t F = spec.bins(), T = spec.frames();
    int64_t mult = cfg.pad_multiple();
    int64_t Fp = (F + mult - 1) / mult * mult;
    int64_t Tp = (T + mult - 1) / mult * mult;

    Tensor x({2, F, T});
    for (int64_t i = 0; i < F * T; ++i) {
        x.data[static_cast<size_t>(i)] = spec.real.data[static_cast<size_t>(i)];
        x.data[static_cast<size_t>(F * T + i)] = spec.imag.data[static_cast<size_t>(i)];
    }
    Tensor padded = detail::mirror_pad(x, Fp, Tp);

    ModelCache local;
    ModelCache* cc = cache ? cache : &local;
    cc->F = F;
    cc->T = T;
    cc->Fp = Fp;
    cc->Tp = Tp;
    cc->in_re = spec.real;
    cc->in_im = spec.imag;
    cc->embed_c.resize(model.embed.size());
    cc->enc_c.resize(model.enc.size());
    cc->down_x.resize(model.down.size());
    cc->up_x.resize(model.up.size());
    cc->fuse_x.resize(model.fuse.size());
    cc->fuse_pre.resize(model.fuse.size());
    cc->dec_c.resize(model.dec.size());

    Tensor a = model.stem.forward(padded, &cc->stem_x);
    std::vector<Tensor> skips;
    for (size_t i = 0; i < model.embed.size(); ++i) {
        a = model.embed[i].forward(a, &cc->embed_c[i]);
        a = model.enc[i].forward(a, &cc->enc_c[i]);
        if (i < model.down.size()) {
            skips.push_back(a);
            a = model.down[i].forward(a, &cc->down_x[i]);
        }
    }
    for (size_t i = 0; i < model.up.size(); ++i) {
        a = model.up[i].forward(a, &cc->up_x[i]);
        size_t level = model.up.size() - 1 - i;
        Tensor cat = detail::concat2(a, skips[level]);
        Tensor pre = model.fuse[i].forward(cat, &cc->fuse_x[i]);
        cc->fuse_pre[i] = pre;
        a = elementwise(pre, elu_scalar);
        a = model.dec[i].forward(a, &cc->dec_c[i]);
    }
    Tensor mask_full = model.head.forward(a, &cc->head_x);
    cc->mask = detail::crop(mask_full, F, T);

    ComplexSpectrogram out{Tensor({F, T}), Tensor({F, T}), spec.cfg};
    for (int64_t i = 0; i < F * T; ++i) {
        double g = cc->mask.data[static_cast<size_t>(i)];
        double pr = cc->mask.data[static_cast<size_t>(F * T + i)];
        double pi = cc->mask.data[static_cast<size_t>(2 * F * T + i)];
        double mag = 1.0 + std::tanh(g);
        double ar = 1.0 + pr;
        double hyp = std::sqrt(ar * ar + pi * pi + kMaskPhaseEps);
        double cr = ar / hyp, ci = pi / hyp;
        double re = spec.real.data[static_cast<size_t>(i)];
        double im = spec.imag.data[static_cast<size_t>(i)];
        out.real.data[static_cast<size_t>(i)] = mag * (re * cr - im * ci);
        out.imag.data[static_cast<size_t>(i)] = mag * (re * ci + im * cr);
    }
    return out;
}

/// Backward through forward_enhance w.r.t. the model weights (the input
/// spectrogram is data). Accumulates into the layer gradient tensors.
inline void enhance_backward(Model& model, const ModelCache& cc, const Tensor& d_out_re,
                             const Tensor& d_out_im) {
    int64_t F = cc.F, T = cc.T;
    Tensor dmask({3, F, T});
    for (int64_t i = 0; i < F * T; ++i) {
        double g = cc.mask.data[static_cast<size_t>(i)];
        double pr = cc.mask.data[static_cast<size_t>(F * T + i)];
        double pi = cc.mask.data[static_cast<size_t>(2 * F * T + i)];
        double th = std::tanh(g);
        double mag = 1.0 + th;
        double ar = 1.0 + pr;
        double hyp2 = ar * ar + pi * pi + kMaskPhaseEps;
        double hyp = std::sqrt(hyp2);
        double cr = ar / hyp, ci = pi / hyp;
        double re = cc.in_re.data[static_cast<size_t>(i)];
        double im = cc.in_im.data[static_cast<size_t>(i)];
        double dor = d_out_re.data[static_cast<size_t>(i)];
        double doi = d_out_im.data[static_cast<size_t>(i)];

        double dmag = dor * (re * cr - im * ci) + doi * (re * ci + im * cr);
        double dcr = mag * (dor * re + doi * im);
        double dci = mag * (doi * re - dor * im);
        double h3 = hyp2 * hyp;
        dmask.data[static_cast<size_t>(i)] = dmag * (1.0 - th * th);
        dmask.data[static_cast<size_t>(F * T + i)] =
            dcr * (pi * pi + kMaskPhaseEps) / h3 - dci * (ar * pi) / h3;
        dmask.data[static_cast<size_t>(2 * F * T + i)] =
            -dcr * (ar * pi) / h3 + dci * (ar * ar + kMaskPhaseEps) / h3;
    }

    Tensor da = model.head.backward(detail::uncrop(dmask, cc.Fp, cc.Tp), cc.head_x);
    std::vector<Tensor> dskips(model.up.size());
    for (size_t ri = model.up.size(); ri-- > 0;) {
        da = model.dec[ri].backward(da, cc.dec_c[ri]);
        Tensor dpre = elementwise(da, cc.fuse_pre[ri],
                                  [](double g, double x) { return g * elu_grad_scalar(x); });
        Tensor dcat = model.fuse[ri].backward(dpre, cc.fuse_x[ri]);
        size_t level = model.up.size() - 1 - ri;
        int64_t c_up = model.cfg.channels(static_cast<int64_t>(level));
        Tensor dup({c_up, dcat.shape[1], dcat.shape[2]});
        Tensor dskip({c_up, dcat.shape[1], dcat.shape[2]});
        std::copy(dcat.data.begin(), dcat.data.begin() + dup.data.size(), dup.data.begin());
        std::copy(dcat.data.begin() + dup.data.size(), dcat.data.end(), dskip.data.begin());
        dskips[level] = dskip;
        da = model.up[ri].backward(dup, cc.up_x[ri]);
    }
    for (size_t i = model.embed.size(); i-- > 0;) {
        if (i < model.down.size()) {
            da = model.down[i].backward(da, cc.down_x[i]);
            add_inplace(da, dskips[i]);
        }
        da = model.enc[i].backward(da, cc.enc_c[i]);
        da = model.embed[i].backward(da, cc.embed_c[i]);
    }
    model.stem.backward(da, cc.stem_x);
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamReport {
    std::vector<std::pair<std::string, int64_t>> modules;
    int64_t total = 0;
};

inline ParamReport count_params(Model& model) {
    ParamReport rep;
    int64_t embedding = 0, attention = 0, resample = 0, head = 0;
    for (ParamRef& p : model.params()) {
        int64_t n = p.value->numel();
        if (p.name.rfind("stem", 0) == 0 || p.name.rfind("embed", 0) == 0)
            embedding += n;
        else if (p.name.rfind("enc", 0) == 0 || p.name.rfind("dec", 0) == 0)
            attention += n;
        else if (p.name.rfind("down", 0) == 0 || p.name.rfind("up", 0) == 0 ||
                 p.name.rfind("fuse", 0) == 0)
            resample += n;
        else
            head += n;
        rep.total += n;
    }
    rep.modules = {{"embedding", embedding},
                   {"attention", attention},
                   {"resample", resample},
                   {"head", head}};
    return rep;
}

/// Sum over one name prefix, e.g. "embed0".
inline int64_t count_params_prefix(Model& model, const std::string& prefix) {
    int64_t n = 0;
    for (ParamRef& p : model.params())
        if (p.name.rfind(prefix, 0) == 0) n += p.value->numel();
    return n;
}

// ---------------------------------------------------------------------------
// Checkpoints: "IMSE" magic, u32 format version, config block, then the
// weights as little-endian f64 in params() order.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("checkpoint: truncated header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    uint64_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("checkpoint: truncated weight stream");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write("IMSE", 4);
    detail::put_u32(os, kCheckpointVersion);
    const ModelConfig& c = model.cfg;
    for (int64_t v : {c.base_channels, c.levels, c.heads, c.ffn_mult,
                      static_cast<int64_t>(c.attn_axis), c.square_kernel, c.band_kernel,
                      c.stft.frame_len, c.stft.hop, c.stft.sample_rate,
                      static_cast<int64_t>(c.stft.window)})
        detail::put_u32(os, static_cast<uint32_t>(v));
    detail::put_u32(os, static_cast<uint32_t>(model.param_count()));
    for (ParamRef& p : model.params())
        for (double v : p.value->data) detail::put_f64(os, v);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "IMSE")
        throw std::runtime_error("checkpoint: " + path + " is not an IMSE checkpoint");
    uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                                 " not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    ModelConfig cfg;
    cfg.base_channels = detail::get_u32(is);
    cfg.levels = detail::get_u32(is);
    cfg.heads = detail::get_u32(is);
    cfg.ffn_mult = detail::get_u32(is);
    cfg.attn_axis = static_cast<AttentionAxis>(detail::get_u32(is));
    cfg.square_kernel = detail::get_u32(is);
    cfg.band_kernel = detail::get_u32(is);
    cfg.stft.frame_len = detail::get_u32(is);
    cfg.stft.hop = detail::get_u32(is);
    cfg.stft.sample_rate = detail::get_u32(is);
    cfg.stft.window = static_cast<Window>(detail::get_u32(is));
    uint32_t declared = detail::get_u32(is);

    Rng rng(0);
    Model model = build_model(cfg, rng);
    if (static_cast<int64_t>(declared) != model.param_count())
        throw std::runtime_error("checkpoint: parameter count mismatch (" +
                                 std::to_string(declared) + " stored, " +
                                 std::to_string(model.param_count()) + " expected)");
    for (ParamRef& p : model.params())
        for (double& v : p.value->data) v = detail::get_f64(is);
    return model;
}

} // namespace imse
