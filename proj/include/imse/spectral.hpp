#pragma once

#include <complex>

#include "imse/tensor.hpp"

namespace imse {

// STFT analysis/synthesis. Default geometry: 510-sample frames, 256-sample
// hop at 16 kHz with a periodic Hann window on both sides. 510/256 is not a
// constant-overlap-add pair, so the inverse divides by the accumulated
// squared-window envelope, which makes the round trip exact (up to DFT
// rounding) wherever the envelope is not vanishingly small.

enum class Window { Hann, Hamming, Rect };

struct StftConfig {
    int64_t frame_len = 510;
    int64_t hop = 256;
    int64_t sample_rate = 16000;
    Window window = Window::Hann;

    void validate() const {
        if (frame_len < 2) throw std::invalid_argument("stft: frame_len must be >= 2");
        if (hop < 1 || hop > frame_len)
            throw std::invalid_argument("stft: need 0 < hop <= frame_len, got hop=" +
                                        std::to_string(hop) + " frame_len=" +
                                        std::to_string(frame_len));
        if (sample_rate < 1) throw std::invalid_argument("stft: bad sample rate");
    }

    int64_t bins() const { return frame_len / 2 + 1; }
};

inline std::vector<double> make_window(Window kind, int64_t n) {
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    const double pi = 3.14159265358979323846;
    for (int64_t i = 0; i < n; ++i) {
        double c = std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
        switch (kind) {
            case Window::Hann: w[static_cast<size_t>(i)] = 0.5 - 0.5 * c; break;
            case Window::Hamming: w[static_cast<size_t>(i)] = 0.54 - 0.46 * c; break;
            case Window::Rect: break;
        }
    }
    return w;
}

namespace detail {

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// iterative radix-2 Cooley-Tukey, in place
inline void fft_inplace(std::vector<std::complex<double>>& a, bool invert) {
    const double pi = 3.14159265358979323846;
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * pi / static_cast<double>(len) * (invert ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (invert)
        for (auto& x : a) x /= static_cast<double>(n);
}

} // namespace detail

/// One-sided DFT of a real frame plus its inverse and the adjoint of the
/// inverse. Twiddles are tabulated once per frame length; power-of-two
/// lengths hit a radix-2 FFT instead (the default 510 takes the direct
/// path, which is fine at frame scale).
struct DftPlan {
    int64_t n = 0;
    int64_t bins = 0;
    bool pow2 = false;
    std::vector<double> cos_t, sin_t; // [bins * n], bin-major

    explicit DftPlan(int64_t frame_len) : n(frame_len), bins(frame_len / 2 + 1) {
        if (n < 2) throw std::invalid_argument("DftPlan: frame length must be >= 2");
        pow2 = detail::is_pow2(n);
        if (!pow2) {
            const double pi = 3.14159265358979323846;
            cos_t.resize(static_cast<size_t>(bins * n));
            sin_t.resize(static_cast<size_t>(bins * n));
            for (int64_t f = 0; f < bins; ++f)
                for (int64_t t = 0; t < n; ++t) {
                    double ang = 2.0 * pi * static_cast<double>(f) * static_cast<double>(t) /
                                 static_cast<double>(n);
                    cos_t[static_cast<size_t>(f * n + t)] = std::cos(ang);
                    sin_t[static_cast<size_t>(f * n + t)] = std::sin(ang);
                }
        }
    }

    // weight of bin f when folding the two-sided spectrum to one side
    double fold_coef(int64_t f) const {
        return (f == 0 || (n % 2 == 0 && f == n / 2)) ? 1.0 : 2.0;
    }

    void forward(const double* frame, double* re, double* im) const {
        if (pow2) {
            std::vector<std::complex<double>> buf(static_cast<size_t>(n));
            for (int64_t t = 0; t < n; ++t) buf[static_cast<size_t>(t)] = frame[t];
            detail::fft_inplace(buf, false);
            for (int64_t f = 0; f < bins; ++f) {
                re[f] = buf[static_cast<size_t>(f)].real();
                im[f] = buf[static_cast<size_t>(f)].imag();
            }
            return;
        }
        for (int64_t f = 0; f < bins; ++f) {
            const double* c = &cos_t[static_cast<size_t>(f * n)];
            const double* s = &sin_t[static_cast<size_t>(f * n)];
            double ar = 0.0, ai = 0.0;
            for (int64_t t = 0; t < n; ++t) {
                ar += frame[t] * c[t];
                ai -= frame[t] * s[t];
            }
            re[f] = ar;
            im[f] = ai;
        }
    }

    /// Hermitian inverse. The imaginary parts at DC (and Nyquist for even n)
    /// do not correspond to real signals and are ignored.
    void inverse(const double* re, const double* im, double* frame) const {
        if (pow2) {
            std::vector<std::complex<double>> buf(static_cast<size_t>(n));
            buf[0] = std::complex<double>(re[0], 0.0);
            for (int64_t f = 1; f < bins; ++f) {
                bool nyq = (n % 2 == 0 && f == n / 2);
                std::complex<double> x(re[f], nyq ? 0.0 : im[f]);
                buf[static_cast<size_t>(f)] = x;
                if (!nyq) buf[static_cast<size_t>(n - f)] = std::conj(x);
            }
            detail::fft_inplace(buf, true);
            for (int64_t t = 0; t < n; ++t) frame[t] = buf[static_cast<size_t>(t)].real();
            return;
        }
        double inv_n = 1.0 / static_cast<double>(n);
        for (int64_t t = 0; t < n; ++t) frame[t] = 0.0;
        for (int64_t f = 0; f < bins; ++f) {
            const double* c = &cos_t[static_cast<size_t>(f * n)];
            const double* s = &sin_t[static_cast<size_t>(f * n)];
            double wr = fold_coef(f) * inv_n * re[f];
            double wi = fold_coef(f) * inv_n * im[f];
            for (int64_t t = 0; t < n; ++t) frame[t] += wr * c[t] - wi * s[t];
        }
    }

    /// Adjoint of `inverse` as a linear map R^{2*bins} -> R^n: given a
    /// gradient w.r.t. the time frame, gradients w.r.t. (re, im). Reuses the
    /// forward transform: d_re = coef/n * Re DFT(g), d_im = coef/n * Im DFT(g).
    void adjoint_inverse(const double* g, double* dre, double* dim) const {
        std::vector<double> fr(static_cast<size_t>(bins)), fi(static_cast<size_t>(bins));
        forward(g, fr.data(), fi.data());
        double inv_n = 1.0 / static_cast<double>(n);
        for (int64_t f = 0; f < bins; ++f) {
            double w = fold_coef(f) * inv_n;
            dre[f] = w * fr[static_cast<size_t>(f)];
            bool pinned = (f == 0 || (n % 2 == 0 && f == n / 2));
            dim[f] = pinned ? 0.0 : w * fi[static_cast<size_t>(f)];
        }
    }
};

/// One-sided transform of a single frame.
inline std::pair<Tensor, Tensor> dft_real(const Tensor& frame, int64_t frame_len) {
    if (frame.rank() != 1 || frame.shape[0] != frame_len)
        throw std::invalid_argument("dft_real: frame " + shape_str(frame.shape) +
                                    " does not have length " + std::to_string(frame_len));
    DftPlan plan(frame_len);
    Tensor re({plan.bins}), im({plan.bins});
    plan.forward(frame.data.data(), re.data.data(), im.data.data());
    return {re, im};
}

struct ComplexSpectrogram {
    Tensor real; // [F x T]
    Tensor imag; // [F x T]
    StftConfig cfg;

    int64_t bins() const { return real.shape[0]; }
    int64_t frames() const { return real.shape[1]; }

    Tensor magnitude() const {
        Tensor m({bins(), frames()});
        for (int64_t i = 0; i < m.numel(); ++i)
            m(i) = std::sqrt(real(i) * real(i) + imag(i) * imag(i));
        return m;
    }
};

/// Windowed overlapping analysis; frame t covers samples
/// [t*hop, t*hop + frame_len).
inline ComplexSpectrogram stft(const std::vector<double>& signal, const StftConfig& cfg) {
    cfg.validate();
    int64_t len = static_cast<int64_t>(signal.size());
    if (len < cfg.frame_len)
        throw std::invalid_argument("stft: signal of " + std::to_string(len) +
                                    " samples is shorter than one " +
                                    std::to_string(cfg.frame_len) + "-sample frame");
    int64_t T = (len - cfg.frame_len) / cfg.hop + 1;
    DftPlan plan(cfg.frame_len);
    std::vector<double> win = make_window(cfg.window, cfg.frame_len);

    ComplexSpectrogram spec{Tensor({plan.bins, T}), Tensor({plan.bins, T}), cfg};
    std::vector<std::vector<double>> re_cols(static_cast<size_t>(T)),
        im_cols(static_cast<size_t>(T));
    parallel_for(T, [&](int64_t t) {
        std::vector<double> frame(static_cast<size_t>(cfg.frame_len));
        for (int64_t i = 0; i < cfg.frame_len; ++i)
            frame[static_cast<size_t>(i)] =
                signal[static_cast<size_t>(t * cfg.hop + i)] * win[static_cast<size_t>(i)];
        re_cols[static_cast<size_t>(t)].resize(static_cast<size_t>(plan.bins));
        im_cols[static_cast<size_t>(t)].resize(static_cast<size_t>(plan.bins));
        plan.forward(frame.data(), re_cols[static_cast<size_t>(t)].data(),
                     im_cols[static_cast<size_t>(t)].data());
    });
    for (int64_t t = 0; t < T; ++t)
        for (int64_t f = 0; f < plan.bins; ++f) {
            spec.real(f, t) = re_cols[static_cast<size_t>(t)][static_cast<size_t>(f)];
            spec.imag(f, t) = im_cols[static_cast<size_t>(t)][static_cast<size_t>(f)];
        }
    return spec;
}

inline constexpr double kOlaEnvelopeFloor = 1e-8;

inline std::vector<double> ola_envelope(const StftConfig& cfg, int64_t T) {
    std::vector<double> win = make_window(cfg.window, cfg.frame_len);
    std::vector<double> env(static_cast<size_t>((T - 1) * cfg.hop + cfg.frame_len), 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t i = 0; i < cfg.frame_len; ++i)
            env[static_cast<size_t>(t * cfg.hop + i)] +=
                win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    for (double& e : env) e = std::max(e, kOlaEnvelopeFloor);
    return env;
}

/// Synthesis-windowed overlap-add divided by the squared-window envelope.
/// Output length is (T-1)*hop + frame_len.
inline std::vector<double> istft(const ComplexSpectrogram& spec) {
    const StftConfig& cfg = spec.cfg;
    cfg.validate();
    int64_t T = spec.frames();
    DftPlan plan(cfg.frame_len);
    if (spec.bins() != plan.bins || spec.imag.shape != spec.real.shape)
        throw std::invalid_argument("istft: spectrogram shape does not match config");
    std::vector<double> win = make_window(cfg.window, cfg.frame_len);
    std::vector<double> env = ola_envelope(cfg, T);
    std::vector<double> out(env.size(), 0.0);

    std::vector<double> re(static_cast<size_t>(plan.bins)), im(static_cast<size_t>(plan.bins)),
        frame(static_cast<size_t>(cfg.frame_len));
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t f = 0; f < plan.bins; ++f) {
            re[static_cast<size_t>(f)] = spec.real(f, t);
            im[static_cast<size_t>(f)] = spec.imag(f, t);
        }
        plan.inverse(re.data(), im.data(), frame.data());
        for (int64_t i = 0; i < cfg.frame_len; ++i)
            out[static_cast<size_t>(t * cfg.hop + i)] +=
                frame[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] /= env[i];
    return out;
}

/// Adjoint of istft: gradient w.r.t. the synthesized waveform back to
/// gradients w.r.t. the spectrogram planes.
inline std::pair<Tensor, Tensor> istft_adjoint(const StftConfig& cfg, int64_t T,
                                               const std::vector<double>& g_wav) {
    cfg.validate();
    DftPlan plan(cfg.frame_len);
    std::vector<double> win = make_window(cfg.window, cfg.frame_len);
    std::vector<double> env = ola_envelope(cfg, T);
    if (g_wav.size() != env.size())
        throw std::invalid_argument("istft_adjoint: waveform gradient length " +
                                    std::to_string(g_wav.size()) + " != " +
                                    std::to_string(env.size()));
    Tensor dre({plan.bins, T}), dim({plan.bins, T});
    std::vector<double> seg(static_cast<size_t>(cfg.frame_len)),
        br(static_cast<size_t>(plan.bins)), bi(static_cast<size_t>(plan.bins));
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t i = 0; i < cfg.frame_len; ++i) {
            size_t idx = static_cast<size_t>(t * cfg.hop + i);
            seg[static_cast<size_t>(i)] = g_wav[idx] / env[idx] * win[static_cast<size_t>(i)];
        }
        plan.adjoint_inverse(seg.data(), br.data(), bi.data());
        for (int64_t f = 0; f < plan.bins; ++f) {
            dre(f, t) = br[static_cast<size_t>(f)];
            dim(f, t) = bi[static_cast<size_t>(f)];
        }
    }
    return {dre, dim};
}

} // namespace imse
