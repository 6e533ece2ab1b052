#pragma once

#include <functional>
#include <limits>

#include "imse/model.hpp"

namespace imse {

// Toy supervised setup: synthetic tonal signals in seeded noise, an
// L1-on-magnitudes plus negative-SI-SNR loss, decoupled-weight-decay Adam,
// a finite-difference gradient checker, and a short training loop.

// ---------------------------------------------------------------------------
// Data synthesis
// ---------------------------------------------------------------------------

struct ToyDatasetConfig {
    int64_t n_items = 200;
    double duration = 0.064;       // seconds
    int64_t sample_rate = 16000;
    double snr_db = 0.0;           // +infinity means "no noise"
    bool band_limited_noise = false;
    int64_t min_tones = 2;
    int64_t max_tones = 4;
    bool allow_chirp = true;
};

struct ToyPair {
    std::vector<double> clean;
    std::vector<double> noisy;
};

/// clean = 2..4 random sinusoids (+ optional chirp), peak-normalized;
/// noisy = clean + noise scaled to hit snr_db exactly.
inline ToyPair synth_pair(const ToyDatasetConfig& cfg, Rng& rng) {
    const double pi = 3.14159265358979323846;
    int64_t len = static_cast<int64_t>(cfg.duration * static_cast<double>(cfg.sample_rate));
    if (len < 2) throw std::invalid_argument("synth_pair: duration too short");
    ToyPair pair;
    pair.clean.assign(static_cast<size_t>(len), 0.0);

    int64_t tones = cfg.min_tones + rng.below(cfg.max_tones - cfg.min_tones + 1);
    for (int64_t k = 0; k < tones; ++k) {
        double f = rng.uniform(150.0, 0.4 * static_cast<double>(cfg.sample_rate));
        double a = rng.uniform(0.2, 1.0);
        double ph = rng.uniform(0.0, 2.0 * pi);
        for (int64_t i = 0; i < len; ++i) {
            double t = static_cast<double>(i) / static_cast<double>(cfg.sample_rate);
            pair.clean[static_cast<size_t>(i)] += a * std::sin(2.0 * pi * f * t + ph);
        }
    }
    if (cfg.allow_chirp && rng.next_double() < 0.5) {
        double f0 = rng.uniform(200.0, 2000.0);
        double f1 = rng.uniform(f0, 0.4 * static_cast<double>(cfg.sample_rate));
        double rate = (f1 - f0) / (2.0 * cfg.duration);
        for (int64_t i = 0; i < len; ++i) {
            double t = static_cast<double>(i) / static_cast<double>(cfg.sample_rate);
            pair.clean[static_cast<size_t>(i)] += 0.5 * std::sin(2.0 * pi * (f0 * t + rate * t * t));
        }
    }
    double peak = 1e-12;
    for (double v : pair.clean) peak = std::max(peak, std::fabs(v));
    for (double& v : pair.clean) v *= 0.7 / peak;

    if (std::isinf(cfg.snr_db)) {
        pair.noisy = pair.clean;
        return pair;
    }
    std::vector<double> noise(static_cast<size_t>(len));
    for (double& v : noise) v = rng.normal();
    if (cfg.band_limited_noise) {
        std::vector<double> smoothed(noise.size(), 0.0);
        for (int64_t i = 0; i < len; ++i) {
            double acc = 0.0;
            int64_t cnt = 0;
            for (int64_t k = -2; k <= 2; ++k) {
                int64_t j = i + k;
                if (j >= 0 && j < len) { acc += noise[static_cast<size_t>(j)]; ++cnt; }
            }
            smoothed[static_cast<size_t>(i)] = acc / static_cast<double>(cnt);
        }
        noise = smoothed;
    }
    double p_clean = 0.0, p_noise = 0.0;
    for (int64_t i = 0; i < len; ++i) {
        p_clean += pair.clean[static_cast<size_t>(i)] * pair.clean[static_cast<size_t>(i)];
        p_noise += noise[static_cast<size_t>(i)] * noise[static_cast<size_t>(i)];
    }
    double sigma = std::sqrt(p_clean / (p_noise * std::pow(10.0, cfg.snr_db / 10.0)));
    pair.noisy.resize(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i)
        pair.noisy[static_cast<size_t>(i)] =
            pair.clean[static_cast<size_t>(i)] + sigma * noise[static_cast<size_t>(i)];
    return pair;
}

/// 10*log10(||signal||^2 / ||noise||^2) by definition, no centering.
inline double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& noisy) {
    double ps = 0.0, pn = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        ps += clean[i] * clean[i];
        double n = noisy[i] - clean[i];
        pn += n * n;
    }
    if (pn == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(ps / pn);
}

// ---------------------------------------------------------------------------
// Scale-invariant SNR
// ---------------------------------------------------------------------------

inline constexpr double kSiSnrEps = 1e-8;

/// SI-SNR in dB of an estimate against a reference; both are mean-centered,
/// and the estimate's projection onto the reference defines the target.
/// Invariant to rescaling the estimate.
inline double si_snr_db(const std::vector<double>& est, const std::vector<double>& ref,
                        std::vector<double>* grad_est = nullptr) {
    if (est.size() != ref.size() || est.empty())
        throw std::invalid_argument("si_snr: length mismatch");
    size_t n = est.size();
    double me = 0.0, mr = 0.0;
    for (size_t i = 0; i < n; ++i) { me += est[i]; mr += ref[i]; }
    me /= static_cast<double>(n);
    mr /= static_cast<double>(n);

    double sr = 0.0, er = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double r0 = ref[i] - mr, e0 = est[i] - me;
        sr += r0 * r0;
        er += e0 * r0;
    }
    double alpha = er / (sr + kSiSnrEps);
    double st = 0.0, sn = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double r0 = ref[i] - mr, e0 = est[i] - me;
        double t = alpha * r0;
        double nn = e0 - t;
        st += t * t;
        sn += nn * nn;
    }
    const double ln10 = 2.302585092994046;
    double value = 10.0 / ln10 * (std::log(st + kSiSnrEps) - std::log(sn + kSiSnrEps));

    if (grad_est) {
        grad_est->assign(n, 0.0);
        // dSt/de0 = 2*alpha*sr/(sr+eps) * r0 ; dSn/de0 = 2n - 2<n,r0>/(sr+eps) * r0
        double ndotr = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double r0 = ref[i] - mr, e0 = est[i] - me;
            ndotr += (e0 - alpha * r0) * r0;
        }
        double c_t = 10.0 / ln10 / (st + kSiSnrEps) * 2.0 * alpha * sr / (sr + kSiSnrEps);
        double c_n = 10.0 / ln10 / (sn + kSiSnrEps) * 2.0;
        double mean_g = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double r0 = ref[i] - mr, e0 = est[i] - me;
            double nn = e0 - alpha * r0;
            double g = c_t * r0 - c_n * (nn - ndotr / (sr + kSiSnrEps) * r0);
            (*grad_est)[i] = g;
            mean_g += g;
        }
        mean_g /= static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) (*grad_est)[i] -= mean_g; // through the centering
    }
    return value;
}

// ---------------------------------------------------------------------------
// Loss: mean L1 over magnitudes + negative SI-SNR over waveforms, 1:1.
// ---------------------------------------------------------------------------

inline constexpr double kMagEps = 1e-12;

struct LossBreakdown {
    double total = 0.0;
    double mag_l1 = 0.0;
    double sisnr_db = 0.0;
};

/// Evaluates the training loss of an enhanced spectrogram against the clean
/// target (spectrogram + waveform). With `grads`, also fills the gradient
/// w.r.t. the enhanced spectrogram planes, chaining the waveform term back
/// through the istft adjoint.
inline LossBreakdown enhancement_loss(const ComplexSpectrogram& enh,
                                      const ComplexSpectrogram& clean_spec,
                                      const std::vector<double>& clean_wav,
                                      std::pair<Tensor, Tensor>* grads = nullptr) {
    if (enh.real.shape != clean_spec.real.shape)
        throw std::invalid_argument("loss: spectrogram shapes differ");
    int64_t cells = enh.real.numel();
    std::vector<double> enh_wav = istft(enh);
    if (enh_wav.size() != clean_wav.size())
        throw std::invalid_argument("loss: waveform length mismatch (" +
                                    std::to_string(enh_wav.size()) + " vs " +
                                    std::to_string(clean_wav.size()) + ")");

    LossBreakdown out;
    for (int64_t i = 0; i < cells; ++i) {
        double me = std::sqrt(enh.real(i) * enh.real(i) + enh.imag(i) * enh.imag(i) + kMagEps);
        double mc = std::sqrt(clean_spec.real(i) * clean_spec.real(i) +
                              clean_spec.imag(i) * clean_spec.imag(i) + kMagEps);
        out.mag_l1 += std::fabs(me - mc);
    }
    out.mag_l1 /= static_cast<double>(cells);

    std::vector<double> g_wav;
    out.sisnr_db = si_snr_db(enh_wav, clean_wav, grads ? &g_wav : nullptr);
    out.total = out.mag_l1 - out.sisnr_db;

    if (grads) {
        Tensor d_re = Tensor::zeros_like(enh.real);
        Tensor d_im = Tensor::zeros_like(enh.imag);
        for (int64_t i = 0; i < cells; ++i) {
            double me = std::sqrt(enh.real(i) * enh.real(i) + enh.imag(i) * enh.imag(i) + kMagEps);
            double mc = std::sqrt(clean_spec.real(i) * clean_spec.real(i) +
                                  clean_spec.imag(i) * clean_spec.imag(i) + kMagEps);
            double s = (me > mc) ? 1.0 : (me < mc ? -1.0 : 0.0);
            double w = s / (static_cast<double>(cells) * me);
            d_re(i) = w * enh.real(i);
            d_im(i) = w * enh.imag(i);
        }
        for (double& g : g_wav) g = -g; // loss carries -SI-SNR
        auto [ar, ai] = istft_adjoint(enh.cfg, enh.frames(), g_wav);
        add_inplace(d_re, ar);
        add_inplace(d_im, ai);
        *grads = {d_re, d_im};
    }
    return out;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adaptive moments with decoupled weight decay. Accumulator shapes mirror
/// the parameter shapes; step count drives the bias correction.
struct AdamW {
    AdamWConfig cfg;
    int64_t step_count = 0;
    std::vector<Tensor> m, v;

    explicit AdamW(AdamWConfig c = {}) : cfg(c) {}

    void init(std::vector<ParamRef>& params) {
        m.clear();
        v.clear();
        for (ParamRef& p : params) {
            m.push_back(Tensor::zeros_like(*p.value));
            v.push_back(Tensor::zeros_like(*p.value));
        }
    }

    void step(std::vector<ParamRef>& params) {
        if (m.size() != params.size()) init(params);
        ++step_count;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& w = *params[k].value;
            const Tensor& g = *params[k].grad;
            for (int64_t i = 0; i < w.numel(); ++i) {
                double gi = g(i);
                m[k](i) = cfg.beta1 * m[k](i) + (1.0 - cfg.beta1) * gi;
                v[k](i) = cfg.beta2 * v[k](i) + (1.0 - cfg.beta2) * gi * gi;
                double mhat = m[k](i) / bc1;
                double vhat = v[k](i) / bc2;
                w(i) -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w(i));
            }
        }
    }
};

/// Scales all gradients so their global L2 norm is at most max_norm.
inline double clip_grad_norm(std::vector<ParamRef>& params, double max_norm) {
    double sq = 0.0;
    for (ParamRef& p : params)
        for (double g : p.grad->data) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (ParamRef& p : params)
            for (double& g : p.grad->data) g *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    int64_t samples = 0;
};

/// Central finite differences on randomly sampled coordinates against the
/// analytic gradients already stored in params[i].grad. `loss_fn` must
/// re-evaluate the loss at the current parameter values.
template <typename F>
GradCheckReport grad_check(std::vector<ParamRef>& params, F&& loss_fn, int64_t n_samples,
                           Rng& rng, double h = 1e-5) {
    GradCheckReport rep;
    double sum = 0.0;
    for (int64_t s = 0; s < n_samples; ++s) {
        ParamRef& p = params[static_cast<size_t>(rng.below(static_cast<int64_t>(params.size())))];
        int64_t i = rng.below(p.value->numel());
        double keep = (*p.value)(i);
        (*p.value)(i) = keep + h;
        double up = loss_fn();
        (*p.value)(i) = keep - h;
        double dn = loss_fn();
        (*p.value)(i) = keep;
        double fd = (up - dn) / (2.0 * h);
        double an = (*p.grad)(i);
        double err = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8});
        rep.max_rel_err = std::max(rep.max_rel_err, err);
        sum += err;
        ++rep.samples;
    }
    rep.mean_rel_err = rep.samples ? sum / static_cast<double>(rep.samples) : 0.0;
    return rep;
}

inline GradCheckReport mala_grad_check(int64_t n, int64_t d, int64_t dv, int64_t samples,
                                       uint64_t seed) {
    Rng rng(seed);
    Tensor q = rand_init({n, d}, rng, 1.0);
    Tensor k = rand_init({n, d}, rng, 1.0);
    Tensor v = rand_init({n, dv}, rng, 1.0);
    Tensor g = rand_init({n, dv}, rng, 1.0);
    MalaGrads grads = mala_backward(q, k, v, g);
    std::vector<ParamRef> params = {{"q", &q, &grads.dq}, {"k", &k, &grads.dk},
                                    {"v", &v, &grads.dv}};
    auto loss = [&]() {
        Tensor y = mala_linear(q, k, v);
        double acc = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += g(i) * y(i);
        return acc;
    };
    Rng pick(seed + 1);
    return grad_check(params, loss, samples, pick);
}

inline GradCheckReport idconv_grad_check(int64_t channels, int64_t H, int64_t W, int64_t samples,
                                         uint64_t seed) {
    Rng rng(seed);
    IdConvConfig cfg = IdConvConfig::equal_split(channels);
    Tensor x = rand_init({channels, H, W}, rng, 1.0);
    IdConvWeights w = IdConvWeights::init(cfg, rng);
    Tensor g = rand_init({channels, H, W}, rng, 1.0);
    IdConvGrads grads = idconv_backward(x, w, cfg, g);
    std::vector<ParamRef> params = {{"x", &x, &grads.dx},
                                    {"w_square", &w.w_square, &grads.dw_square},
                                    {"w_hband", &w.w_hband, &grads.dw_hband},
                                    {"w_vband", &w.w_vband, &grads.dw_vband}};
    auto loss = [&]() {
        Tensor y = idconv_forward(x, w, cfg);
        double acc = 0.0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += g(i) * y(i);
        return acc;
    };
    Rng pick(seed + 1);
    return grad_check(params, loss, samples, pick);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct ToyItem {
    ComplexSpectrogram noisy_spec;
    ComplexSpectrogram clean_spec;
    std::vector<double> clean_wav; // istft round trip of the clean spectrogram
    std::vector<double> noisy_wav; // same, for the baseline score
};

/// Waveform targets are the istft round trips of the spectrograms, so
/// estimate and reference share the same frame-edge treatment and a perfect
/// mask can reach the SI-SNR ceiling.
inline ToyItem make_toy_item(const ToyDatasetConfig& cfg, const StftConfig& stft_cfg, Rng& rng) {
    ToyPair pair = synth_pair(cfg, rng);
    ToyItem item{stft(pair.noisy, stft_cfg), stft(pair.clean, stft_cfg), {}, {}};
    item.clean_wav = istft(item.clean_spec);
    item.noisy_wav = istft(item.noisy_spec);
    return item;
}

/// Forward + loss (+ gradients into the model) for one item.
inline LossBreakdown model_step(Model& model, const ToyItem& item, bool with_grad) {
    ModelCache cache;
    ComplexSpectrogram enh = forward_enhance(model, item.noisy_spec, with_grad ? &cache : nullptr);
    std::pair<Tensor, Tensor> grads;
    LossBreakdown loss =
        enhancement_loss(enh, item.clean_spec, item.clean_wav, with_grad ? &grads : nullptr);
    if (with_grad) enhance_backward(model, cache, grads.first, grads.second);
    return loss;
}

inline GradCheckReport model_grad_check(Model& model, const ToyItem& item, int64_t samples,
                                        uint64_t seed) {
    auto params = model.params();
    model.zero_grads();
    model_step(model, item, true);
    auto loss = [&]() { return model_step(model, item, false).total; };
    Rng pick(seed);
    return grad_check(params, loss, samples, pick);
}

/// Toy-schedule defaults; the bare optimizer keeps its own (lr 5e-4, decay
/// 0.01), but the short toy runs need a hotter rate and no decay to move.
struct TrainConfig {
    int64_t epochs = 30;
    AdamWConfig opt{5e-3, 0.9, 0.999, 1e-8, 0.0};
    double clip_norm = 5.0;
    int64_t val_items = 32;
    uint64_t seed = 42;
    std::string checkpoint_path; // saved at the best validation score when set
};

struct EpochStats {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_sisnr_db = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double baseline_sisnr_db = 0.0; // SI-SNR of the noisy input on the val set
    double best_val_sisnr_db = -1e300;
};

/// Short supervised run on synthetic pairs. Aborts with a diagnostic if the
/// loss stops being finite. Fixed seeds give identical histories.
inline TrainHistory train_toy(Model& model, const ToyDatasetConfig& data_cfg,
                              const TrainConfig& tcfg) {
    Rng data_rng(tcfg.seed);
    std::vector<ToyItem> train_set, val_set;
    for (int64_t i = 0; i < data_cfg.n_items; ++i)
        train_set.push_back(make_toy_item(data_cfg, model.cfg.stft, data_rng));
    for (int64_t i = 0; i < tcfg.val_items; ++i)
        val_set.push_back(make_toy_item(data_cfg, model.cfg.stft, data_rng));

    TrainHistory hist;
    for (const ToyItem& item : val_set)
        hist.baseline_sisnr_db += si_snr_db(item.noisy_wav, item.clean_wav);
    hist.baseline_sisnr_db /= static_cast<double>(val_set.size());

    // the untrained model is a valid (identity) checkpoint; zero-epoch runs
    // still produce a usable file
    if (!tcfg.checkpoint_path.empty()) save_checkpoint(tcfg.checkpoint_path, model);

    auto params = model.params();
    AdamW opt(tcfg.opt);
    opt.init(params);
    Rng order_rng(tcfg.seed + 0x9e3779b9);

    for (int64_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(order_rng.below(static_cast<int64_t>(i)))]);

        double epoch_loss = 0.0;
        for (size_t idx : order) {
            model.zero_grads();
            LossBreakdown lb = model_step(model, train_set[idx], true);
            if (!std::isfinite(lb.total))
                throw std::runtime_error("train_toy: loss diverged (epoch " +
                                         std::to_string(epoch) + ", item " +
                                         std::to_string(idx) + ")");
            clip_grad_norm(params, tcfg.clip_norm);
            opt.step(params);
            epoch_loss += lb.total;
        }
        epoch_loss /= static_cast<double>(train_set.size());

        double val = 0.0;
        for (const ToyItem& item : val_set) {
            ComplexSpectrogram enh = forward_enhance(model, item.noisy_spec);
            val += si_snr_db(istft(enh), item.clean_wav);
        }
        val /= static_cast<double>(val_set.size());

        hist.epochs.push_back({epoch, epoch_loss, val});
        if (val > hist.best_val_sisnr_db) {
            hist.best_val_sisnr_db = val;
            if (!tcfg.checkpoint_path.empty()) save_checkpoint(tcfg.checkpoint_path, model);
        }
    }
    return hist;
}

} // namespace imse
