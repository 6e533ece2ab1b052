// Command-line surface: complexity benchmarks, parameter reports, gradient
// checks, toy training and wav-to-wav enhancement over one shared config
// layer (presets or a JSON file).

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "imse/bench.hpp"
#include "imse/train.hpp"
#include "imse/wav.hpp"

using json = nlohmann::json;
using namespace imse;

namespace {

ModelConfig preset_by_name(const std::string& name) {
    if (name == "tiny") return ModelConfig::tiny();
    if (name == "paper") return ModelConfig::paper();
    throw std::runtime_error("unknown preset '" + name + "' (expected tiny or paper)");
}

Window window_by_name(const std::string& name) {
    if (name == "hann") return Window::Hann;
    if (name == "hamming") return Window::Hamming;
    if (name == "rect") return Window::Rect;
    throw std::runtime_error("unknown window '" + name + "'");
}

ModelConfig config_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    json j = json::parse(is);

    ModelConfig cfg = j.contains("preset") ? preset_by_name(j["preset"].get<std::string>())
                                           : ModelConfig{};
    for (auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        if (key == "base_channels") cfg.base_channels = value.get<int64_t>();
        else if (key == "levels") cfg.levels = value.get<int64_t>();
        else if (key == "heads") cfg.heads = value.get<int64_t>();
        else if (key == "ffn_mult") cfg.ffn_mult = value.get<int64_t>();
        else if (key == "square_kernel") cfg.square_kernel = value.get<int64_t>();
        else if (key == "band_kernel") cfg.band_kernel = value.get<int64_t>();
        else if (key == "attention_axis") {
            std::string ax = value.get<std::string>();
            if (ax == "time") cfg.attn_axis = AttentionAxis::Time;
            else if (ax == "frequency") cfg.attn_axis = AttentionAxis::Frequency;
            else throw std::runtime_error("config: attention_axis must be time or frequency");
        } else if (key == "stft") {
            for (auto& [sk, sv] : value.items()) {
                if (sk == "frame_len") cfg.stft.frame_len = sv.get<int64_t>();
                else if (sk == "hop") cfg.stft.hop = sv.get<int64_t>();
                else if (sk == "sample_rate") cfg.stft.sample_rate = sv.get<int64_t>();
                else if (sk == "window") cfg.stft.window = window_by_name(sv.get<std::string>());
                else throw std::runtime_error("config: unknown stft key '" + sk + "'");
            }
        } else {
            throw std::runtime_error("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig resolve_config(const std::string& preset, const std::string& config_path) {
    if (!config_path.empty()) return config_from_json_file(config_path);
    return preset_by_name(preset);
}

// Published reference totals printed next to our counts; the architectures
// they describe are not fully specified, so these are context, never a
// parity target.
constexpr double kRefImseM = 0.427;
constexpr double kRefMuseM = 0.513;
constexpr double kRefMalaOnlyM = 0.438;
constexpr double kRefIdconvOnlyM = 0.501;

int cmd_params(const std::string& preset, const std::string& config_path, uint64_t seed,
               bool as_json) {
    ModelConfig cfg = resolve_config(preset, config_path);
    Rng rng(seed);
    Model model = build_model(cfg, rng);
    ParamReport rep = count_params(model);

    if (as_json) {
        json j;
        j["preset"] = config_path.empty() ? preset : "(config file)";
        for (auto& [name, n] : rep.modules) j["modules"][name] = n;
        j["total"] = rep.total;
        j["total_m"] = static_cast<double>(rep.total) / 1e6;
        j["reference_context"] = {{"imse_m", kRefImseM},
                                  {"muse_m", kRefMuseM},
                                  {"mala_only_m", kRefMalaOnlyM},
                                  {"idconv_only_m", kRefIdconvOnlyM},
                                  {"note", "published totals, context only"}};
        std::printf("%s\n", j.dump(2).c_str());
        return 0;
    }

    std::printf("%-12s %12s\n", "module", "params");
    for (auto& [name, n] : rep.modules) std::printf("%-12s %12" PRId64 "\n", name.c_str(), n);
    std::printf("%-12s %12" PRId64 "  (%.4f M)\n", "total", rep.total,
                static_cast<double>(rep.total) / 1e6);
    std::printf("\nreference totals (context only, architectures differ):\n");
    std::printf("  IMSE %.3f M | MUSE %.3f M | MALA-only %.3f M | IDConv-only %.3f M\n",
                kRefImseM, kRefMuseM, kRefMalaOnlyM, kRefIdconvOnlyM);
    return 0;
}

int cmd_bench(std::vector<int64_t> sizes, int64_t d, int64_t dv, int64_t reps, bool no_check,
              uint64_t seed) {
    BenchConfig cfg;
    if (!sizes.empty()) cfg.sizes = std::move(sizes);
    cfg.d = d;
    cfg.dv = dv;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.check_equivalence = !no_check;
    std::vector<BenchRow> rows = run_mala_bench(cfg);
    std::printf("N,mode,median_ns,per_token_ns\n");
    for (const BenchRow& r : rows)
        std::printf("%" PRId64 ",%s,%.1f,%.3f\n", r.n, r.mode.c_str(), r.median_ns,
                    r.per_token_ns);
    for (const char* mode : {"linear", "quadratic"}) {
        std::vector<double> ratios = doubling_ratios(rows, mode);
        std::fprintf(stderr, "%s doubling ratios:", mode);
        for (double x : ratios) std::fprintf(stderr, " %.2f", x);
        std::fprintf(stderr, "\n");
    }
    return 0;
}

int cmd_gradcheck(const std::string& preset, const std::string& config_path, int64_t samples,
                  uint64_t seed, bool as_json) {
    GradCheckReport mala = mala_grad_check(8, 4, 4, samples, seed);
    GradCheckReport idc = idconv_grad_check(4, 6, 6, samples, seed + 1);

    ModelConfig cfg = resolve_config(preset, config_path);
    Rng rng(seed + 2);
    Model model = build_model(cfg, rng);
    // the head starts at zero, which blocks gradient flow into the trunk;
    // perturb it so every weight is exercised
    Rng hr(seed + 3);
    model.head.w = rand_init(model.head.w.shape, hr, 0.2);
    model.head.b = rand_init(model.head.b.shape, hr, 0.05);

    ToyDatasetConfig dcfg;
    dcfg.duration = 0.04;
    Rng drng(seed + 4);
    ToyItem item = make_toy_item(dcfg, cfg.stft, drng);
    GradCheckReport e2e = model_grad_check(model, item, samples, seed + 5);

    struct Line {
        const char* name;
        GradCheckReport rep;
        double tol;
    } lines[] = {{"mala", mala, 1e-4}, {"idconv", idc, 1e-4}, {"end-to-end", e2e, 1e-3}};

    bool ok = true;
    if (as_json) {
        json j;
        for (auto& l : lines) {
            j[l.name] = {{"max_rel_err", l.rep.max_rel_err},
                         {"mean_rel_err", l.rep.mean_rel_err},
                         {"samples", l.rep.samples},
                         {"tolerance", l.tol},
                         {"pass", l.rep.max_rel_err <= l.tol}};
            ok = ok && l.rep.max_rel_err <= l.tol;
        }
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        for (auto& l : lines) {
            bool pass = l.rep.max_rel_err <= l.tol;
            ok = ok && pass;
            std::printf("%-11s max_rel_err=%.3e mean=%.3e samples=%" PRId64 " tol=%.0e  %s\n",
                        l.name, l.rep.max_rel_err, l.rep.mean_rel_err, l.rep.samples, l.tol,
                        pass ? "PASS" : "FAIL");
        }
    }
    return ok ? 0 : 1;
}

int cmd_train_toy(const std::string& preset, const std::string& config_path, int64_t items,
                  int64_t epochs, double duration, double snr_db, bool band_limited,
                  int64_t val_items, double lr, double weight_decay, double clip,
                  const std::string& out_ckpt, const std::string& csv_path, uint64_t seed) {
    ModelConfig cfg = resolve_config(preset, config_path);
    Rng rng(seed);
    Model model = build_model(cfg, rng);

    ToyDatasetConfig dcfg;
    dcfg.n_items = items;
    dcfg.duration = duration;
    dcfg.sample_rate = cfg.stft.sample_rate;
    dcfg.snr_db = snr_db;
    dcfg.band_limited_noise = band_limited;

    TrainConfig tcfg;
    tcfg.epochs = epochs;
    tcfg.opt.lr = lr;
    tcfg.opt.weight_decay = weight_decay;
    tcfg.clip_norm = clip;
    tcfg.val_items = val_items;
    tcfg.seed = seed;
    tcfg.checkpoint_path = out_ckpt;

    TrainHistory hist = train_toy(model, dcfg, tcfg);

    FILE* out = stdout;
    if (csv_path != "-" && !csv_path.empty()) {
        out = std::fopen(csv_path.c_str(), "w");
        if (!out) throw std::runtime_error("train-toy: cannot open " + csv_path);
    }
    std::fprintf(out, "epoch,train_loss,val_sisnr_db\n");
    for (const EpochStats& e : hist.epochs)
        std::fprintf(out, "%" PRId64 ",%.6f,%.4f\n", e.epoch, e.train_loss, e.val_sisnr_db);
    if (out != stdout) std::fclose(out);

    std::fprintf(stderr, "baseline val SI-SNR: %.4f dB\n", hist.baseline_sisnr_db);
    if (!hist.epochs.empty())
        std::fprintf(stderr, "best val SI-SNR: %.4f dB (improvement %.4f dB)\n",
                     hist.best_val_sisnr_db, hist.best_val_sisnr_db - hist.baseline_sisnr_db);
    if (!out_ckpt.empty()) std::fprintf(stderr, "checkpoint: %s\n", out_ckpt.c_str());
    return 0;
}

int cmd_enhance(const std::string& in_path, const std::string& ckpt_path,
                const std::string& out_path, bool allow_resample) {
    WavFile wav = wav_read(in_path);
    Model model = load_checkpoint(ckpt_path);
    int64_t model_rate = model.cfg.stft.sample_rate;

    std::vector<double> samples = wav.samples;
    if (wav.sample_rate != model_rate) {
        if (!allow_resample)
            throw std::runtime_error("enhance: input is " + std::to_string(wav.sample_rate) +
                                     " Hz but the checkpoint expects " +
                                     std::to_string(model_rate) +
                                     " Hz; pass --resample to convert");
        samples = resample_linear(samples, wav.sample_rate, model_rate);
    }

    ComplexSpectrogram spec = stft(samples, model.cfg.stft);
    ComplexSpectrogram enh = forward_enhance(model, spec);
    std::vector<double> out = istft(enh);
    out.resize(samples.size(), 0.0); // edge frames zero-padded back

    if (wav.sample_rate != model_rate) {
        out = resample_linear(out, model_rate, wav.sample_rate);
        out.resize(wav.samples.size(), 0.0);
    }
    WavFile result{wav.sample_rate, 1, std::move(out)};
    wav_write(out_path, result);
    std::fprintf(stderr, "enhance: %zu samples -> %s\n", result.samples.size(), out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"amplitude-aware linear attention speech-enhancement toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    uint64_t seed = 42;
    bool deterministic = true;
    bool parallel = false;
    bool as_json = false;
    std::string config_path;
    app.add_option("--seed", seed, "seed for all randomness");
    app.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "force sequential kernels (default on)");
    app.add_flag("--parallel", parallel, "allow threaded kernels (off in deterministic mode)");
    app.add_flag("--json", as_json, "machine-readable output where supported");
    app.add_option("--config", config_path, "JSON model-config file (overrides --preset)");

    auto* bench = app.add_subcommand("bench", "time linear vs quadratic attention over N");
    std::vector<int64_t> sizes;
    int64_t dim = 2, vdim = 2, reps = 21;
    bool no_check = false;
    bench->add_option("--sizes", sizes, "sequence lengths (default 1024..16384 doublings)")
        ->delimiter(',');
    bench->add_option("--dim", dim, "head dimension");
    bench->add_option("--vdim", vdim, "value dimension");
    bench->add_option("--reps", reps, "timing repetitions per size (median reported)");
    bench->add_flag("--no-check", no_check, "skip the output-equivalence gate");

    auto* params = app.add_subcommand("params", "parameter counts per module");
    std::string preset = "paper";
    params->add_option("--preset", preset, "tiny or paper");

    auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    std::string gc_preset = "tiny";
    int64_t gc_samples = 100;
    gradcheck->add_option("--preset", gc_preset, "model preset for the end-to-end check");
    gradcheck->add_option("--samples", gc_samples, "coordinates sampled per check");

    auto* train = app.add_subcommand("train-toy", "short training run on synthetic pairs");
    std::string tr_preset = "tiny", tr_out, tr_csv = "-";
    int64_t tr_items = 200, tr_epochs = 30, tr_val = 32;
    double tr_duration = 0.064, tr_snr = 0.0, tr_lr = 5e-3, tr_wd = 0.0, tr_clip = 5.0;
    bool tr_band = false;
    train->add_option("--preset", tr_preset, "model preset");
    train->add_option("--items", tr_items, "training pairs");
    train->add_option("--epochs", tr_epochs, "epochs");
    train->add_option("--duration", tr_duration, "item length in seconds");
    train->add_option("--snr-db", tr_snr, "mixing SNR (dB)");
    train->add_flag("--band-limited", tr_band, "low-pass the noise");
    train->add_option("--val-items", tr_val, "held-out pairs");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--weight-decay", tr_wd, "decoupled weight decay");
    train->add_option("--clip", tr_clip, "global gradient-norm clip");
    train->add_option("--out", tr_out, "checkpoint path (written at best validation)");
    train->add_option("--csv", tr_csv, "history CSV path, '-' for stdout");

    auto* enhance = app.add_subcommand("enhance", "denoise a wav through a checkpoint");
    std::string en_in, en_ckpt, en_out;
    bool en_resample = false;
    enhance->add_option("--in", en_in, "input wav (PCM16)")->required();
    enhance->add_option("--ckpt", en_ckpt, "checkpoint file")->required();
    enhance->add_option("--out", en_out, "output wav")->required();
    enhance->add_flag("--resample", en_resample, "convert the sample rate when it differs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "imse: " << e.what() << "\n\n" << app.help() << std::endl;
        return 2;
    }

    set_parallel(parallel && !deterministic);

    try {
        if (*bench) return cmd_bench(sizes, dim, vdim, reps, no_check, seed);
        if (*params) return cmd_params(preset, config_path, seed, as_json);
        if (*gradcheck) return cmd_gradcheck(gc_preset, config_path, gc_samples, seed, as_json);
        if (*train)
            return cmd_train_toy(tr_preset, config_path, tr_items, tr_epochs, tr_duration, tr_snr,
                                 tr_band, tr_val, tr_lr, tr_wd, tr_clip, tr_out, tr_csv, seed);
        if (*enhance) return cmd_enhance(en_in, en_ckpt, en_out, en_resample);
    } catch (const std::exception& e) {
        std::cerr << "imse: error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
