#pragma once

#include <chrono>
#include <functional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "imse/mala.hpp"

namespace imse {

// Wall-time scaling of the two attention paths over sequence length. The
// quadratic mode times mala_reference_y, which performs the full N^2 score
// evaluation without allocating the N x N matrix, so large N fits in memory
// while the arithmetic stays quadratic. Before any timing, both paths are
// checked against each other at every size.
//
// Timing is round-interleaved: each repetition visits every (size, mode)
// cell once, so host-wide slow phases hit all cells alike instead of
// skewing whichever size they land on. Short calls are batched per visit
// until they span min_sample_sec.

struct BenchRow {
    int64_t n = 0;
    std::string mode;
    double median_ns = 0.0;
    double per_token_ns = 0.0;
};

struct BenchConfig {
    std::vector<int64_t> sizes{1024, 2048, 4096, 8192, 16384};
    int64_t d = 2;
    int64_t dv = 2;
    int64_t reps = 21;
    uint64_t seed = 42;
    bool check_equivalence = true;
    double min_sample_sec = 2e-3;
};

namespace detail {

inline double& bench_sink() {
    static double sink = 0.0;
    return sink;
}

} // namespace detail

inline std::vector<BenchRow> run_mala_bench(const BenchConfig& cfg) {
#if defined(__GLIBC__)
    // glibc adapts its mmap threshold at runtime; output buffers then flip
    // between reused heap chunks and freshly faulted pages as N grows,
    // which skews the doubling ratios. Pin it so every size allocates alike.
    mallopt(M_MMAP_THRESHOLD, 1 << 26);
#endif
    using clock = std::chrono::steady_clock;

    struct Cell {
        int64_t n = 0;
        const char* mode = nullptr;
        std::function<void()> call;
        int64_t inner = 1;
        std::vector<double> samples_ns;
    };

    struct Inputs {
        Tensor q, k, v;
    };
    std::vector<Inputs> inputs;
    std::vector<Cell> cells;

    for (size_t si = 0; si < cfg.sizes.size(); ++si) {
        int64_t n = cfg.sizes[si];
        Rng rng(cfg.seed + si);
        inputs.push_back({rand_init({n, cfg.d}, rng, 1.0), rand_init({n, cfg.d}, rng, 1.0),
                          rand_init({n, cfg.dv}, rng, 1.0)});
    }
    for (size_t si = 0; si < cfg.sizes.size(); ++si) {
        const Inputs& in = inputs[si];
        if (cfg.check_equivalence) {
            Tensor yl = mala_linear(in.q, in.k, in.v);
            Tensor yq = mala_reference_y(in.q, in.k, in.v);
            double rel = max_rel_diff(yl, yq);
            if (rel > 1e-9)
                throw std::runtime_error("bench: paths disagree at N=" +
                                         std::to_string(cfg.sizes[si]) + " (rel " +
                                         std::to_string(rel) + ")");
        }
        cells.push_back({cfg.sizes[si], "linear",
                         [&in]() { detail::bench_sink() += mala_linear(in.q, in.k, in.v)(0, 0); },
                         1,
                         {}});
        cells.push_back({cfg.sizes[si], "quadratic",
                         [&in]() {
                             detail::bench_sink() += mala_reference_y(in.q, in.k, in.v)(0, 0);
                         },
                         1,
                         {}});
    }

    // warm-up (excluded) and per-cell batch calibration
    for (Cell& c : cells) {
        c.call();
        auto t0 = clock::now();
        c.call();
        double once = std::chrono::duration<double>(clock::now() - t0).count();
        c.inner = std::max<int64_t>(
            1, static_cast<int64_t>(cfg.min_sample_sec / std::max(once, 1e-9)));
        c.samples_ns.reserve(static_cast<size_t>(cfg.reps));
    }

    for (int64_t rep = 0; rep < cfg.reps; ++rep) {
        for (Cell& c : cells) {
            auto t0 = clock::now();
            for (int64_t i = 0; i < c.inner; ++i) c.call();
            double span = std::chrono::duration<double>(clock::now() - t0).count();
            c.samples_ns.push_back(span / static_cast<double>(c.inner) * 1e9);
        }
    }

    std::vector<BenchRow> rows;
    for (Cell& c : cells) {
        std::sort(c.samples_ns.begin(), c.samples_ns.end());
        double med = c.samples_ns[c.samples_ns.size() / 2];
        rows.push_back({c.n, c.mode, med, med / static_cast<double>(c.n)});
    }
    return rows;
}

/// time(2N)/time(N) per mode, in size order.
inline std::vector<double> doubling_ratios(const std::vector<BenchRow>& rows,
                                           const std::string& mode) {
    std::vector<const BenchRow*> seq;
    for (const BenchRow& r : rows)
        if (r.mode == mode) seq.push_back(&r);
    std::vector<double> out;
    for (size_t i = 1; i < seq.size(); ++i) out.push_back(seq[i]->median_ns / seq[i - 1]->median_ns);
    return out;
}

} // namespace imse
