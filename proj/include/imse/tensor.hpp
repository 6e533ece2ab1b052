#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace imse {

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += "x";
    }
    return out + "]";
}

/// Dense row-major tensor of doubles. Shapes are fixed at construction;
/// every dimension must be >= 1 and numel() always equals data.size().
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0) : shape(std::move(s)) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 1) throw std::invalid_argument("Tensor: bad dimension in " + shape_str(shape));
            n *= d;
        }
        data.assign(static_cast<size_t>(n), fill);
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const { return shape[static_cast<size_t>(i)]; }

    double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }

    double& operator()(int64_t i, int64_t j) {
        return data[static_cast<size_t>(i * shape[1] + j)];
    }
    double operator()(int64_t i, int64_t j) const {
        return data[static_cast<size_t>(i * shape[1] + j)];
    }

    double& operator()(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double operator()(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    double& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    double operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<int64_t> s) const {
        Tensor out(std::move(s));
        if (out.numel() != numel())
            throw std::invalid_argument("reshape: " + shape_str(shape) + " -> " +
                                        shape_str(out.shape) + " changes element count");
        out.data = data;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Deterministic execution mode. Kernels consult this before splitting work
// across threads; the default is sequential so results are reproducible
// bit-for-bit regardless of the host.
// ---------------------------------------------------------------------------

inline std::atomic<bool>& parallel_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
inline void set_parallel(bool on) { parallel_flag().store(on); }
inline bool parallel_enabled() { return parallel_flag().load(); }

template <typename F>
void parallel_for(int64_t n, F&& body) {
    if (!parallel_enabled() || n < 2) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    int64_t workers = std::min<int64_t>(hw, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::atomic<int64_t> next{0};
    for (int64_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int64_t i = next.fetch_add(1);
                if (i >= n) return;
                body(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Seeded random numbers. mt19937_64 has a sequence pinned by the standard;
// the double mapping below uses the top 53 bits directly, so draws are
// identical on every platform (library-provided distributions are not).
// ---------------------------------------------------------------------------

struct Rng {
    std::mt19937_64 gen;
    bool have_spare = false;
    double spare = 0.0;

    explicit Rng(uint64_t seed) : gen(seed) {}

    uint64_t next_u64() { return gen(); }

    /// Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(gen() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u1 = 0.0;
        do { u1 = next_double(); } while (u1 <= 0.0);
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare = r * std::sin(a);
        have_spare = true;
        return r * std::cos(a);
    }

    int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }
};

/// Uniform values in [-scale, +scale], reproducible from the seed.
inline Tensor rand_init(std::vector<int64_t> shape, Rng& rng, double scale) {
    if (scale <= 0.0) throw std::invalid_argument("rand_init: scale must be > 0");
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

// ---------------------------------------------------------------------------
// Primitive kernels
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) +
                                    " and " + shape_str(b.shape));
    int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            double av = a(i, p);
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(p * n)];
            double* orow = &out.data[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: need rank-2, got " + shape_str(a.shape));
    Tensor out({a.shape[1], a.shape[0]});
    for (int64_t i = 0; i < a.shape[0]; ++i)
        for (int64_t j = 0; j < a.shape[1]; ++j) out(j, i) = a(i, j);
    return out;
}

/// Per-channel 2-D cross-correlation with zero-fill padding. With
/// ph=(kh-1)/2, pw=(kw-1)/2 the spatial size is preserved. Even kernel
/// sizes are rejected; "same" padding is ambiguous for them.
inline Tensor dwconv2d(const Tensor& x, const Tensor& w, int64_t ph, int64_t pw) {
    if (x.rank() != 3 || w.rank() != 3)
        throw std::invalid_argument("dwconv2d: need [CxHxW] input and [Cxkhxkw] kernel, got " +
                                    shape_str(x.shape) + " and " + shape_str(w.shape));
    if (x.shape[0] != w.shape[0])
        throw std::invalid_argument("dwconv2d: channel mismatch " + shape_str(x.shape) +
                                    " vs " + shape_str(w.shape));
    int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    int64_t kh = w.shape[1], kw = w.shape[2];
    if (kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("dwconv2d: unsupported geometry, even kernel " + shape_str(w.shape));
    int64_t oh = H + 2 * ph - kh + 1;
    int64_t ow = W + 2 * pw - kw + 1;
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("dwconv2d: kernel larger than padded input");
    Tensor out({C, oh, ow});
    parallel_for(C, [&](int64_t c) {
        for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int64_t a = 0; a < kh; ++a) {
                    int64_t src_i = i + a - ph;
                    if (src_i < 0 || src_i >= H) continue;
                    for (int64_t b = 0; b < kw; ++b) {
                        int64_t src_j = j + b - pw;
                        if (src_j < 0 || src_j >= W) continue;
                        acc += w(c, a, b) * x(c, src_i, src_j);
                    }
                }
                out(c, i, j) = acc;
            }
        }
    });
    return out;
}

/// Sum along one axis; the output rank drops by one (rank-1 input gives
/// a single-element tensor).
inline Tensor reduce_sum(const Tensor& x, int64_t axis) {
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("reduce_sum: axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(x.shape));
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[static_cast<size_t>(i)];
    int64_t n = x.shape[static_cast<size_t>(axis)];

    std::vector<int64_t> oshape;
    for (int64_t i = 0; i < x.rank(); ++i)
        if (i != axis) oshape.push_back(x.shape[static_cast<size_t>(i)]);
    if (oshape.empty()) oshape.push_back(1);

    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k) {
            const double* src = &x.data[static_cast<size_t>((o * n + k) * inner)];
            double* dst = &out.data[static_cast<size_t>(o * inner)];
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return out;
}

template <typename F>
Tensor elementwise(const Tensor& x, F&& f) {
    Tensor out = x;
    for (double& v : out.data) v = f(v);
    return out;
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, F&& f) {
    if (a.shape != b.shape)
        throw std::invalid_argument("elementwise: shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise(a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise(a, b, [](double x, double y) { return x - y; });
}
inline Tensor scale(const Tensor& a, double s) {
    return elementwise(a, [s](double x) { return x * s; });
}
inline void add_inplace(Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("add_inplace: shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

/// max_i |a_i - b_i| / max(1e-30, max_i |b_i|): relative gap against the
/// reference tensor's overall magnitude.
inline double max_rel_diff(const Tensor& a, const Tensor& b) {
    double ref = 1e-30;
    for (double v : b.data) ref = std::max(ref, std::fabs(v));
    return max_abs_diff(a, b) / ref;
}

} // namespace imse
