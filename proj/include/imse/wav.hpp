#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>

#include "imse/tensor.hpp"

namespace imse {

// RIFF/WAVE, PCM 16-bit little-endian, mono or stereo. Stereo is downmixed
// to mono on read (with a warning on stderr). Samples are normalized by
// 1/32768, so a mono read/write round trip reproduces the payload exactly.

struct WavFile {
    int64_t sample_rate = 16000;
    int64_t channels = 1;
    std::vector<double> samples; // normalized to [-1, 1]
};

namespace detail {

inline uint32_t rd_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t rd_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

} // namespace detail

inline WavFile wav_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("wav: " + path + " is not a RIFF/WAVE file");

    bool have_fmt = false;
    uint16_t channels = 0, bits = 0, codec = 0;
    uint32_t rate = 0;
    const unsigned char* data = nullptr;
    uint32_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + pos;
        uint32_t size = detail::rd_u32(hdr + 4);
        if (pos + 8 + size > bytes.size())
            throw std::runtime_error("wav: truncated chunk in " + path);
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (size < 16) throw std::runtime_error("wav: malformed fmt chunk in " + path);
            codec = detail::rd_u16(hdr + 8);
            channels = detail::rd_u16(hdr + 10);
            rate = detail::rd_u32(hdr + 12);
            bits = detail::rd_u16(hdr + 22);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = hdr + 8;
            data_len = size;
        }
        pos += 8 + size + (size % 2); // chunks are word-aligned
    }
    if (!have_fmt || data == nullptr)
        throw std::runtime_error("wav: " + path + " is missing fmt or data chunk");
    if (codec != 1 || bits != 16)
        throw std::runtime_error("wav: " + path + " uses an unsupported codec (need PCM 16-bit)");
    if (channels != 1 && channels != 2)
        throw std::runtime_error("wav: " + path + " has " + std::to_string(channels) +
                                 " channels (need mono or stereo)");

    int64_t n_frames = data_len / (2 * channels);
    WavFile wav;
    wav.sample_rate = rate;
    wav.channels = 1;
    wav.samples.resize(static_cast<size_t>(n_frames));
    if (channels == 2)
        std::fprintf(stderr, "wav: %s is stereo, downmixing to mono\n", path.c_str());
    for (int64_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int64_t c = 0; c < channels; ++c) {
            const unsigned char* p = data + 2 * (i * channels + c);
            int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
            acc += static_cast<double>(s) / 32768.0;
        }
        wav.samples[static_cast<size_t>(i)] = acc / static_cast<double>(channels);
    }
    return wav;
}

inline void wav_write(const std::string& path, const WavFile& wav) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("wav: cannot open " + path + " for writing");
    uint32_t data_len = static_cast<uint32_t>(wav.samples.size() * 2);
    uint32_t riff_len = 36 + data_len;

    auto w16 = [&](uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        os.write(reinterpret_cast<char*>(b), 2);
    };
    auto w32 = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<char*>(b), 4);
    };

    os.write("RIFF", 4);
    w32(riff_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    w32(16);
    w16(1); // PCM
    w16(1); // mono
    w32(static_cast<uint32_t>(wav.sample_rate));
    w32(static_cast<uint32_t>(wav.sample_rate * 2));
    w16(2);  // block align
    w16(16); // bits
    os.write("data", 4);
    w32(data_len);
    for (double x : wav.samples) {
        double scaled = std::lrint(std::max(-1.0, std::min(1.0, x)) * 32768.0);
        int16_t s = static_cast<int16_t>(std::max(-32768.0, std::min(32767.0, scaled)));
        w16(static_cast<uint16_t>(s));
    }
    if (!os) throw std::runtime_error("wav: write failed for " + path);
}

/// Linear-interpolation resampler; fine for the desk-scale pipeline.
inline std::vector<double> resample_linear(const std::vector<double>& x, int64_t from_rate,
                                           int64_t to_rate) {
    if (from_rate == to_rate) return x;
    if (x.empty()) return {};
    int64_t out_len = static_cast<int64_t>(x.size()) * to_rate / from_rate;
    std::vector<double> out(static_cast<size_t>(out_len));
    double step = static_cast<double>(from_rate) / static_cast<double>(to_rate);
    for (int64_t i = 0; i < out_len; ++i) {
        double pos = static_cast<double>(i) * step;
        int64_t lo = static_cast<int64_t>(pos);
        int64_t hi = std::min<int64_t>(lo + 1, static_cast<int64_t>(x.size()) - 1);
        double frac = pos - static_cast<double>(lo);
        out[static_cast<size_t>(i)] =
            (1.0 - frac) * x[static_cast<size_t>(lo)] + frac * x[static_cast<size_t>(hi)];
    }
    return out;
}

} // namespace imse
