#pragma once

// Binary PNM I/O, Catmull-Rom bicubic resampling, BT.601 luma, and the
// PSNR/SSIM metric pair. Images hold unit-range samples planar in memory
// (channel-interleaved only on disk). Metrics run on the luma plane for
// color inputs and over the full image; no border pixels are shaved.

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "wavesr/tensor.hpp"

namespace wavesr {

struct Image {
    std::int64_t width = 0, height = 0, channels = 0;
    std::vector<double> samples;  // planar, [channels x height x width]

    double at(std::int64_t c, std::int64_t y, std::int64_t x) const {
        return samples[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    double& at(std::int64_t c, std::int64_t y, std::int64_t x) {
        return samples[static_cast<std::size_t>((c * height + y) * width + x)];
    }
};

inline Image make_image(std::int64_t channels, std::int64_t height, std::int64_t width) {
    detail::require(channels == 1 || channels == 3, "make_image", "channels must be 1 or 3");
    detail::require(height >= 1 && width >= 1, "make_image", "dimensions must be positive");
    return {width, height, channels,
            std::vector<double>(static_cast<std::size_t>(channels * height * width), 0.0)};
}

inline Tensor image_to_tensor(const Image& img) {
    return Tensor({img.channels, img.height, img.width}, img.samples);
}

// Model outputs are clamped on the way back to pixel space so the unit-range
// invariant holds regardless of the caller.
inline Image tensor_to_image(const Tensor& t) {
    detail::require(t.ndim() == 3 && (t.dim(0) == 1 || t.dim(0) == 3), "tensor_to_image",
                    "expects [1|3 x H x W], got " + shape_str(t.shape()));
    Image img = make_image(t.dim(0), t.dim(1), t.dim(2));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        img.samples[static_cast<std::size_t>(i)] = std::clamp(t.data()[i], 0.0, 1.0);
    return img;
}

// ---------------------------------------------------------------------------
// PNM: binary P5 (gray) and P6 (rgb), maxval 255 only.

namespace detail {

inline std::string pnm_token(std::istream& is, const std::string& path) {
    // Whitespace-separated tokens; '#' starts a comment running to newline.
    int ch = is.get();
    while (ch != EOF && (std::isspace(ch) || ch == '#')) {
        if (ch == '#')
            while (ch != EOF && ch != '\n') ch = is.get();
        ch = is.get();
    }
    std::string tok;
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = is.get();
    }
    if (tok.empty()) throw std::runtime_error(path + ": truncated header");
    return tok;
}

inline std::int64_t pnm_number(std::istream& is, const std::string& path, const char* what) {
    const std::string tok = pnm_token(is, path);
    std::int64_t v = 0;
    for (char c : tok) {
        if (c < '0' || c > '9')
            throw std::runtime_error(path + ": bad " + what + " '" + tok + "'");
        v = v * 10 + (c - '0');
        if (v > (1 << 24)) throw std::runtime_error(path + ": " + what + " out of range");
    }
    return v;
}

}  // namespace detail

inline Image read_pnm(const std::string& path, std::int64_t expect_channels = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);

    const std::string magic = detail::pnm_token(f, path);
    std::int64_t channels = 0;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw std::runtime_error(path + ": unsupported magic '" + magic + "', want P5 or P6");
    if (expect_channels != 0 && channels != expect_channels)
        throw std::runtime_error(path + ": holds " + std::to_string(channels) +
                                 " channel(s), caller wants " + std::to_string(expect_channels));

    const std::int64_t width = detail::pnm_number(f, path, "width");
    const std::int64_t height = detail::pnm_number(f, path, "height");
    const std::int64_t maxval = detail::pnm_number(f, path, "maxval");
    if (width < 1 || height < 1) throw std::runtime_error(path + ": non-positive dimensions");
    if (maxval != 255)
        throw std::runtime_error(path + ": maxval " + std::to_string(maxval) + ", only 255");

    // The single whitespace byte after maxval is consumed as that token's
    // terminator; the payload starts immediately.
    const std::size_t count = static_cast<std::size_t>(width * height * channels);
    std::vector<unsigned char> raw(count);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(f.gcount()) != count)
        throw std::runtime_error(path + ": payload short, want " + std::to_string(count) +
                                 " bytes got " + std::to_string(f.gcount()));

    Image img = make_image(channels, height, width);
    std::size_t k = 0;
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x)
            for (std::int64_t c = 0; c < channels; ++c)
                img.at(c, y, x) = static_cast<double>(raw[k++]) / 255.0;
    return img;
}

inline void write_pnm(const Image& img, const std::string& path) {
    detail::require(img.channels == 1 || img.channels == 3, "write_pnm",
                    "channels must be 1 or 3");
    detail::require(img.width >= 1 && img.height >= 1, "write_pnm", "empty image");

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";

    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(img.width * img.height * img.channels));
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            for (std::int64_t c = 0; c < img.channels; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Separable bicubic resampling, Catmull-Rom coefficient a = -0.5, edge
// clamped. Output pixel centers map to (o + 0.5) * in/out - 0.5 in source
// coordinates.

namespace detail {

inline double catmull_rom(double t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

// One separable pass along the fastest axis; rows indexes the slower one.
inline std::vector<double> resample_axis(const std::vector<double>& src, std::int64_t rows,
                                         std::int64_t in_len, std::int64_t out_len) {
    std::vector<double> dst(static_cast<std::size_t>(rows * out_len));
    const double step = static_cast<double>(in_len) / static_cast<double>(out_len);
    for (std::int64_t o = 0; o < out_len; ++o) {
        const double pos = (static_cast<double>(o) + 0.5) * step - 0.5;
        const std::int64_t base = static_cast<std::int64_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(base);
        double wgt[4];
        std::int64_t idx[4];
        for (int k = 0; k < 4; ++k) {
            wgt[k] = catmull_rom(frac - static_cast<double>(k - 1));
            idx[k] = std::clamp<std::int64_t>(base + k - 1, 0, in_len - 1);
        }
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* row = src.data() + r * in_len;
            dst[static_cast<std::size_t>(r * out_len + o)] =
                wgt[0] * row[idx[0]] + wgt[1] * row[idx[1]] + wgt[2] * row[idx[2]] +
                wgt[3] * row[idx[3]];
        }
    }
    return dst;
}

}  // namespace detail

inline Image bicubic_resize(const Image& img, std::int64_t out_w, std::int64_t out_h) {
    detail::require(out_w >= 1 && out_h >= 1, "bicubic_resize",
                    "target extents must be positive");
    Image out = make_image(img.channels, out_h, out_w);
    for (std::int64_t c = 0; c < img.channels; ++c) {
        std::vector<double> plane(
            img.samples.begin() + static_cast<std::ptrdiff_t>(c * img.height * img.width),
            img.samples.begin() + static_cast<std::ptrdiff_t>((c + 1) * img.height * img.width));
        plane = detail::resample_axis(plane, img.height, img.width, out_w);

        // Transpose, resample the vertical axis, transpose back.
        std::vector<double> t(static_cast<std::size_t>(out_w * img.height));
        for (std::int64_t y = 0; y < img.height; ++y)
            for (std::int64_t x = 0; x < out_w; ++x)
                t[static_cast<std::size_t>(x * img.height + y)] =
                    plane[static_cast<std::size_t>(y * out_w + x)];
        t = detail::resample_axis(t, out_w, img.height, out_h);
        for (std::int64_t x = 0; x < out_w; ++x)
            for (std::int64_t y = 0; y < out_h; ++y)
                out.at(c, y, x) = t[static_cast<std::size_t>(x * out_h + y)];
    }
    return out;
}

inline Image rgb_to_y(const Image& img) {
    detail::require(img.channels == 3, "rgb_to_y", "expects a 3-channel image");
    Image out = make_image(1, img.height, img.width);
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            out.at(0, y, x) =
                0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics. Both compare luma planes (color inputs are converted first) and
// both are symmetric in their arguments.

namespace detail {

inline const Image& as_luma(const Image& img, Image& storage) {
    if (img.channels == 1) return img;
    storage = rgb_to_y(img);
    return storage;
}

inline void require_same_image_shape(const char* op, const Image& a, const Image& b) {
    detail::require(a.width == b.width && a.height == b.height && a.channels == b.channels, op,
                    "image shapes differ: " + std::to_string(a.channels) + "x" +
                        std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                        std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                        std::to_string(b.width));
}

}  // namespace detail

inline double psnr(const Image& a, const Image& b) {
    detail::require_same_image_shape("psnr", a, b);
    Image sa, sb;
    const Image& ya = detail::as_luma(a, sa);
    const Image& yb = detail::as_luma(b, sb);
    double mse = 0.0;
    for (std::size_t i = 0; i < ya.samples.size(); ++i) {
        const double d = ya.samples[i] - yb.samples[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ya.samples.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

inline double ssim(const Image& a, const Image& b) {
    detail::require_same_image_shape("ssim", a, b);
    constexpr std::int64_t kWin = 11;
    detail::require(a.width >= kWin && a.height >= kWin, "ssim",
                    "image smaller than the 11x11 window");
    Image sa, sb;
    const Image& ya = detail::as_luma(a, sa);
    const Image& yb = detail::as_luma(b, sb);

    double g[kWin];
    for (std::int64_t i = 0; i < kWin; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    }
    double w[kWin][kWin], wsum = 0.0;
    for (std::int64_t i = 0; i < kWin; ++i)
        for (std::int64_t j = 0; j < kWin; ++j) wsum += (w[i][j] = g[i] * g[j]);
    for (auto& row : w)
        for (auto& v : row) v /= wsum;

    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t ty = 0; ty + kWin <= ya.height; ++ty)
        for (std::int64_t tx = 0; tx + kWin <= ya.width; ++tx) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (std::int64_t i = 0; i < kWin; ++i)
                for (std::int64_t j = 0; j < kWin; ++j) {
                    const double px = ya.at(0, ty + i, tx + j);
                    const double py = yb.at(0, ty + i, tx + j);
                    mx += w[i][j] * px;
                    my += w[i][j] * py;
                    xx += w[i][j] * px * px;
                    yy += w[i][j] * py * py;
                    xy += w[i][j] * px * py;
                }
            const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
            total += ((2 * mx * my + kC1) * (2 * cov + kC2)) /
                     ((mx * mx + my * my + kC1) * (vx + vy + kC2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace wavesr
