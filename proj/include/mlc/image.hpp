#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mlc/rng.hpp"
#include "mlc/tensor.hpp"

namespace mlc {

// Grayscale images are (1, 1, H, W) float tensors with values in [0, 1].

// ---------------------------------------------------------------------------
// PGM / PPM I/O (binary P5 / P6, 8-bit)
// ---------------------------------------------------------------------------

namespace detail {

inline void skip_pnm_whitespace(std::istream& is) {
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            return;
        }
    }
}

} // namespace detail

inline void pgm_write(const std::string& path, const Tensor<float>& img) {
    namespace fs = std::filesystem;
    const Shape s = img.shape();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write PGM: " + tmp);
        os << "P5\n" << s.w << " " << s.h << "\n255\n";
        std::vector<unsigned char> row(static_cast<std::size_t>(s.w));
        for (int y = 0; y < s.h; ++y) {
            const float* p = img.data() + static_cast<std::size_t>(y) * s.w;
            for (int x = 0; x < s.w; ++x) {
                float v = p[x];
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                row[static_cast<std::size_t>(x)] =
                    static_cast<unsigned char>(std::lround(v * 255.f));
            }
            os.write(reinterpret_cast<const char*>(row.data()), s.w);
        }
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

inline Tensor<float> pgm_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open PGM: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("unparseable PGM (want P5): " + path);
    detail::skip_pnm_whitespace(is);
    int w = 0, h = 0, maxv = 0;
    is >> w;
    detail::skip_pnm_whitespace(is);
    is >> h;
    detail::skip_pnm_whitespace(is);
    is >> maxv;
    if (!is || w < 1 || h < 1 || maxv != 255)
        throw std::runtime_error("unparseable PGM header: " + path);
    is.get(); // single whitespace before payload
    Tensor<float> img(1, 1, h, w);
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        is.read(reinterpret_cast<char*>(row.data()), w);
        if (!is) throw std::runtime_error("truncated PGM payload: " + path);
        float* p = img.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x)
            p[x] = static_cast<float>(row[static_cast<std::size_t>(x)]) / 255.f;
    }
    return img;
}

// Pseudo-color rendering of a [0, 1] heatmap: fixed blue -> red table.
inline void ppm_write_heatmap(const std::string& path, const Tensor<float>& heat) {
    namespace fs = std::filesystem;
    static const auto lut = [] {
        std::vector<std::array<unsigned char, 3>> t(256);
        auto clamp01 = [](double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); };
        for (int i = 0; i < 256; ++i) {
            const double v = i / 255.0;
            t[static_cast<std::size_t>(i)] = {
                static_cast<unsigned char>(std::lround(255 * clamp01(1.5 - std::fabs(4 * v - 3.0)))),
                static_cast<unsigned char>(std::lround(255 * clamp01(1.5 - std::fabs(4 * v - 2.0)))),
                static_cast<unsigned char>(std::lround(255 * clamp01(1.5 - std::fabs(4 * v - 1.0))))};
        }
        return t;
    }();
    const Shape s = heat.shape();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write PPM: " + tmp);
        os << "P6\n" << s.w << " " << s.h << "\n255\n";
        std::vector<unsigned char> row(static_cast<std::size_t>(s.w) * 3);
        for (int y = 0; y < s.h; ++y) {
            const float* p = heat.data() + static_cast<std::size_t>(y) * s.w;
            for (int x = 0; x < s.w; ++x) {
                float v = p[x];
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                const auto& c = lut[static_cast<std::size_t>(std::lround(v * 255.f))];
                row[static_cast<std::size_t>(x) * 3 + 0] = c[0];
                row[static_cast<std::size_t>(x) * 3 + 1] = c[1];
                row[static_cast<std::size_t>(x) * 3 + 2] = c[2];
            }
            os.write(reinterpret_cast<const char*>(row.data()),
                     static_cast<std::streamsize>(row.size()));
        }
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

// Half-pixel-center bilinear sampling with border clamping.
inline Tensor<float> bilinear_resize(const Tensor<float>& img, int oh, int ow) {
    const Shape s = img.shape();
    Tensor<float> out(s.b, s.c, oh, ow);
    const double sy = static_cast<double>(s.h) / oh;
    const double sx = static_cast<double>(s.w) / ow;
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const float* src = img.plane(b, c);
            float* dst = out.plane(b, c);
            for (int y = 0; y < oh; ++y) {
                double fy = (y + 0.5) * sy - 0.5;
                if (fy < 0) fy = 0;
                if (fy > s.h - 1) fy = s.h - 1;
                const int y0 = static_cast<int>(fy);
                const int y1 = y0 + 1 < s.h ? y0 + 1 : y0;
                const double wy = fy - y0;
                for (int x = 0; x < ow; ++x) {
                    double fx = (x + 0.5) * sx - 0.5;
                    if (fx < 0) fx = 0;
                    if (fx > s.w - 1) fx = s.w - 1;
                    const int x0 = static_cast<int>(fx);
                    const int x1 = x0 + 1 < s.w ? x0 + 1 : x0;
                    const double wx = fx - x0;
                    const double top = src[y0 * s.w + x0] * (1 - wx) + src[y0 * s.w + x1] * wx;
                    const double bot = src[y1 * s.w + x0] * (1 - wx) + src[y1 * s.w + x1] * wx;
                    dst[y * ow + x] = static_cast<float>(top * (1 - wy) + bot * wy);
                }
            }
        }
    return out;
}

inline Tensor<float> center_crop(const Tensor<float>& img, int side) {
    const Shape s = img.shape();
    if (side > s.h || side > s.w)
        throw std::invalid_argument("center_crop side larger than image");
    const int oy = (s.h - side) / 2;
    const int ox = (s.w - side) / 2;
    Tensor<float> out(s.b, s.c, side, side);
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < side; ++y) {
                const float* src = img.plane(b, c) + static_cast<std::size_t>(oy + y) * s.w + ox;
                float* dst = out.plane(b, c) + static_cast<std::size_t>(y) * side;
                for (int x = 0; x < side; ++x) dst[x] = src[x];
            }
    return out;
}

// Per-image standardization: subtract mean, divide by std (floored at 1e-6).
template <typename T>
Tensor<T> standardize(const Tensor<T>& img) {
    Tensor<T> out(img.shape());
    const std::size_t n = img.size();
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += img[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = img[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double stddev = std::max(std::sqrt(var), 1e-6);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<T>((img[i] - mean) / stddev);
    return out;
}

// Emulates the acquisition pipeline: center crop to 440/512 of the side,
// bilinear resize to the target, standardize.
inline Tensor<float> preprocess(const Tensor<float>& img, int target) {
    const Shape s = img.shape();
    if (s.h != s.w)
        throw std::invalid_argument(detail::format_msg(
            "preprocess expects a square image, got ", s.str()));
    if (s.h < target)
        throw std::invalid_argument(detail::format_msg(
            "preprocess input side ", s.h, " smaller than target ", target));
    const int crop_side = static_cast<int>(std::lround(s.h * 440.0 / 512.0));
    Tensor<float> out = center_crop(img, std::max(crop_side, target));
    out = bilinear_resize(out, target, target);
    return standardize(out);
}

// Crop+resize without standardization; the training loop augments in [0, 1]
// space and standardizes afterwards.
inline Tensor<float> preprocess_raw(const Tensor<float>& img, int target) {
    const Shape s = img.shape();
    if (s.h != s.w)
        throw std::invalid_argument("preprocess expects a square image");
    if (s.h < target)
        throw std::invalid_argument("preprocess input smaller than target");
    const int crop_side = static_cast<int>(std::lround(s.h * 440.0 / 512.0));
    Tensor<float> out = center_crop(img, std::max(crop_side, target));
    return bilinear_resize(out, target, target);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentParams {
    double scale = 1.0;     // zoom factor, [0.9, 1.1]
    double angle = 0.0;     // radians, +/- 15 deg
    double crop_left = 0.0; // per-side crop fractions, [0, 0.05]
    double crop_right = 0.0;
    double crop_top = 0.0;
    double crop_bottom = 0.0;

    bool is_identity() const {
        return scale == 1.0 && angle == 0.0 && crop_left == 0.0 && crop_right == 0.0 &&
               crop_top == 0.0 && crop_bottom == 0.0;
    }
};

inline AugmentParams draw_augment_params(std::uint64_t seed) {
    Rng rng(seed);
    AugmentParams p;
    p.scale = rng.uniform(0.9, 1.1);
    p.crop_left = rng.uniform(0.0, 0.05);
    p.crop_right = rng.uniform(0.0, 0.05);
    p.crop_top = rng.uniform(0.0, 0.05);
    p.crop_bottom = rng.uniform(0.0, 0.05);
    p.angle = rng.uniform(-15.0, 15.0) * 3.14159265358979323846 / 180.0;
    return p;
}

// Single inverse-affine warp composing crop window, zoom and rotation;
// bilinear sampling with zero fill outside the source.
inline Tensor<float> apply_augment(const Tensor<float>& img, const AugmentParams& p) {
    if (p.is_identity()) return img;
    const Shape s = img.shape();
    const double W = s.w, H = s.h;
    const double cx = (p.crop_left + 1.0 - p.crop_right) / 2.0 * W;
    const double cy = (p.crop_top + 1.0 - p.crop_bottom) / 2.0 * H;
    const double ww = (1.0 - p.crop_left - p.crop_right);
    const double wh = (1.0 - p.crop_top - p.crop_bottom);
    const double cosb = std::cos(p.angle), sinb = std::sin(p.angle);
    Tensor<float> out(s);
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const float* src = img.plane(b, c);
            float* dst = out.plane(b, c);
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    const double dx = (x + 0.5 - W / 2.0) / p.scale * ww;
                    const double dy = (y + 0.5 - H / 2.0) / p.scale * wh;
                    const double sx = cx + cosb * dx + sinb * dy - 0.5;
                    const double sy = cy - sinb * dx + cosb * dy - 0.5;
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const double fx = sx - x0;
                    const double fy = sy - y0;
                    auto sample = [&](int yy, int xx) -> double {
                        if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) return 0.0;
                        return src[yy * s.w + xx];
                    };
                    const double v = sample(y0, x0) * (1 - fx) * (1 - fy) +
                                     sample(y0, x0 + 1) * fx * (1 - fy) +
                                     sample(y0 + 1, x0) * (1 - fx) * fy +
                                     sample(y0 + 1, x0 + 1) * fx * fy;
                    dst[y * s.w + x] = static_cast<float>(v);
                }
        }
    return out;
}

inline Tensor<float> augment(const Tensor<float>& img, std::uint64_t seed) {
    const Shape s = img.shape();
    if (s.h != s.w) throw std::invalid_argument("augment expects a square tensor");
    return apply_augment(img, draw_augment_params(seed));
}

} // namespace mlc
