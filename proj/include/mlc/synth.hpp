#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mlc/image.hpp"
#include "mlc/rng.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// Classes and wavelengths
// ---------------------------------------------------------------------------

enum class AuroraClass : int { arc = 0, drapery = 1, hotspot = 2, radial = 3 };

constexpr int kNumClasses = 4;

inline const char* class_name(AuroraClass c) {
    switch (c) {
        case AuroraClass::arc: return "arc";
        case AuroraClass::drapery: return "drapery";
        case AuroraClass::hotspot: return "hotspot";
        case AuroraClass::radial: return "radial";
    }
    return "?";
}

inline AuroraClass parse_class(const std::string& s) {
    for (int i = 0; i < kNumClasses; ++i)
        if (s == class_name(static_cast<AuroraClass>(i))) return static_cast<AuroraClass>(i);
    throw std::invalid_argument("unknown aurora class: " + s);
}

// Fixed view ordering used everywhere views are stacked.
inline const std::array<std::string, 3>& wavelength_tags() {
    static const std::array<std::string, 3> tags{"427.8", "557.7", "630.0"};
    return tags;
}

inline int wavelength_index(const std::string& tag) {
    const auto& tags = wavelength_tags();
    for (int i = 0; i < 3; ++i)
        if (tags[static_cast<std::size_t>(i)] == tag) return i;
    throw std::invalid_argument("unknown wavelength tag: " + tag);
}

// ---------------------------------------------------------------------------
// Generator configuration
// ---------------------------------------------------------------------------

struct SynthConfig {
    int image_size = 512;
    int samples_per_class = 100;
    std::uint64_t master_seed = 7;
    double noise_level = 0.04;
    // Per-(class, wavelength) structure visibility, rows in class-code order,
    // columns in wavelength-tag order (427.8, 557.7, 630.0). Every scene also
    // carries a class-independent diffuse glow, so an invisible structure
    // never identifies a class by absence. The zeros make each single
    // wavelength genuinely ambiguous for some class pair (427.8 shows only
    // hotspots; the corona types vanish at 557.7; arcs sink into the glow at
    // 630.0), while the three views together separate everything -- the
    // paper's complementary-information setting.
    std::array<std::array<double, 3>, 4> visibility{{
        {0.00, 1.00, 0.00}, // arc
        {0.00, 0.00, 1.00}, // drapery
        {0.90, 1.00, 0.00}, // hotspot
        {0.00, 0.00, 1.00}, // radial
    }};
    // Optional per-class sample multipliers mirroring the real data imbalance.
    bool imbalanced = false;

    int samples_for(AuroraClass c) const {
        if (!imbalanced) return samples_per_class;
        // Proportions 3934 : 1786 : 1497 : 784 scaled to samples_per_class max.
        static const double props[4] = {1.0, 0.454, 0.381, 0.199};
        const int n = static_cast<int>(std::lround(
            samples_per_class * props[static_cast<int>(c)]));
        return std::max(n, 2);
    }
};

// Per-wavelength rendering: global intensity scale, base level, blur radius.
struct WavelengthRender {
    double scale;
    double base;
    double blur_sigma;
    double noise_scale;
};

inline const std::array<WavelengthRender, 3>& wavelength_render() {
    static const std::array<WavelengthRender, 3> r{{
        {0.30, 0.02, 1.2, 1.5},  // 427.8: globally faint, noisiest
        {1.00, 0.05, 0.0, 0.8},  // 557.7: sharpest, highest contrast
        {1.05, 0.12, 2.0, 1.0},  // 630.0: brighter and more diffuse
    }};
    return r;
}

// Geometry metadata exposed for analysis tests (e.g. CAM localization).
struct PhantomMeta {
    std::vector<double> arc_rows;   // band center rows in pixels
    double focal_x = -1, focal_y = -1;
};

namespace detail {

// Class-independent diffuse glow: a broad east-west swath every scene
// carries in every channel.
inline Tensor<float> render_common_glow(std::uint64_t scene_seed, int cls, int size) {
    Rng rng(Rng::mix(scene_seed, static_cast<std::uint64_t>(cls) * 131 + 5501));
    const double S = size;
    const double cy = rng.uniform(0.25, 0.75) * S;
    const double sigma = rng.uniform(0.10, 0.22) * S;
    const double amp = rng.uniform(0.25, 0.45);
    const double tilt = rng.uniform(-0.04, 0.04);
    const double x0 = rng.uniform(0.0, 0.1) * S;
    const double x1 = S - rng.uniform(0.0, 0.1) * S;
    Tensor<float> glow(1, 1, size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            if (x < x0 || x > x1) continue;
            const double d = y - (cy + tilt * (x - S / 2));
            glow[static_cast<std::size_t>(y) * size + x] =
                static_cast<float>(amp * std::exp(-0.5 * d * d / (sigma * sigma)));
        }
    return glow;
}

} // namespace detail

namespace detail {

inline void separable_gaussian_blur(Tensor<float>& img, double sigma) {
    if (sigma <= 0.05) return;
    const Shape s = img.shape();
    const int radius = std::max(1, static_cast<int>(std::ceil(sigma * 3)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    Tensor<float> tmp(s);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                int xx = x + i;
                xx = xx < 0 ? 0 : (xx >= s.w ? s.w - 1 : xx);
                acc += img[static_cast<std::size_t>(y) * s.w + xx] *
                       k[static_cast<std::size_t>(i + radius)];
            }
            tmp[static_cast<std::size_t>(y) * s.w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                int yy = y + i;
                yy = yy < 0 ? 0 : (yy >= s.h ? s.h - 1 : yy);
                acc += tmp[static_cast<std::size_t>(yy) * s.w + x] *
                       k[static_cast<std::size_t>(i + radius)];
            }
            img[static_cast<std::size_t>(y) * s.w + x] = static_cast<float>(acc);
        }
}

// Structure field for one scene; geometry depends only on (class, seed).
inline Tensor<float> render_structure(AuroraClass cls, std::uint64_t scene_seed, int size,
                                      PhantomMeta* meta) {
    Rng rng(Rng::mix(scene_seed, static_cast<std::uint64_t>(cls) + 101));
    const double S = size;
    Tensor<float> field(1, 1, size, size);
    auto px = [&](int y, int x) -> float& {
        return field[static_cast<std::size_t>(y) * size + x];
    };

    switch (cls) {
        case AuroraClass::arc: {
            // 1-3 east-west bands: long horizontally, narrow vertically.
            const int bands = rng.uniform_int(1, 3);
            for (int i = 0; i < bands; ++i) {
                const double cy = rng.uniform(0.18, 0.82) * S;
                const double sigma = rng.uniform(0.018, 0.045) * S;
                const double amp = rng.uniform(0.55, 0.95);
                const double tilt = rng.uniform(-0.05, 0.05);
                const double x0 = rng.uniform(0.0, 0.15) * S;
                const double x1 = S - rng.uniform(0.0, 0.15) * S;
                if (meta) meta->arc_rows.push_back(cy);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        if (x < x0 || x > x1) continue;
                        const double d = y - (cy + tilt * (x - S / 2));
                        px(y, x) += static_cast<float>(
                            amp * std::exp(-0.5 * d * d / (sigma * sigma)));
                    }
            }
            break;
        }
        case AuroraClass::drapery: {
            // Faint vertical ray texture (the diffuse part comes from the
            // scene's common glow).
            const int rays = rng.uniform_int(35, 55);
            for (int i = 0; i < rays; ++i) {
                const double rx = rng.uniform(0.02, 0.98) * S;
                const double sig = rng.uniform(0.004, 0.012) * S;
                const double amp = rng.uniform(0.08, 0.22);
                const double y0 = rng.uniform(0.05, 0.3) * S;
                const double y1 = rng.uniform(0.65, 0.95) * S;
                const double slant = rng.uniform(-0.08, 0.08);
                for (int y = 0; y < size; ++y) {
                    if (y < y0 || y > y1) continue;
                    const double env =
                        std::min(1.0, std::min((y - y0) / (0.1 * S), (y1 - y) / (0.1 * S)));
                    const double cx = rx + slant * (y - S / 2);
                    const int xa = std::max(0, static_cast<int>(cx - 4 * sig));
                    const int xb = std::min(size - 1, static_cast<int>(cx + 4 * sig) + 1);
                    for (int x = xa; x <= xb; ++x) {
                        const double d = x - cx;
                        px(y, x) += static_cast<float>(
                            amp * env * std::exp(-0.5 * d * d / (sig * sig)));
                    }
                }
            }
            break;
        }
        case AuroraClass::hotspot: {
            // Bright compact blobs plus irregular patches.
            const int blobs = rng.uniform_int(3, 7);
            for (int i = 0; i < blobs; ++i) {
                const double cx = rng.uniform(0.15, 0.85) * S;
                const double cy = rng.uniform(0.15, 0.85) * S;
                const double sa = rng.uniform(0.02, 0.06) * S;
                const double sb = rng.uniform(0.02, 0.06) * S;
                const double rot = rng.uniform(0.0, 3.14159);
                const double amp = rng.uniform(0.6, 1.0);
                const double cr = std::cos(rot), sr = std::sin(rot);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        const double dx = x - cx, dy = y - cy;
                        const double u = cr * dx + sr * dy;
                        const double v = -sr * dx + cr * dy;
                        const double e = 0.5 * (u * u / (sa * sa) + v * v / (sb * sb));
                        if (e < 12) px(y, x) += static_cast<float>(amp * std::exp(-e));
                    }
            }
            const int patches = rng.uniform_int(2, 4);
            for (int i = 0; i < patches; ++i) {
                const double cx = rng.uniform(0.2, 0.8) * S;
                const double cy = rng.uniform(0.2, 0.8) * S;
                const int lobes = rng.uniform_int(3, 6);
                for (int j = 0; j < lobes; ++j) {
                    const double lx = cx + rng.uniform(-0.08, 0.08) * S;
                    const double ly = cy + rng.uniform(-0.08, 0.08) * S;
                    const double sig = rng.uniform(0.03, 0.07) * S;
                    const double amp = rng.uniform(0.2, 0.4);
                    for (int y = 0; y < size; ++y)
                        for (int x = 0; x < size; ++x) {
                            const double dx = x - lx, dy = y - ly;
                            const double e = 0.5 * (dx * dx + dy * dy) / (sig * sig);
                            if (e < 12) px(y, x) += static_cast<float>(amp * std::exp(-e));
                        }
                }
            }
            break;
        }
        case AuroraClass::radial: {
            // Rays converging toward a randomized focal point.
            const double fx = rng.uniform(0.25, 0.8) * S;
            const double fy = rng.uniform(0.25, 0.8) * S;
            if (meta) {
                meta->focal_x = fx;
                meta->focal_y = fy;
            }
            const int rays = rng.uniform_int(18, 30);
            std::vector<std::array<double, 4>> ray; // angle, width, amp, extent
            for (int i = 0; i < rays; ++i)
                ray.push_back({rng.uniform(0.0, 6.28318), rng.uniform(0.015, 0.035),
                               rng.uniform(0.3, 0.65), rng.uniform(0.35, 0.62) * S});
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double dx = x - fx, dy = y - fy;
                    const double r = std::sqrt(dx * dx + dy * dy);
                    if (r < 1.5) continue;
                    const double phi = std::atan2(dy, dx);
                    double acc = 0;
                    for (const auto& rs : ray) {
                        double dphi = phi - rs[0];
                        while (dphi > 3.14159265) dphi -= 6.2831853;
                        while (dphi < -3.14159265) dphi += 6.2831853;
                        const double arc_dist = dphi * r;
                        const double w = rs[1] * (r + 0.15 * S);
                        const double radial_env =
                            r < rs[3] ? std::min(1.0, (rs[3] - r) / (0.25 * rs[3])) : 0.0;
                        if (radial_env <= 0) continue;
                        acc += rs[2] * radial_env *
                               std::exp(-0.5 * arc_dist * arc_dist / (w * w));
                    }
                    px(y, x) += static_cast<float>(acc);
                }
            break;
        }
    }
    return field;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

// Deterministic in (class, wavelength, scene_seed, size). The same scene seed
// gives the same geometry across wavelengths; the wavelength controls
// intensity scale, base level, blur and noise.
inline Tensor<float> generate_phantom(AuroraClass cls, int wavelength, std::uint64_t scene_seed,
                                      int size, const SynthConfig& cfg = SynthConfig{},
                                      PhantomMeta* meta = nullptr) {
    if (size < 64) throw std::invalid_argument("phantom size must be >= 64");
    if (wavelength < 0 || wavelength > 2)
        throw std::invalid_argument("wavelength index must be 0..2");
    Tensor<float> field = detail::render_structure(cls, scene_seed, size, meta);
    Tensor<float> glow = detail::render_common_glow(scene_seed, static_cast<int>(cls), size);

    // Scene-level global modulation shared across wavelengths; the wide
    // amplitude jitter keeps per-class mean intensities overlapping.
    Rng mod(Rng::mix(scene_seed, static_cast<std::uint64_t>(cls) + 977));
    const double global_amp = mod.uniform(0.6, 1.4);
    const double bg0 = mod.uniform(0.01, 0.05);
    const double bg_slope = mod.uniform(-0.02, 0.02);

    const WavelengthRender& wr = wavelength_render()[static_cast<std::size_t>(wavelength)];
    const double vis = cfg.visibility[static_cast<std::size_t>(cls)]
                                     [static_cast<std::size_t>(wavelength)];

    Tensor<float> img(1, 1, size, size);
    for (int y = 0; y < size; ++y) {
        const double bg = bg0 + bg_slope * (static_cast<double>(y) / size);
        for (int x = 0; x < size; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * size + x;
            const double v = wr.base + bg +
                             global_amp * wr.scale * (glow[i] + vis * field[i]);
            img[i] = static_cast<float>(v);
        }
    }
    detail::separable_gaussian_blur(img, wr.blur_sigma);

    Rng noise(Rng::mix(Rng::mix(scene_seed, static_cast<std::uint64_t>(wavelength) + 31),
                       static_cast<std::uint64_t>(cls) + 7));
    const double namp = cfg.noise_level * wr.noise_scale;
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = img[i] + namp * noise.normal();
        img[i] = static_cast<float>(v < 0 ? 0 : (v > 1 ? 1 : v));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Dataset generation / loading
// ---------------------------------------------------------------------------

struct ViewSet {
    std::string split; // "train" | "test"
    AuroraClass label;
    int id = 0;
    std::array<std::string, 3> paths; // by wavelength index
    std::array<Tensor<float>, 3> images;
};

struct Manifest {
    std::vector<ViewSet> entries; // images not loaded
};

// Layout: <out>/<split>/<class>/<id>_<wavelength>.pgm, train:test = 6:4.
inline Manifest generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    Manifest manifest;
    for (int ci = 0; ci < kNumClasses; ++ci) {
        const auto cls = static_cast<AuroraClass>(ci);
        const int n = cfg.samples_for(cls);
        const int n_train = n * 6 / 10;
        for (int id = 0; id < n; ++id) {
            ViewSet vs;
            vs.split = id < n_train ? "train" : "test";
            vs.label = cls;
            vs.id = id;
            const fs::path dir = fs::path(out_dir) / vs.split / class_name(cls);
            fs::create_directories(dir);
            const std::uint64_t scene_seed =
                Rng::mix(cfg.master_seed, static_cast<std::uint64_t>(ci) * 1000003 +
                                              static_cast<std::uint64_t>(id));
            for (int w = 0; w < 3; ++w) {
                Tensor<float> img = generate_phantom(cls, w, scene_seed, cfg.image_size, cfg);
                const fs::path file =
                    dir / (std::to_string(id) + "_" + wavelength_tags()[static_cast<std::size_t>(w)] +
                           ".pgm");
                pgm_write(file.string(), img);
                vs.paths[static_cast<std::size_t>(w)] = file.string();
            }
            manifest.entries.push_back(std::move(vs));
        }
    }
    std::ofstream os(fs::path(out_dir) / "manifest.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest in " + out_dir);
    os << "split,class,id,path_427,path_557,path_630\n";
    for (const auto& vs : manifest.entries)
        os << vs.split << "," << class_name(vs.label) << "," << vs.id << "," << vs.paths[0]
           << "," << vs.paths[1] << "," << vs.paths[2] << "\n";
    return manifest;
}

// Loads every complete 3-wavelength sample; samples with missing wavelength
// files are reported and skipped.
inline std::vector<ViewSet> load_dataset(const std::string& dir,
                                         std::vector<std::string>* rejects = nullptr) {
    namespace fs = std::filesystem;
    std::vector<ViewSet> out;
    if (!fs::exists(dir)) throw std::runtime_error("dataset directory not found: " + dir);
    for (const char* split : {"train", "test"}) {
        const fs::path sp = fs::path(dir) / split;
        if (!fs::exists(sp)) continue;
        for (const auto& class_dir : fs::directory_iterator(sp)) {
            if (!class_dir.is_directory()) continue;
            const std::string cname = class_dir.path().filename().string();
            AuroraClass cls;
            try {
                cls = parse_class(cname);
            } catch (const std::invalid_argument&) {
                throw std::runtime_error("unknown class directory: " + class_dir.path().string());
            }
            // Collect ids present in this directory.
            std::map<int, std::array<std::string, 3>> by_id;
            for (const auto& f : fs::directory_iterator(class_dir.path())) {
                const std::string name = f.path().filename().string();
                const auto us = name.find('_');
                const auto dot = name.rfind(".pgm");
                if (us == std::string::npos || dot == std::string::npos) continue;
                const int id = std::stoi(name.substr(0, us));
                const std::string tag = name.substr(us + 1, dot - us - 1);
                by_id[id][static_cast<std::size_t>(wavelength_index(tag))] = f.path().string();
            }
            for (auto& [id, paths] : by_id) {
                std::string missing;
                for (int w = 0; w < 3; ++w)
                    if (paths[static_cast<std::size_t>(w)].empty())
                        missing += (missing.empty() ? "" : ",") +
                                   wavelength_tags()[static_cast<std::size_t>(w)];
                if (!missing.empty()) {
                    if (rejects)
                        rejects->push_back(detail::format_msg(
                            split, "/", cname, "/", id, " missing wavelengths: ", missing));
                    continue;
                }
                ViewSet vs;
                vs.split = split;
                vs.label = cls;
                vs.id = id;
                vs.paths = paths;
                for (int w = 0; w < 3; ++w)
                    vs.images[static_cast<std::size_t>(w)] =
                        pgm_read(paths[static_cast<std::size_t>(w)]);
                out.push_back(std::move(vs));
            }
        }
    }
    // Directory iteration order is unspecified; sort for reproducible
    // downstream sample order.
    std::sort(out.begin(), out.end(), [](const ViewSet& a, const ViewSet& b) {
        if (a.split != b.split) return a.split < b.split;
        if (a.label != b.label) return a.label < b.label;
        return a.id < b.id;
    });
    return out;
}

} // namespace mlc
