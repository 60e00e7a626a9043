#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "mlc/image.hpp"
#include "mlc/models.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// Parameter / FLOPs accounting. FLOPs are multiply-accumulate counts: conv
// and FC layers only; BN, activations, pooling and elementwise ops are
// excluded. This convention reproduces the published ConvNeXt-Tiny cost at
// 224x224 and anchors all comparisons.
// ---------------------------------------------------------------------------

struct CostRow {
    std::string name;
    unsigned long long params = 0;
    unsigned long long flops = 0; // MACs
    Shape out;
};

struct CostReport {
    std::vector<CostRow> rows;
    unsigned long long total_params = 0;
    unsigned long long total_flops = 0;

    void add(CostRow row) {
        total_params += row.params;
        total_flops += row.flops;
        rows.push_back(std::move(row));
    }
};

namespace detail {

template <typename T>
CostRow conv_row(const std::string& name, const ConvParams<T>& p, int h, int w, int views) {
    CostRow r;
    r.name = name;
    r.params = p.weight.size() + p.bias.size();
    const int ho = (h + 2 * p.padding - p.kernel_h) / p.stride + 1;
    const int wo = (w + 2 * p.padding - p.kernel_w) / p.stride + 1;
    r.flops = 1ULL * p.kernel_h * p.kernel_w * (p.in_channels / p.groups) * p.out_channels *
              ho * wo * static_cast<unsigned long long>(views);
    r.out = Shape{1, p.out_channels, ho, wo};
    return r;
}

template <typename T>
CostRow bn_row(const std::string& name, const BatchNormParams<T>& bn, int c, int h, int w) {
    CostRow r;
    r.name = name;
    r.params = bn.gamma.size() + bn.beta.size();
    r.flops = 0;
    r.out = Shape{1, c, h, w};
    return r;
}

} // namespace detail

// Per-layer cost breakdown at the given input size. Backbone rows carry
// flops multiplied by the view count (weights are shared, compute is not);
// the head is counted once.
template <typename T>
CostReport cost_report(MultiViewModel<T>& model, int image_h, int image_w) {
    CostReport rep;
    const int V = model.views;
    int h = image_h, w = image_w;

    auto add_rec = [&](const std::string& prefix, RecBlock<T>& rec) {
        if (rec.phase == RecPhase::inference) {
            rep.add(detail::conv_row(prefix + ".fused", *rec.fused, h, w, V));
            return;
        }
        rep.add(detail::conv_row(prefix + ".branch3", rec.branch3, h, w, V));
        rep.add(detail::bn_row(prefix + ".bn3", rec.bn3, rec.channels, h, w));
        rep.add(detail::conv_row(prefix + ".branch1", rec.branch1, h, w, V));
        rep.add(detail::bn_row(prefix + ".bn1", rec.bn1, rec.channels, h, w));
    };

    rep.add(detail::conv_row("stem.conv", model.backbone.stem.conv, h, w, V));
    h /= model.cfg.stem_stride;
    w /= model.cfg.stem_stride;
    rep.add(detail::bn_row("stem.bn", model.backbone.stem.bn, model.cfg.widths[0], h, w));

    for (std::size_t s = 0; s < model.backbone.stages.size(); ++s) {
        for (std::size_t d = 0; d < model.backbone.stages[s].size(); ++d) {
            LctBlock<T>& blk = model.backbone.stages[s][d];
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(d);
            if (blk.variant == BlockVariant::mlcnet) {
                for (std::size_t r = 0; r < blk.msrm->recs.size(); ++r)
                    add_rec(prefix + ".msrm.rec" + std::to_string(r + 2), blk.msrm->recs[r]);
                rep.add(detail::conv_row(prefix + ".msrm.merge", blk.msrm->merge, h, w, V));
            } else {
                rep.add(detail::conv_row(prefix + ".dw", blk.dw, h, w, V));
                rep.add(detail::bn_row(prefix + ".dw_bn", blk.dw_bn, blk.channels, h, w));
            }
            rep.add(detail::conv_row(prefix + ".expand", blk.expand, h, w, V));
            rep.add(detail::conv_row(prefix + ".project", blk.project, h, w, V));
            if (blk.variant == BlockVariant::mlcnet) {
                for (const char* br : {"global", "local"}) {
                    const bool global_b = br[0] == 'g';
                    LafeBranch<T>& lb = global_b ? blk.lafe->global_branch
                                                 : blk.lafe->local_branch;
                    const int bh = global_b ? 1 : h;
                    const int bw = global_b ? 1 : w;
                    const std::string lp = prefix + ".lafe." + br;
                    rep.add(detail::conv_row(lp + ".conv", lb.conv, bh, bw, V));
                    rep.add(detail::bn_row(lp + ".bn_a", lb.bn_a, blk.channels, bh, bw));
                    rep.add(detail::bn_row(lp + ".bn_b", lb.bn_b, blk.channels, bh, bw));
                }
            }
        }
        if (s < model.backbone.downs.size()) {
            const std::string dn = "down" + std::to_string(s + 1);
            rep.add(detail::conv_row(dn + ".conv", model.backbone.downs[s].conv, h, w, V));
            h /= 2;
            w /= 2;
            rep.add(detail::bn_row(dn + ".bn", model.backbone.downs[s].bn,
                                   model.cfg.widths[s + 1], h, w));
        }
    }
    rep.add(detail::conv_row("head", model.head, 1, 1, 1));
    return rep;
}

// Trainable scalars only (running stats excluded).
template <typename T>
unsigned long long count_params(MultiViewModel<T>& model) {
    return static_cast<unsigned long long>(model.param_count());
}

template <typename T>
unsigned long long count_flops(MultiViewModel<T>& model, int image_h, int image_w) {
    return cost_report(model, image_h, image_w).total_flops;
}

inline void write_cost_csv(const std::string& path, const CostReport& rep) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write cost CSV: " + path);
    os << "layer,params,flops,out_b,out_c,out_h,out_w\n";
    for (const auto& r : rep.rows)
        os << r.name << "," << r.params << "," << r.flops << "," << r.out.b << "," << r.out.c
           << "," << r.out.h << "," << r.out.w << "\n";
    os << "total," << rep.total_params << "," << rep.total_flops << ",,,,\n";
}

// ---------------------------------------------------------------------------
// Class activation maps: FC-weight-weighted sum of the final feature map,
// upsampled to the input size and min-max normalized (constant maps -> 0).
// ---------------------------------------------------------------------------

struct CamMap {
    Tensor<float> heat; // input H x W, values in [0, 1]
    int predicted = -1;
    int view = 0;
    int target_class = 0;
};

template <typename T>
std::vector<CamMap> cam(const MultiViewModel<T>& model,
                        const std::vector<Tensor<T>>& view_images, int target_class) {
    if (target_class < 0 || target_class >= model.num_classes)
        throw std::invalid_argument("cam: target class out of range");
    Tensor<T> logits = model.forward(view_images);
    int predicted = 0;
    for (int k = 1; k < model.num_classes; ++k)
        if (logits.at(0, k, 0, 0) > logits.at(0, predicted, 0, 0)) predicted = k;

    const int F = model.cfg.top_width();
    std::vector<CamMap> maps;
    for (std::size_t v = 0; v < view_images.size(); ++v) {
        Tensor<T> u = model.forward_features(view_images[v]);
        const Shape us = u.shape();
        Tensor<float> heat(1, 1, us.h, us.w);
        // With concat fusion each view owns a slice of the head columns;
        // otherwise the head weights are shared across views.
        const int col0 = model.fusion == FusionOp::concat ? static_cast<int>(v) * F : 0;
        for (int k = 0; k < F; ++k) {
            const T wkc = model.head.weight.at(target_class, col0 + k, 0, 0);
            const T* up = u.plane(0, k);
            for (int i = 0; i < us.h * us.w; ++i)
                heat[static_cast<std::size_t>(i)] += static_cast<float>(wkc * up[i]);
        }
        Tensor<float> big = bilinear_resize(heat, view_images[v].shape().h,
                                            view_images[v].shape().w);
        float mn = big[0], mx = big[0];
        for (std::size_t i = 0; i < big.size(); ++i) {
            mn = std::min(mn, big[i]);
            mx = std::max(mx, big[i]);
        }
        if (mx - mn > 1e-12f) {
            for (std::size_t i = 0; i < big.size(); ++i) big[i] = (big[i] - mn) / (mx - mn);
        } else {
            big.fill(0.f);
        }
        CamMap m;
        m.heat = std::move(big);
        m.predicted = predicted;
        m.view = static_cast<int>(v);
        m.target_class = target_class;
        maps.push_back(std::move(m));
    }
    return maps;
}

// Unnormalized single-view heat map; exposed for the linearity property.
template <typename T>
Tensor<float> cam_raw(const MultiViewModel<T>& model, const Tensor<T>& view_image, int view,
                      int target_class) {
    Tensor<T> u = model.forward_features(view_image);
    const Shape us = u.shape();
    const int F = model.cfg.top_width();
    const int col0 = model.fusion == FusionOp::concat ? view * F : 0;
    Tensor<float> heat(1, 1, us.h, us.w);
    for (int k = 0; k < F; ++k) {
        const T wkc = model.head.weight.at(target_class, col0 + k, 0, 0);
        const T* up = u.plane(0, k);
        for (int i = 0; i < us.h * us.w; ++i)
            heat[static_cast<std::size_t>(i)] += static_cast<float>(wkc * up[i]);
    }
    return heat;
}

// ---------------------------------------------------------------------------
// Inference benchmarking
// ---------------------------------------------------------------------------

struct LatencyStats {
    double mean_ms = 0;
    double p50_ms = 0;
    double p95_ms = 0;
    int runs = 0;
};

template <typename T>
LatencyStats benchmark_inference(const MultiViewModel<T>& model, int image_size, int warmup,
                                 int runs, std::uint64_t seed = 3) {
    if (runs < 10) throw std::invalid_argument("benchmark needs at least 10 runs");
    Rng rng(seed);
    std::vector<Tensor<T>> views;
    for (int v = 0; v < model.views; ++v) {
        Tensor<T> img(1, model.cfg.in_channels, image_size, image_size);
        img.fill_normal(rng, T(0), T(1));
        views.push_back(std::move(img));
    }
    for (int i = 0; i < warmup; ++i) (void)model.forward(views);
    std::vector<double> times;
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)model.forward(views);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    LatencyStats st;
    st.runs = runs;
    for (double t : times) st.mean_ms += t;
    st.mean_ms /= runs;
    st.p50_ms = sorted[static_cast<std::size_t>(runs / 2)];
    st.p95_ms = sorted[static_cast<std::size_t>(std::min(runs - 1, (runs * 95) / 100))];
    return st;
}

} // namespace mlc
