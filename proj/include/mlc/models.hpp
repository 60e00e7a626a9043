#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlc/blocks.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class FusionOp { max, add, min, concat };

inline const char* fusion_name(FusionOp op) {
    switch (op) {
        case FusionOp::max: return "max";
        case FusionOp::add: return "add";
        case FusionOp::min: return "min";
        case FusionOp::concat: return "concat";
    }
    return "?";
}

inline FusionOp parse_fusion(const std::string& s) {
    if (s == "max") return FusionOp::max;
    if (s == "add") return FusionOp::add;
    if (s == "min") return FusionOp::min;
    if (s == "concat" || s == "con") return FusionOp::concat;
    throw std::invalid_argument("unknown fusion op: " + s);
}

struct BackboneConfig {
    std::vector<int> depths{1, 1, 1, 1};
    std::vector<int> widths{96, 192, 384, 768};
    BlockVariant variant = BlockVariant::lctnet;
    int in_channels = 1;
    int stem_stride = 4; // stem kernel == stride
    int expand_ratio = 4;
    int expand_groups = 2;

    int total_stride() const { return stem_stride * (1 << (static_cast<int>(widths.size()) - 1)); }
    int top_width() const { return widths.back(); }

    void validate() const {
        if (depths.size() != widths.size() || depths.empty())
            throw std::invalid_argument("backbone needs matching non-empty depths/widths");
        for (int d : depths)
            if (d < 1) throw std::invalid_argument("stage depths must be >= 1");
        for (std::size_t i = 1; i < widths.size(); ++i)
            if (widths[i] <= widths[i - 1])
                throw std::invalid_argument("stage widths must be strictly increasing");
    }

    // Unmodified-shape ConvNeXt-Tiny stand-in used for cost anchoring
    // (3-channel 224x224 input, GELU, no grouped expand).
    static BackboneConfig convnext_tiny() {
        BackboneConfig c;
        c.depths = {3, 3, 9, 3};
        c.variant = BlockVariant::baseline;
        c.in_channels = 3;
        c.expand_ratio = 4;
        c.expand_groups = 1;
        return c;
    }

    static BackboneConfig lctnet() {
        BackboneConfig c;
        c.variant = BlockVariant::lctnet;
        c.expand_ratio = 4;
        c.expand_groups = 2;
        return c;
    }

    static BackboneConfig mlcnet() {
        BackboneConfig c;
        c.variant = BlockVariant::mlcnet;
        c.expand_ratio = 2;
        c.expand_groups = 2;
        return c;
    }

    static BackboneConfig from_arch(const std::string& arch) {
        if (arch == "convnext-tiny") return convnext_tiny();
        if (arch == "lctnet") return lctnet();
        if (arch == "mlcnet") return mlcnet();
        throw std::invalid_argument("unknown arch: " + arch +
                                    " (expected convnext-tiny|lctnet|mlcnet)");
    }
};

// ---------------------------------------------------------------------------
// Single-view backbone: stem -> stage1 -> down -> ... -> stage4
// ---------------------------------------------------------------------------

template <typename T>
struct Backbone {
    BackboneConfig cfg;
    ConvBnLayer<T> stem;
    std::vector<std::vector<LctBlock<T>>> stages;
    std::vector<ConvBnLayer<T>> downs;

    static Backbone make(const BackboneConfig& cfg) {
        cfg.validate();
        Backbone b;
        b.cfg = cfg;
        b.stem = ConvBnLayer<T>::make(cfg.in_channels, cfg.widths[0], cfg.stem_stride,
                                      cfg.stem_stride);
        for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
            std::vector<LctBlock<T>> blocks;
            for (int d = 0; d < cfg.depths[s]; ++d)
                blocks.push_back(LctBlock<T>::make(cfg.variant, cfg.widths[s],
                                                   cfg.expand_ratio, cfg.expand_groups));
            b.stages.push_back(std::move(blocks));
            if (s + 1 < cfg.widths.size())
                b.downs.push_back(ConvBnLayer<T>::make(cfg.widths[s], cfg.widths[s + 1], 2, 2));
        }
        return b;
    }

    // (B, in_channels, H, W) -> (B, top_width, H/stride, W/stride)
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> t = stem.forward(x);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            for (const auto& blk : stages[s]) t = blk.forward(t);
            if (s < downs.size()) t = downs[s].forward(t);
        }
        return t;
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        auto t = stem.forward_tape(tape, x, mode);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            for (auto& blk : stages[s]) t = blk.forward_tape(tape, t, mode);
            if (s < downs.size()) t = downs[s].forward_tape(tape, t, mode);
        }
        return t;
    }

    template <typename F>
    void visit_params(F&& f) {
        stem.visit_params("stem", f);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            for (std::size_t d = 0; d < stages[s].size(); ++d)
                stages[s][d].visit_params(
                    "stage" + std::to_string(s + 1) + ".block" + std::to_string(d), f);
            if (s < downs.size()) downs[s].visit_params("down" + std::to_string(s + 1), f);
        }
    }
    template <typename F>
    void visit_state(F&& f) {
        stem.visit_state("stem", f);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            for (std::size_t d = 0; d < stages[s].size(); ++d)
                stages[s][d].visit_state(
                    "stage" + std::to_string(s + 1) + ".block" + std::to_string(d), f);
            if (s < downs.size()) downs[s].visit_state("down" + std::to_string(s + 1), f);
        }
    }
};

// ---------------------------------------------------------------------------
// View fusion
// ---------------------------------------------------------------------------

// Elementwise max/add/min across per-view feature vectors, or channel concat.
template <typename T>
Tensor<T> fuse_views(const std::vector<Tensor<T>>& views, FusionOp op) {
    if (views.empty()) throw std::invalid_argument("fuse_views needs at least one view");
    for (const auto& v : views)
        if (!(v.shape() == views[0].shape()))
            throw std::invalid_argument(detail::format_msg(
                "fuse_views shape mismatch: ", v.shape().str(), " vs ",
                views[0].shape().str()));
    if (op == FusionOp::concat) return concat_channels(views);
    Tensor<T> out = views[0];
    for (std::size_t i = 1; i < views.size(); ++i) {
        EwKind k = op == FusionOp::max ? EwKind::max
                  : op == FusionOp::add ? EwKind::add
                                        : EwKind::min;
        out = elementwise(k, out, views[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-view model: one shared backbone applied to every wavelength view,
// fused feature vector, FC head.
// ---------------------------------------------------------------------------

enum class ModelPhase { training, inference };

template <typename T>
struct MultiViewModel {
    BackboneConfig cfg;
    Backbone<T> backbone;
    ConvParams<T> head; // 1x1 conv acting as the FC layer
    int num_classes = 4;
    int views = 3;
    FusionOp fusion = FusionOp::max;
    ModelPhase phase = ModelPhase::training;

    static MultiViewModel make(const BackboneConfig& cfg, int num_classes = 4, int views = 3,
                               FusionOp fusion = FusionOp::max) {
        if (views < 1) throw std::invalid_argument("views must be >= 1");
        MultiViewModel m;
        m.cfg = cfg;
        m.backbone = Backbone<T>::make(cfg);
        m.num_classes = num_classes;
        m.views = views;
        m.fusion = fusion;
        const int head_in = fusion == FusionOp::concat ? views * cfg.top_width()
                                                       : cfg.top_width();
        m.head = ConvParams<T>::make(head_in, num_classes, 1, 1, 1, 0, 1, true);
        return m;
    }

    // Per-view feature map U (used by CAM and the fusion path).
    Tensor<T> forward_features(const Tensor<T>& view) const { return backbone.forward(view); }

    // views.size() must equal the configured view count.
    Tensor<T> forward(const std::vector<Tensor<T>>& view_images) const {
        check_views(view_images.size());
        std::vector<Tensor<T>> pooled;
        pooled.reserve(view_images.size());
        for (const auto& img : view_images)
            pooled.push_back(adaptive_avg_pool_1x1(backbone.forward(img)));
        Tensor<T> fusedv = fuse_views(pooled, fusion);
        return conv2d(fusedv, head); // (B, K, 1, 1)
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape,
                                       const std::vector<typename Tape<T>::Var>& view_vars,
                                       BnMode mode) {
        check_views(view_vars.size());
        using Var = typename Tape<T>::Var;
        std::vector<Var> pooled;
        for (Var v : view_vars)
            pooled.push_back(tape.gap(backbone.forward_tape(tape, v, mode)));
        Var fusedv;
        if (fusion == FusionOp::concat) {
            fusedv = tape.concat(pooled);
        } else {
            fusedv = pooled[0];
            for (std::size_t i = 1; i < pooled.size(); ++i) {
                fusedv = fusion == FusionOp::max ? tape.emax(fusedv, pooled[i])
                         : fusion == FusionOp::add ? tape.add(fusedv, pooled[i])
                                                   : tape.emin(fusedv, pooled[i]);
            }
        }
        return tape.conv(fusedv, head);
    }

    template <typename F>
    void visit_params(F&& f) {
        backbone.visit_params(f);
        f(std::string("head.weight"), &head.weight, nullptr);
        f(std::string("head.bias"), nullptr, &head.bias);
    }
    template <typename F>
    void visit_state(F&& f) {
        backbone.visit_state(f);
    }

    std::vector<ParamRef<T>> param_refs() {
        std::vector<ParamRef<T>> refs;
        visit_params([&](const std::string& name, Tensor<T>* t, std::vector<T>* v) {
            refs.push_back(ParamRef<T>{name, t, v});
        });
        return refs;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, Tensor<T>* t, std::vector<T>* v) {
            n += t ? t->size() : v->size();
        });
        return n;
    }

private:
    void check_views(std::size_t n) const {
        if (static_cast<int>(n) != views)
            throw std::invalid_argument(detail::format_msg(
                "model configured for ", views, " views, got ", n));
    }
};

// Applies f to every RECblock in the model (MSRM-equipped blocks only).
template <typename T, typename F>
void for_each_rec_block(MultiViewModel<T>& model, F&& f) {
    for (auto& stage : model.backbone.stages)
        for (auto& blk : stage)
            if (blk.msrm)
                for (auto& rec : blk.msrm->recs) f(rec);
}

// Truncated normal(0, 0.02) for conv/FC weights, zero biases, identity BN.
// One stream over the fixed visiting order makes this reproducible.
template <typename T>
void init_weights(MultiViewModel<T>& model, std::uint64_t seed) {
    Rng rng(seed);
    model.visit_params([&](const std::string& name, Tensor<T>* t, std::vector<T>* v) {
        const bool is_gamma = name.ends_with(".gamma");
        const bool is_beta = name.ends_with(".beta");
        const bool is_bias = name.ends_with(".bias");
        if (t) {
            t->fill_trunc_normal(rng, static_cast<T>(0.02));
        } else if (is_gamma) {
            std::fill(v->begin(), v->end(), T(1));
        } else if (is_beta || is_bias) {
            std::fill(v->begin(), v->end(), T(0));
        }
    });
    model.visit_state([&](const std::string& name, std::vector<T>* v) {
        std::fill(v->begin(), v->end(), name.ends_with("_var") ? T(1) : T(0));
    });
}

// Precision cast for verification runs: copies every parameter and running
// stat into a model of another scalar type.
template <typename Dst, typename Src>
MultiViewModel<Dst> cast_model(MultiViewModel<Src>& src) {
    if (src.phase != ModelPhase::training)
        throw invalid_state("cast_model expects a training-phase model; cast before fusing");
    MultiViewModel<Dst> dst = MultiViewModel<Dst>::make(src.cfg, src.num_classes, src.views,
                                                        src.fusion);
    std::vector<std::pair<std::string, std::pair<const Tensor<Src>*, const std::vector<Src>*>>> sp;
    src.visit_params([&](const std::string& n, Tensor<Src>* t, std::vector<Src>* v) {
        sp.push_back({n, {t, v}});
    });
    std::size_t i = 0;
    dst.visit_params([&](const std::string& n, Tensor<Dst>* t, std::vector<Dst>* v) {
        if (i >= sp.size() || sp[i].first != n)
            throw invalid_state("model structures diverge at " + n);
        if (t) {
            const Tensor<Src>& s = *sp[i].second.first;
            *t = s.template cast<Dst>();
        } else {
            const std::vector<Src>& s = *sp[i].second.second;
            v->assign(s.size(), Dst(0));
            for (std::size_t k = 0; k < s.size(); ++k) (*v)[k] = static_cast<Dst>(s[k]);
        }
        ++i;
    });
    std::vector<std::pair<std::string, const std::vector<Src>*>> ss;
    src.visit_state([&](const std::string& n, std::vector<Src>* v) { ss.push_back({n, v}); });
    i = 0;
    dst.visit_state([&](const std::string& n, std::vector<Dst>* v) {
        if (i >= ss.size() || ss[i].first != n)
            throw invalid_state("model state diverges at " + n);
        const std::vector<Src>& s = *ss[i].second;
        v->assign(s.size(), Dst(0));
        for (std::size_t k = 0; k < s.size(); ++k) (*v)[k] = static_cast<Dst>(s[k]);
        ++i;
    });
    dst.phase = src.phase;
    return dst;
}

} // namespace mlc
