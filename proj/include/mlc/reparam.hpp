#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mlc/models.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// BN folding and kernel padding (exact algebra)
// ---------------------------------------------------------------------------

// Absorbs infer-mode batch norm into the preceding convolution:
//   scale_c = gamma_c / sqrt(var_c + eps)
//   W'_c    = scale_c * W_c
//   b'_c    = beta_c + (b_c - mean_c) * scale_c
// The returned conv always carries a bias.
template <typename T>
ConvParams<T> fold_bn_into_conv(const ConvParams<T>& conv, const BatchNormParams<T>& bn) {
    if (bn.channels() != conv.out_channels)
        throw std::invalid_argument(detail::format_msg(
            "fold_bn_into_conv: bn channels ", bn.channels(), " vs conv out ",
            conv.out_channels));
    ConvParams<T> out = conv;
    out.bias.assign(static_cast<std::size_t>(conv.out_channels), T(0));
    const std::size_t per_oc = out.weight.size() / static_cast<std::size_t>(conv.out_channels);
    for (int c = 0; c < conv.out_channels; ++c) {
        const T denom = bn.running_var[c] + bn.epsilon;
        if (!(denom > T(0)))
            throw numeric_error(detail::format_msg(
                "fold_bn_into_conv: running_var + epsilon <= 0 in channel ", c));
        const T scale = bn.gamma[c] / std::sqrt(denom);
        T* w = out.weight.data() + static_cast<std::size_t>(c) * per_oc;
        for (std::size_t i = 0; i < per_oc; ++i) w[i] *= scale;
        const T b_in = conv.has_bias() ? conv.bias[c] : T(0);
        out.bias[c] = bn.beta[c] + (b_in - bn.running_mean[c]) * scale;
    }
    return out;
}

// Embeds a depthwise 1x1 kernel at the center of a 3x3 kernel. With pad 1,
// the padded conv reproduces the pad-0 1x1 conv everywhere, borders included.
template <typename T>
ConvParams<T> pad_1x1_to_3x3(const ConvParams<T>& conv1) {
    if (conv1.kernel_h != 1 || conv1.kernel_w != 1)
        throw std::invalid_argument("pad_1x1_to_3x3 expects a 1x1 kernel");
    ConvParams<T> out = conv1;
    out.kernel_h = out.kernel_w = 3;
    out.padding = 1;
    out.weight = Tensor<T>(conv1.out_channels, conv1.in_channels / conv1.groups, 3, 3);
    for (int oc = 0; oc < conv1.out_channels; ++oc)
        for (int k = 0; k < conv1.in_channels / conv1.groups; ++k)
            out.weight.at(oc, k, 1, 1) = conv1.weight.at(oc, k, 0, 0);
    return out;
}

// ---------------------------------------------------------------------------
// RECblock fusion
// ---------------------------------------------------------------------------

// Merges the dual branch into a single 3x3 depthwise conv with bias:
//   W = fold(branch3).W + pad(fold(branch1).W),  b = b3' + b1'
template <typename T>
void fuse_rec_block(RecBlock<T>& rec) {
    if (rec.phase == RecPhase::inference)
        throw invalid_state("RECblock is already fused");
    ConvParams<T> f3 = fold_bn_into_conv(rec.branch3, rec.bn3);
    ConvParams<T> f1 = pad_1x1_to_3x3(fold_bn_into_conv(rec.branch1, rec.bn1));
    ConvParams<T> fused = f3;
    for (std::size_t i = 0; i < fused.weight.size(); ++i) fused.weight[i] += f1.weight[i];
    for (int c = 0; c < fused.out_channels; ++c) fused.bias[c] += f1.bias[c];
    rec.fused = std::move(fused);
    rec.phase = RecPhase::inference;
}

// True when every running stat still sits at its initialization value; fusing
// such a block is valid algebra but means the stats were never trained.
template <typename T>
bool has_default_stats(const RecBlock<T>& rec) {
    auto is_default = [](const BatchNormParams<T>& bn) {
        for (const T& m : bn.running_mean)
            if (m != T(0)) return false;
        for (const T& v : bn.running_var)
            if (v != T(1)) return false;
        return true;
    };
    return is_default(rec.bn3) && is_default(rec.bn1);
}

// ---------------------------------------------------------------------------
// Whole-model fusion and equivalence verification
// ---------------------------------------------------------------------------

// Pure transformation: returns a copy with every RECblock fused. Everything
// else (stem/downsample BN, LAFE BN) keeps its infer-mode semantics.
template <typename T>
MultiViewModel<T> fuse_model(const MultiViewModel<T>& model, int* default_stat_blocks = nullptr) {
    MultiViewModel<T> fused = model;
    int warn = 0;
    for_each_rec_block(fused, [&](RecBlock<T>& rec) {
        if (has_default_stats(rec)) ++warn;
        fuse_rec_block(rec);
    });
    fused.phase = ModelPhase::inference;
    if (default_stat_blocks) *default_stat_blocks = warn;
    return fused;
}

struct EquivalenceReport {
    int samples = 0;
    double max_abs_deviation = 0.0;
    double tolerance = 0.0;
    bool argmax_identical = true;
    bool default_stats_warning = false;
    bool pass = false;
};

// Compares training-phase and fused logits over n seeded random inputs.
template <typename T>
EquivalenceReport verify_equivalence(const MultiViewModel<T>& m_train,
                                     const MultiViewModel<T>& m_fused, int n, double tol,
                                     int image_size = 64, std::uint64_t seed = 11) {
    if (n < 1) throw std::invalid_argument("verify_equivalence needs n >= 1");
    EquivalenceReport rep;
    rep.samples = n;
    rep.tolerance = tol;
    MultiViewModel<T>& mt = const_cast<MultiViewModel<T>&>(m_train);
    for_each_rec_block(mt, [&](RecBlock<T>& rec) {
        if (rec.phase == RecPhase::training && has_default_stats(rec))
            rep.default_stats_warning = true;
    });
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        std::vector<Tensor<T>> views;
        for (int v = 0; v < m_train.views; ++v) {
            Tensor<T> img(1, m_train.cfg.in_channels, image_size, image_size);
            img.fill_normal(rng, T(0), T(1));
            views.push_back(std::move(img));
        }
        Tensor<T> a = m_train.forward(views);
        Tensor<T> b = m_fused.forward(views);
        int arg_a = 0, arg_b = 0;
        for (int k = 1; k < m_train.num_classes; ++k) {
            if (a[static_cast<std::size_t>(k)] > a[static_cast<std::size_t>(arg_a)]) arg_a = k;
            if (b[static_cast<std::size_t>(k)] > b[static_cast<std::size_t>(arg_b)]) arg_b = k;
        }
        if (arg_a != arg_b) rep.argmax_identical = false;
        for (std::size_t k = 0; k < a.size(); ++k)
            rep.max_abs_deviation = std::max(
                rep.max_abs_deviation,
                static_cast<double>(std::fabs(a[k] - b[k])));
    }
    rep.pass = rep.max_abs_deviation < tol && rep.argmax_identical;
    return rep;
}

} // namespace mlc
