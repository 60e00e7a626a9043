#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mlc/autograd.hpp"
#include "mlc/ops.hpp"

namespace mlc {

// Parameter visitor callback: f(name, tensor_or_null, vector_or_null).
// Exactly one of the two pointers is non-null per call.

// ---------------------------------------------------------------------------
// RECblock: dual-branch depthwise conv (3x3 + 1x1, each with BN) in the
// training phase, a single fused 3x3 depthwise conv with bias at inference.
// ---------------------------------------------------------------------------

enum class RecPhase { training, inference };

template <typename T>
struct RecBlock {
    int channels = 0;
    ConvParams<T> branch3; // 3x3 DW, pad 1, no bias
    BatchNormParams<T> bn3;
    ConvParams<T> branch1; // 1x1 DW, pad 0, no bias
    BatchNormParams<T> bn1;
    std::optional<ConvParams<T>> fused; // 3x3 DW, pad 1, with bias
    RecPhase phase = RecPhase::training;

    static RecBlock make(int c) {
        RecBlock r;
        r.channels = c;
        r.branch3 = ConvParams<T>::make(c, c, 3, 3, 1, 1, c, false);
        r.bn3 = BatchNormParams<T>::make(c);
        r.branch1 = ConvParams<T>::make(c, c, 1, 1, 1, 0, c, false);
        r.bn1 = BatchNormParams<T>::make(c);
        return r;
    }

    // Inference semantics (BN uses running statistics).
    Tensor<T> forward(const Tensor<T>& x) const {
        if (phase == RecPhase::inference) {
            if (!fused)
                throw invalid_state("RECblock in inference phase has no fused parameters");
            return conv2d(x, *fused);
        }
        Tensor<T> a = batch_norm_infer(conv2d(x, branch3), bn3);
        Tensor<T> b = batch_norm_infer(conv2d(x, branch1), bn1);
        return elementwise(EwKind::add, a, b);
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        if (phase == RecPhase::inference)
            throw invalid_state("cannot train a RECblock that has been fused");
        auto a = tape.batch_norm(tape.conv(x, branch3), bn3, mode);
        auto b = tape.batch_norm(tape.conv(x, branch1), bn1, mode);
        return tape.add(a, b);
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        if (phase == RecPhase::inference) {
            f(prefix + ".fused.weight", &fused->weight, nullptr);
            f(prefix + ".fused.bias", nullptr, &fused->bias);
            return;
        }
        f(prefix + ".branch3.weight", &branch3.weight, nullptr);
        f(prefix + ".bn3.gamma", nullptr, &bn3.gamma);
        f(prefix + ".bn3.beta", nullptr, &bn3.beta);
        f(prefix + ".branch1.weight", &branch1.weight, nullptr);
        f(prefix + ".bn1.gamma", nullptr, &bn1.gamma);
        f(prefix + ".bn1.beta", nullptr, &bn1.beta);
    }

    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        if (phase == RecPhase::inference) return;
        f(prefix + ".bn3.running_mean", &bn3.running_mean);
        f(prefix + ".bn3.running_var", &bn3.running_var);
        f(prefix + ".bn1.running_mean", &bn1.running_mean);
        f(prefix + ".bn1.running_var", &bn1.running_var);
    }
};

// ---------------------------------------------------------------------------
// MSRM hierarchical split plan
// ---------------------------------------------------------------------------

// The input is split into `levels` groups of base width floor(C/levels); the
// remainder channels join group 1 (the passthrough group). Each level's
// RECblock output splits into an emitted first half (ceil) and a forwarded
// second half (floor); the last level emits everything.
struct MsrmPlan {
    int channels = 0;
    int levels = 0;
    std::vector<int> split_widths;   // initial channel split, size = levels
    std::vector<int> level_inputs;   // RECblock input width per level (level 1 = passthrough width)
    std::vector<int> emit_widths;    // widths of the concatenated output segments
    std::vector<int> forward_widths; // forwarded width per level 2..levels-1
};

inline MsrmPlan msrm_split_plan(int channels, int levels = 5) {
    if (levels < 2) throw std::invalid_argument("msrm_split_plan needs at least 2 levels");
    if (channels < levels)
        throw std::invalid_argument(detail::format_msg(
            "msrm_split_plan needs channels >= levels, got C=", channels, " s=", levels));
    MsrmPlan plan;
    plan.channels = channels;
    plan.levels = levels;
    const int base = channels / levels;
    const int group1 = base + channels % levels;
    plan.split_widths.assign(static_cast<std::size_t>(levels), base);
    plan.split_widths[0] = group1;

    plan.level_inputs.push_back(group1);
    plan.emit_widths.push_back(group1);
    int carried = 0;
    for (int lvl = 2; lvl <= levels; ++lvl) {
        const int in_w = base + carried;
        plan.level_inputs.push_back(in_w);
        if (lvl == levels) {
            plan.emit_widths.push_back(in_w);
        } else {
            const int emit = (in_w + 1) / 2;
            const int fwd = in_w / 2;
            plan.emit_widths.push_back(emit);
            plan.forward_widths.push_back(fwd);
            carried = fwd;
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// MSRM: split -> per-level RECblocks with forwarded halves -> concat ->
// channel shuffle -> 1x1 merge conv.
// ---------------------------------------------------------------------------

template <typename T>
struct Msrm {
    int in_channels = 0;
    int out_channels = 0;
    int shuffle_groups = 1;
    MsrmPlan plan;
    std::vector<RecBlock<T>> recs; // one per level 2..levels
    ConvParams<T> merge;           // 1x1, groups 1, bias

    static Msrm make(int c, int c_out, int levels = 5) {
        Msrm m;
        m.in_channels = c;
        m.out_channels = c_out;
        m.plan = msrm_split_plan(c, levels);
        m.shuffle_groups = (c % 2 == 0) ? 2 : 1;
        for (int lvl = 2; lvl <= levels; ++lvl)
            m.recs.push_back(RecBlock<T>::make(m.plan.level_inputs[static_cast<std::size_t>(lvl - 1)]));
        m.merge = ConvParams<T>::make(c, c_out, 1, 1, 1, 0, 1, true);
        return m;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.shape().c != in_channels)
            throw std::invalid_argument(detail::format_msg(
                "MSRM input ", x.shape().str(), " does not match channels ", in_channels));
        std::vector<Tensor<T>> pieces = split_channels(x, plan.split_widths);
        std::vector<Tensor<T>> segments;
        segments.push_back(std::move(pieces[0]));
        Tensor<T> carry;
        for (int lvl = 2; lvl <= plan.levels; ++lvl) {
            const std::size_t li = static_cast<std::size_t>(lvl - 1);
            Tensor<T> in = (lvl == 2)
                               ? std::move(pieces[li])
                               : concat_channels<T>({pieces[li], carry});
            Tensor<T> t = recs[li - 1].forward(in);
            if (lvl == plan.levels) {
                segments.push_back(std::move(t));
            } else {
                const int emit = plan.emit_widths[li];
                const int fwd = plan.forward_widths[li - 1];
                auto halves = split_channels(t, {emit, fwd});
                segments.push_back(std::move(halves[0]));
                carry = std::move(halves[1]);
            }
        }
        Tensor<T> cat = concat_channels(segments);
        return conv2d(channel_shuffle(cat, shuffle_groups), merge);
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        using Var = typename Tape<T>::Var;
        std::vector<Var> pieces = tape.split(x, plan.split_widths);
        std::vector<Var> segments;
        segments.push_back(pieces[0]);
        Var carry;
        for (int lvl = 2; lvl <= plan.levels; ++lvl) {
            const std::size_t li = static_cast<std::size_t>(lvl - 1);
            Var in = (lvl == 2) ? pieces[li] : tape.concat({pieces[li], carry});
            Var t = recs[li - 1].forward_tape(tape, in, mode);
            if (lvl == plan.levels) {
                segments.push_back(t);
            } else {
                auto halves = tape.split(t, {plan.emit_widths[li], plan.forward_widths[li - 1]});
                segments.push_back(halves[0]);
                carry = halves[1];
            }
        }
        Var cat = tape.concat(segments);
        return tape.conv(tape.shuffle(cat, shuffle_groups), merge);
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < recs.size(); ++i)
            recs[i].visit_params(prefix + ".rec" + std::to_string(i + 2), f);
        f(prefix + ".merge.weight", &merge.weight, nullptr);
        f(prefix + ".merge.bias", nullptr, &merge.bias);
    }
    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < recs.size(); ++i)
            recs[i].visit_state(prefix + ".rec" + std::to_string(i + 2), f);
    }
};

// ---------------------------------------------------------------------------
// LAFE: gated fusion of a transformed feature X and a skip feature Y.
// w = sigmoid(G(I) + L(I)) with I = X + Y; Out = relu(w*X + (1-w)*Y).
// ---------------------------------------------------------------------------

template <typename T>
struct LafeBranch {
    ConvParams<T> conv; // 1x1 depthwise, no bias
    BatchNormParams<T> bn_a, bn_b;

    static LafeBranch make(int c) {
        LafeBranch b;
        b.conv = ConvParams<T>::make(c, c, 1, 1, 1, 0, c, false);
        b.bn_a = BatchNormParams<T>::make(c);
        b.bn_b = BatchNormParams<T>::make(c);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        // BN -> ReLU -> BN, as the attention chain is defined.
        Tensor<T> t = batch_norm_infer(conv2d(x, conv), bn_a);
        t = activation(ActKind::relu, t);
        return batch_norm_infer(t, bn_b);
    }
    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        auto t = tape.batch_norm(tape.conv(x, conv), bn_a, mode);
        t = tape.act(ActKind::relu, t);
        return tape.batch_norm(t, bn_b, mode);
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        f(prefix + ".conv.weight", &conv.weight, nullptr);
        f(prefix + ".bn_a.gamma", nullptr, &bn_a.gamma);
        f(prefix + ".bn_a.beta", nullptr, &bn_a.beta);
        f(prefix + ".bn_b.gamma", nullptr, &bn_b.gamma);
        f(prefix + ".bn_b.beta", nullptr, &bn_b.beta);
    }
    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        f(prefix + ".bn_a.running_mean", &bn_a.running_mean);
        f(prefix + ".bn_a.running_var", &bn_a.running_var);
        f(prefix + ".bn_b.running_mean", &bn_b.running_mean);
        f(prefix + ".bn_b.running_var", &bn_b.running_var);
    }
};

template <typename T>
struct Lafe {
    int channels = 0;
    LafeBranch<T> global_branch, local_branch;
    bool final_relu = true;

    static Lafe make(int c) {
        Lafe l;
        l.channels = c;
        l.global_branch = LafeBranch<T>::make(c);
        l.local_branch = LafeBranch<T>::make(c);
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& y) const {
        if (!(x.shape() == y.shape()))
            throw std::invalid_argument(detail::format_msg(
                "LAFE inputs must match: ", x.shape().str(), " vs ", y.shape().str()));
        Tensor<T> i = elementwise(EwKind::add, x, y);
        Tensor<T> g = global_branch.forward(global_avg_pool(i)); // (B, C, 1, 1)
        Tensor<T> l = local_branch.forward(i);
        Tensor<T> w = activation(ActKind::sigmoid, elementwise(EwKind::add, l, g));
        Tensor<T> xw = elementwise(EwKind::mul, x, w);
        Tensor<T> one_minus(w.shape());
        for (std::size_t k = 0; k < w.size(); ++k) one_minus[k] = T(1) - w[k];
        Tensor<T> yw = elementwise(EwKind::mul, y, one_minus);
        Tensor<T> out = elementwise(EwKind::add, xw, yw);
        return final_relu ? activation(ActKind::relu, out) : out;
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x,
                                       typename Tape<T>::Var y, BnMode mode) {
        auto i = tape.add(x, y);
        auto g = global_branch.forward_tape(tape, tape.gap(i), mode);
        auto l = local_branch.forward_tape(tape, i, mode);
        auto w = tape.act(ActKind::sigmoid, tape.add(l, g));
        auto xw = tape.mul(x, w);
        auto yw = tape.mul(y, tape.affine(w, T(-1), T(1)));
        auto out = tape.add(xw, yw);
        return final_relu ? tape.act(ActKind::relu, out) : out;
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        global_branch.visit_params(prefix + ".global", f);
        local_branch.visit_params(prefix + ".local", f);
    }
    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        global_branch.visit_state(prefix + ".global", f);
        local_branch.visit_state(prefix + ".local", f);
    }
};

// ---------------------------------------------------------------------------
// Conv + BN layer (stem / downsampling)
// ---------------------------------------------------------------------------

template <typename T>
struct ConvBnLayer {
    ConvParams<T> conv;
    BatchNormParams<T> bn;

    static ConvBnLayer make(int cin, int cout, int kernel, int stride) {
        ConvBnLayer l;
        l.conv = ConvParams<T>::make(cin, cout, kernel, kernel, stride, 0, 1, false);
        l.bn = BatchNormParams<T>::make(cout);
        return l;
    }

    void check_divisible(const Shape& s) const {
        if (s.h % conv.stride != 0 || s.w % conv.stride != 0)
            throw std::invalid_argument(detail::format_msg(
                "spatial size ", s.str(), " not divisible by stride ", conv.stride));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        check_divisible(x.shape());
        return batch_norm_infer(conv2d(x, conv), bn);
    }
    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        check_divisible(tape.val(x).shape());
        return tape.batch_norm(tape.conv(x, conv), bn, mode);
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        f(prefix + ".conv.weight", &conv.weight, nullptr);
        f(prefix + ".bn.gamma", nullptr, &bn.gamma);
        f(prefix + ".bn.beta", nullptr, &bn.beta);
    }
    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        f(prefix + ".bn.running_mean", &bn.running_mean);
        f(prefix + ".bn.running_var", &bn.running_var);
    }
};

// ---------------------------------------------------------------------------
// LCT block: spatial mixer (7x7 DW + BN, or MSRM) -> grouped 1x1 expand ->
// activation -> 1x1 project -> residual fusion (plain add, or LAFE).
// ---------------------------------------------------------------------------

enum class BlockVariant { baseline, lctnet, mlcnet };

template <typename T>
struct LctBlock {
    BlockVariant variant = BlockVariant::lctnet;
    int channels = 0;
    ActKind act = ActKind::relu;

    ConvParams<T> dw; // 7x7 depthwise, pad 3 (baseline / lctnet mixer)
    BatchNormParams<T> dw_bn;
    std::unique_ptr<Msrm<T>> msrm; // mlcnet mixer

    ConvParams<T> expand;  // 1x1 grouped, bias
    ConvParams<T> project; // 1x1, bias
    std::unique_ptr<Lafe<T>> lafe; // mlcnet residual fusion

    LctBlock() = default;
    LctBlock(const LctBlock& o) { *this = o; }
    LctBlock& operator=(const LctBlock& o) {
        variant = o.variant;
        channels = o.channels;
        act = o.act;
        dw = o.dw;
        dw_bn = o.dw_bn;
        msrm = o.msrm ? std::make_unique<Msrm<T>>(*o.msrm) : nullptr;
        expand = o.expand;
        project = o.project;
        lafe = o.lafe ? std::make_unique<Lafe<T>>(*o.lafe) : nullptr;
        return *this;
    }
    LctBlock(LctBlock&&) = default;
    LctBlock& operator=(LctBlock&&) = default;

    static LctBlock make(BlockVariant variant, int c, int expand_ratio, int expand_groups) {
        LctBlock blk;
        blk.variant = variant;
        blk.channels = c;
        blk.act = variant == BlockVariant::baseline ? ActKind::gelu : ActKind::relu;
        if (variant == BlockVariant::mlcnet) {
            blk.msrm = std::make_unique<Msrm<T>>(Msrm<T>::make(c, c));
            blk.lafe = std::make_unique<Lafe<T>>(Lafe<T>::make(c));
        } else {
            blk.dw = ConvParams<T>::make(c, c, 7, 7, 1, 3, c, false);
            blk.dw_bn = BatchNormParams<T>::make(c);
        }
        const int hidden = expand_ratio * c;
        blk.expand = ConvParams<T>::make(c, hidden, 1, 1, 1, 0, expand_groups, true);
        blk.project = ConvParams<T>::make(hidden, c, 1, 1, 1, 0, 1, true);
        return blk;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> m = variant == BlockVariant::mlcnet
                          ? msrm->forward(x)
                          : batch_norm_infer(conv2d(x, dw), dw_bn);
        Tensor<T> h = conv2d(activation(act, conv2d(m, expand)), project);
        if (variant == BlockVariant::mlcnet) return lafe->forward(h, x);
        return elementwise(EwKind::add, h, x);
    }

    typename Tape<T>::Var forward_tape(Tape<T>& tape, typename Tape<T>::Var x, BnMode mode) {
        auto m = variant == BlockVariant::mlcnet
                     ? msrm->forward_tape(tape, x, mode)
                     : tape.batch_norm(tape.conv(x, dw), dw_bn, mode);
        auto h = tape.conv(tape.act(act, tape.conv(m, expand)), project);
        if (variant == BlockVariant::mlcnet) return lafe->forward_tape(tape, h, x, mode);
        return tape.add(h, x);
    }

    template <typename F>
    void visit_params(const std::string& prefix, F&& f) {
        if (variant == BlockVariant::mlcnet) {
            msrm->visit_params(prefix + ".msrm", f);
        } else {
            f(prefix + ".dw.weight", &dw.weight, nullptr);
            f(prefix + ".dw_bn.gamma", nullptr, &dw_bn.gamma);
            f(prefix + ".dw_bn.beta", nullptr, &dw_bn.beta);
        }
        f(prefix + ".expand.weight", &expand.weight, nullptr);
        f(prefix + ".expand.bias", nullptr, &expand.bias);
        f(prefix + ".project.weight", &project.weight, nullptr);
        f(prefix + ".project.bias", nullptr, &project.bias);
        if (variant == BlockVariant::mlcnet) lafe->visit_params(prefix + ".lafe", f);
    }
    template <typename F>
    void visit_state(const std::string& prefix, F&& f) {
        if (variant == BlockVariant::mlcnet) {
            msrm->visit_state(prefix + ".msrm", f);
        } else {
            f(prefix + ".dw_bn.running_mean", &dw_bn.running_mean);
            f(prefix + ".dw_bn.running_var", &dw_bn.running_var);
        }
        if (variant == BlockVariant::mlcnet) lafe->visit_state(prefix + ".lafe", f);
    }
};

} // namespace mlc
