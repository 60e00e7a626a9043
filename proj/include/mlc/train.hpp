#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mlc/autograd.hpp"
#include "mlc/image.hpp"
#include "mlc/metrics.hpp"
#include "mlc/models.hpp"
#include "mlc/synth.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 30;
    int batch = 16;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double warmup_epochs = 1.0;
    double decay = 0.97; // exponential decay factor per epoch
    std::uint64_t seed = 7;
    std::vector<int> wavelengths{0, 1, 2}; // indices into wavelength_tags()
    FusionOp fusion = FusionOp::max;
    int image_size = 64;
    bool use_augment = true;
    int num_classes = kNumClasses;
    int eval_every = 1; // epochs between validation passes; 0 = final only

    void validate() const {
        if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
        if (!(decay > 0.0 && decay <= 1.0))
            throw std::invalid_argument("decay factor must lie in (0, 1]");
        if (wavelengths.empty()) throw std::invalid_argument("need at least one wavelength");
    }
};

// Linear warmup over the first epoch, exponential decay afterwards;
// continuous at the warmup boundary.
inline double lr_for_fraction(double epoch_fraction, double base, double decay,
                              double warmup_epochs = 1.0) {
    if (epoch_fraction < warmup_epochs) return base * (epoch_fraction / warmup_epochs);
    return base * std::pow(decay, epoch_fraction - warmup_epochs);
}

inline double lr_schedule(long long step, long long steps_per_epoch, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_schedule step must be >= 0");
    const double f = static_cast<double>(step + 1) / static_cast<double>(steps_per_epoch);
    return lr_for_fraction(f, cfg.lr, cfg.decay, cfg.warmup_epochs);
}

// ---------------------------------------------------------------------------
// Loss (forward-only helper; the tape has its own cross_entropy op)
// ---------------------------------------------------------------------------

template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    const Shape s = logits.shape();
    if (static_cast<int>(labels.size()) != s.b)
        throw std::invalid_argument("cross_entropy label count mismatch");
    double loss = 0;
    for (int b = 0; b < s.b; ++b) {
        if (labels[static_cast<std::size_t>(b)] < 0 ||
            labels[static_cast<std::size_t>(b)] >= s.c)
            throw std::invalid_argument("cross_entropy label out of range");
        T mx = logits.at(b, 0, 0, 0);
        for (int k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(b, k, 0, 0));
        double sum = 0;
        for (int k = 0; k < s.c; ++k) sum += std::exp(static_cast<double>(logits.at(b, k, 0, 0) - mx));
        const double logit = logits.at(b, labels[static_cast<std::size_t>(b)], 0, 0);
        loss += -(logit - mx - std::log(sum));
    }
    return loss / s.b;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWHyper {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamWState {
    std::vector<std::vector<T>> m, v;
    long long step = 0;

    static AdamWState init(const std::vector<ParamRef<T>>& params) {
        AdamWState s;
        for (const auto& p : params) {
            s.m.emplace_back(p.size(), T(0));
            s.v.emplace_back(p.size(), T(0));
        }
        return s;
    }
};

// Decoupled weight decay applied before the bias-corrected adaptive step.
template <typename T>
void adamw_step(std::vector<ParamRef<T>>& params, const std::vector<Tensor<T>>& grads,
                AdamWState<T>& state, const AdamWHyper& hyper) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adamw_step: parameter/gradient/state count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamRef<T>& p = params[i];
        const Tensor<T>& g = grads[i];
        if (g.size() != p.size())
            throw std::invalid_argument("adamw_step: gradient size mismatch at " + p.name);
        T* w = p.data();
        std::vector<T>& m = state.m[i];
        std::vector<T>& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            w[k] -= static_cast<T>(hyper.lr * hyper.weight_decay) * w[k];
            m[k] = static_cast<T>(hyper.beta1) * m[k] +
                   static_cast<T>(1.0 - hyper.beta1) * g[k];
            v[k] = static_cast<T>(hyper.beta2) * v[k] +
                   static_cast<T>(1.0 - hyper.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= static_cast<T>(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset preparation (crop+resize cached in [0, 1]; standardize per use)
// ---------------------------------------------------------------------------

struct PreparedSample {
    int label = 0;
    int id = 0;
    std::array<Tensor<float>, 3> views; // [0, 1], image_size x image_size
};

struct PreparedData {
    std::vector<PreparedSample> train, test;
    int image_size = 0;
};

inline PreparedData prepare_dataset(const std::vector<ViewSet>& sets, int image_size) {
    PreparedData d;
    d.image_size = image_size;
    for (const auto& vs : sets) {
        PreparedSample ps;
        ps.label = static_cast<int>(vs.label);
        ps.id = vs.id;
        for (int w = 0; w < 3; ++w)
            ps.views[static_cast<std::size_t>(w)] =
                preprocess_raw(vs.images[static_cast<std::size_t>(w)], image_size);
        (vs.split == "train" ? d.train : d.test).push_back(std::move(ps));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename T>
ConfusionMatrix evaluate(const MultiViewModel<T>& model, const std::vector<PreparedSample>& samples,
                         const std::vector<int>& wavelengths, int batch, int num_classes) {
    std::vector<int> preds, labels;
    const int n = static_cast<int>(samples.size());
    for (int start = 0; start < n; start += batch) {
        const int bs = std::min(batch, n - start);
        std::vector<Tensor<T>> views;
        for (int w : wavelengths) {
            Tensor<T> t(bs, 1, samples[0].views[0].shape().h, samples[0].views[0].shape().w);
            for (int i = 0; i < bs; ++i) {
                Tensor<float> st = standardize(
                    samples[static_cast<std::size_t>(start + i)].views[static_cast<std::size_t>(w)]);
                for (int yx = 0; yx < t.shape().h * t.shape().w; ++yx)
                    t.plane(i, 0)[yx] = static_cast<T>(st[static_cast<std::size_t>(yx)]);
            }
            views.push_back(std::move(t));
        }
        Tensor<T> logits = model.forward(views);
        for (int i = 0; i < bs; ++i) {
            int arg = 0;
            for (int k = 1; k < num_classes; ++k)
                if (logits.at(i, k, 0, 0) > logits.at(i, arg, 0, 0)) arg = k;
            preds.push_back(arg);
            labels.push_back(samples[static_cast<std::size_t>(start + i)].label);
        }
    }
    return confusion_matrix(preds, labels, num_classes);
}

// Scalar mean-intensity nearest-centroid baseline on a single wavelength;
// a difficulty guard for the synthetic data, not a real classifier.
inline double mean_intensity_centroid_accuracy(const std::vector<PreparedSample>& train,
                                               const std::vector<PreparedSample>& test,
                                               int wavelength, int num_classes) {
    std::vector<double> centroid(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<int> count(static_cast<std::size_t>(num_classes), 0);
    auto mean_of = [&](const PreparedSample& s) {
        const Tensor<float>& img = s.views[static_cast<std::size_t>(wavelength)];
        double m = 0;
        for (std::size_t i = 0; i < img.size(); ++i) m += img[i];
        return m / static_cast<double>(img.size());
    };
    for (const auto& s : train) {
        centroid[static_cast<std::size_t>(s.label)] += mean_of(s);
        ++count[static_cast<std::size_t>(s.label)];
    }
    for (int c = 0; c < num_classes; ++c)
        if (count[static_cast<std::size_t>(c)] > 0)
            centroid[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
    int correct = 0;
    for (const auto& s : test) {
        const double m = mean_of(s);
        int best = 0;
        for (int c = 1; c < num_classes; ++c)
            if (std::fabs(m - centroid[static_cast<std::size_t>(c)]) <
                std::fabs(m - centroid[static_cast<std::size_t>(best)]))
                best = c;
        if (best == s.label) ++correct;
    }
    return test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct HistoryRow {
    int epoch = 0;
    long long step = 0;
    double lr = 0;
    double train_loss = 0;
    double val_acc = -1; // most recent validation accuracy, -1 before the first
};

struct TrainResult {
    std::vector<HistoryRow> history;
    MetricsReport final_metrics;
    ConfusionMatrix final_confusion{0};
};

template <typename T>
TrainResult train(const TrainConfig& cfg, const PreparedData& data, MultiViewModel<T>& model) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: empty training set");
    if (static_cast<int>(cfg.wavelengths.size()) != model.views)
        throw std::invalid_argument(detail::format_msg(
            "train: model expects ", model.views, " views but config selects ",
            cfg.wavelengths.size()));

    TrainResult result;
    auto params = model.param_refs();
    auto opt_state = AdamWState<T>::init(params);
    const int n = static_cast<int>(data.train.size());
    const int H = data.image_size;
    long long steps_per_epoch = std::max<long long>(1, n / cfg.batch);
    long long step = 0;
    double last_val_acc = -1;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch) {
            const int bs = std::min(cfg.batch, n - start);
            if (bs < 2 && cfg.batch > 1) break; // BN train mode needs >= 2 per channel
            std::vector<int> labels;
            std::vector<Tensor<T>> view_in(cfg.wavelengths.size(),
                                           Tensor<T>(bs, 1, H, H));
            for (int i = 0; i < bs; ++i) {
                const PreparedSample& s =
                    data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
                labels.push_back(s.label);
                const std::uint64_t aug_seed =
                    Rng::mix(cfg.seed, 0xa06u + static_cast<std::uint64_t>(epoch) * 1000003u +
                                           static_cast<std::uint64_t>(
                                               order[static_cast<std::size_t>(start + i)]));
                const AugmentParams ap =
                    cfg.use_augment ? draw_augment_params(aug_seed) : AugmentParams{};
                for (std::size_t wv = 0; wv < cfg.wavelengths.size(); ++wv) {
                    const int w = cfg.wavelengths[wv];
                    Tensor<float> img = apply_augment(s.views[static_cast<std::size_t>(w)], ap);
                    img = standardize(img);
                    for (int yx = 0; yx < H * H; ++yx)
                        view_in[wv].plane(i, 0)[yx] = static_cast<T>(img[static_cast<std::size_t>(yx)]);
                }
            }

            Tape<T> tape;
            std::vector<typename Tape<T>::Var> view_vars;
            for (auto& vt : view_in) view_vars.push_back(tape.input(vt));
            auto logits = model.forward_tape(tape, view_vars, BnMode::train);
            auto loss = tape.cross_entropy(logits, labels);
            const double loss_v = static_cast<double>(tape.val(loss)[0]);
            const double lr = lr_schedule(step, steps_per_epoch, cfg);
            if (!std::isfinite(loss_v))
                throw numeric_error(detail::format_msg(
                    "NaN loss at epoch ", epoch, " batch ", start / cfg.batch, " lr ", lr));
            tape.backward(loss);

            std::vector<Tensor<T>> grads;
            grads.reserve(params.size());
            for (auto& p : params) grads.push_back(tape.grad_of(p.key()));
            AdamWHyper hyper;
            hyper.lr = lr;
            hyper.weight_decay = cfg.weight_decay;
            adamw_step(params, grads, opt_state, hyper);

            result.history.push_back({epoch, step, lr, loss_v, last_val_acc});
            ++step;
        }
        if (!data.test.empty() && cfg.eval_every > 0 &&
            ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
            ConfusionMatrix cm =
                evaluate(model, data.test, cfg.wavelengths, cfg.batch, cfg.num_classes);
            last_val_acc = metrics_from_confusion(cm).acc;
            if (!result.history.empty()) result.history.back().val_acc = last_val_acc;
        }
    }
    if (!data.test.empty()) {
        result.final_confusion =
            evaluate(model, data.test, cfg.wavelengths, cfg.batch, cfg.num_classes);
        result.final_metrics = metrics_from_confusion(result.final_confusion);
    }
    return result;
}

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write history CSV: " + path);
    os << "epoch,step,lr,train_loss,val_acc\n";
    os.precision(10);
    for (const auto& r : rows)
        os << r.epoch << "," << r.step << "," << r.lr << "," << r.train_loss << ","
           << r.val_acc << "\n";
}

} // namespace mlc
