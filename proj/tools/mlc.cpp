// Command-line front end: dataset synthesis, training, evaluation,
// re-parameterization, cost analysis, CAM rendering and benchmarking.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure,
// 3 verification failure.

#include <filesystem>
#include <iostream>

#include "mlc/ablation.hpp"
#include "mlc/analysis.hpp"
#include "mlc/config.hpp"
#include "mlc/reparam.hpp"
#include "mlc/serialize.hpp"
#include "mlc/synth.hpp"
#include "mlc/train.hpp"

namespace fs = std::filesystem;
using namespace mlc;

namespace {

void print_usage() {
    std::cout <<
        "usage: mlc <subcommand> [--config file] [--key value ...]\n"
        "\n"
        "subcommands:\n"
        "  generate-data  --out DIR [--seed N] [--samples-per-class N] [--size N]\n"
        "                 [--noise X] [--imbalanced BOOL]\n"
        "  train          --data DIR --out DIR [--arch mlcnet|lctnet|convnext-tiny]\n"
        "                 [--epochs N] [--batch N] [--lr X] [--weight-decay X]\n"
        "                 [--decay X] [--seed N] [--wavelengths all|557.7+630.0|...]\n"
        "                 [--fusion max|add|min|concat] [--image-size N] [--augment BOOL]\n"
        "  eval           --data DIR --weights FILE [--image-size N]\n"
        "  fuse           --weights FILE --out FILE [--verify N] [--tol X] [--image-size N]\n"
        "  analyze        --arch NAME [--input CxHxW] [--views N] [--fusion OP]\n"
        "                 [--num-classes N] [--out FILE]\n"
        "  ablate         --data DIR --out FILE [--epochs N] [--image-size N] [--seed N]\n"
        "                 [--grid fusion|wavelength]\n"
        "  cam            --data DIR --weights FILE --out DIR [--sample N] [--split test]\n"
        "                 [--class NAME] [--image-size N]\n"
        "  bench          --weights FILE [--input CxHxW] [--warmup N] [--runs N]\n"
        "\n"
        "Options may also come from a config file of 'key = value' lines via\n"
        "--config; command-line values win.\n";
}

// Option-value parse failures are usage errors at the CLI boundary.
template <typename Fn>
auto usage_wrap(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        throw usage_error(e.what());
    }
}

std::vector<int> parse_wavelengths(const std::string& s) {
    if (s == "all") return {0, 1, 2};
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos != std::string::npos) {
        const auto plus = s.find('+', pos);
        const std::string tok =
            plus == std::string::npos ? s.substr(pos) : s.substr(pos, plus - pos);
        out.push_back(usage_wrap([&] { return wavelength_index(tok); }));
        pos = plus == std::string::npos ? std::string::npos : plus + 1;
    }
    if (out.empty()) throw usage_error("empty wavelength list");
    return out;
}

Shape parse_input_shape(const std::string& s) {
    int c = 0, h = 0, w = 0;
    char x1 = 0, x2 = 0;
    std::istringstream iss(s);
    iss >> c >> x1 >> h >> x2 >> w;
    if (!iss || (x1 != 'x' && x1 != 'X') || (x2 != 'x' && x2 != 'X') || c < 1 || h < 1 || w < 1)
        throw usage_error("--input expects CxHxW, got '" + s + "'");
    return Shape{1, c, h, w};
}

TrainConfig train_config_from(Options& opts) {
    TrainConfig cfg;
    cfg.epochs = static_cast<int>(opts.get_int("epochs", 30));
    cfg.batch = static_cast<int>(opts.get_int("batch", 16));
    cfg.lr = opts.get_double("lr", 1e-3);
    cfg.weight_decay = opts.get_double("weight-decay", 0.05);
    cfg.decay = opts.get_double("decay", 0.97);
    cfg.seed = static_cast<std::uint64_t>(opts.get_int("seed", 7));
    cfg.wavelengths = parse_wavelengths(opts.get_str("wavelengths", "all"));
    cfg.fusion = usage_wrap([&] { return parse_fusion(opts.get_str("fusion", "max")); });
    cfg.image_size = static_cast<int>(opts.get_int("image-size", 64));
    cfg.use_augment = opts.get_bool("augment", true);
    return cfg;
}

int cmd_generate_data(Options& opts) {
    SynthConfig cfg;
    cfg.master_seed = static_cast<std::uint64_t>(opts.get_int("seed", 7));
    cfg.samples_per_class = static_cast<int>(opts.get_int("samples-per-class", 100));
    cfg.image_size = static_cast<int>(opts.get_int("size", 128));
    cfg.noise_level = opts.get_double("noise", 0.02);
    cfg.imbalanced = opts.get_bool("imbalanced", false);
    const std::string out = opts.require_str("out");
    opts.reject_unknown();
    Manifest man = generate_dataset(cfg, out);
    std::cout << "wrote " << man.entries.size() << " samples ("
              << man.entries.size() * 3 << " images) under " << out << "\n";
    return 0;
}

int cmd_train(Options& opts) {
    const std::string data_dir = opts.require_str("data");
    const std::string out_dir = opts.require_str("out");
    const std::string arch = opts.get_str("arch", "mlcnet");
    TrainConfig cfg = train_config_from(opts);
    opts.reject_unknown();
    fs::create_directories(out_dir);

    auto sets = load_dataset(data_dir);
    PreparedData data = prepare_dataset(sets, cfg.image_size);
    std::cout << "loaded " << data.train.size() << " train / " << data.test.size()
              << " test samples at " << cfg.image_size << "x" << cfg.image_size << "\n";

    auto model = MultiViewModel<float>::make(
        usage_wrap([&] { return BackboneConfig::from_arch(arch); }), cfg.num_classes,
        static_cast<int>(cfg.wavelengths.size()), cfg.fusion);
    init_weights(model, cfg.seed);
    TrainResult res = train(cfg, data, model);
    write_history_csv((fs::path(out_dir) / "history.csv").string(), res.history);
    save_weights(model, (fs::path(out_dir) / "weights.bin").string());
    std::cout << "final: acc " << res.final_metrics.acc << "  avg_acc "
              << res.final_metrics.avg_acc << "  macro_f1 " << res.final_metrics.macro_f1
              << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "history.csv").string() << " and "
              << (fs::path(out_dir) / "weights.bin").string() << "\n";
    return 0;
}

int cmd_eval(Options& opts) {
    const std::string data_dir = opts.require_str("data");
    const std::string weights = opts.require_str("weights");
    const int image_size = static_cast<int>(opts.get_int("image-size", 64));
    const std::string wl = opts.get_str("wavelengths", "all");
    opts.reject_unknown();

    auto model = load_weights<float>(weights);
    std::vector<int> wavelengths = parse_wavelengths(wl);
    if (static_cast<int>(wavelengths.size()) != model.views)
        throw usage_error("--wavelengths count must match the model's view count");
    auto sets = load_dataset(data_dir);
    PreparedData data = prepare_dataset(sets, image_size);
    ConfusionMatrix cm = evaluate(model, data.test, wavelengths, 16, model.num_classes);
    MetricsReport r = metrics_from_confusion(cm);
    std::cout << "test samples: " << cm.total() << "\n";
    std::cout << "acc " << r.acc << "  avg_acc " << r.avg_acc << "  macro_f1 " << r.macro_f1
              << "\n";
    std::cout << "confusion (rows=true, cols=pred):\n";
    for (int t = 0; t < cm.k; ++t) {
        std::cout << "  " << class_name(static_cast<AuroraClass>(t)) << ":";
        for (int p = 0; p < cm.k; ++p) std::cout << " " << cm.at(t, p);
        std::cout << "\n";
    }
    return 0;
}

int cmd_fuse(Options& opts) {
    const std::string weights = opts.require_str("weights");
    const std::string out = opts.require_str("out");
    const int verify_n = static_cast<int>(opts.get_int("verify", 100));
    const double tol = opts.get_double("tol", 1e-4);
    const int image_size = static_cast<int>(opts.get_int("image-size", 64));
    opts.reject_unknown();

    auto model = load_weights<float>(weights);
    if (model.phase == ModelPhase::inference)
        throw invalid_state("weights are already fused");
    int warned = 0;
    auto fused = fuse_model(model, &warned);
    save_weights(fused, out);
    EquivalenceReport rep = verify_equivalence(model, fused, verify_n, tol, image_size);
    std::cout << "fused RECblocks; params " << count_params(model) << " -> "
              << count_params(fused) << "\n";
    std::cout << "equivalence over " << rep.samples << " random inputs: max abs dev "
              << rep.max_abs_deviation << " (tol " << rep.tolerance << "), argmax "
              << (rep.argmax_identical ? "identical" : "DIFFERS") << "\n";
    if (rep.default_stats_warning)
        std::cout << "warning: BN running stats at defaults; fuse after training for a"
                     " meaningful model\n";
    std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
    return rep.pass ? 0 : 3;
}

int cmd_analyze(Options& opts) {
    const std::string arch = opts.get_str("arch", "mlcnet");
    BackboneConfig bc = usage_wrap([&] { return BackboneConfig::from_arch(arch); });
    const std::string input = opts.get_str(
        "input", detail::format_msg(bc.in_channels, "x224x224"));
    const int views = static_cast<int>(opts.get_int("views", arch == "mlcnet" ? 3 : 1));
    const FusionOp fusion = usage_wrap([&] { return parse_fusion(opts.get_str("fusion", "max")); });
    const int num_classes = static_cast<int>(opts.get_int("num-classes", 4));
    const std::string out = opts.get_str("out", "");
    opts.reject_unknown();

    Shape in = parse_input_shape(input);
    if (in.c != bc.in_channels)
        throw usage_error(detail::format_msg(
            "--input channels ", in.c, " do not match arch in_channels ", bc.in_channels));
    auto model = MultiViewModel<float>::make(bc, num_classes, views, fusion);
    CostReport rep = cost_report(model, in.h, in.w);
    std::cout << arch << " @ " << input << ", views=" << views << "\n";
    std::cout << "params: " << rep.total_params << " ("
              << static_cast<double>(rep.total_params) / 1e6 << "M)\n";
    std::cout << "flops:  " << rep.total_flops << " ("
              << static_cast<double>(rep.total_flops) / 1e9 << "G MACs)\n";
    if (!out.empty()) {
        write_cost_csv(out, rep);
        std::cout << "per-layer breakdown written to " << out << "\n";
    }
    return 0;
}

int cmd_ablate(Options& opts) {
    const std::string data_dir = opts.require_str("data");
    const std::string out = opts.require_str("out");
    const std::string grid = opts.get_str("grid", "fusion");
    const std::string arch = opts.get_str("arch", "mlcnet");
    TrainConfig cfg = train_config_from(opts);
    opts.reject_unknown();

    auto sets = load_dataset(data_dir);
    PreparedData data = prepare_dataset(sets, cfg.image_size);

    std::vector<AblationCell> cells;
    if (grid == "fusion") {
        for (FusionOp op : {FusionOp::add, FusionOp::min, FusionOp::concat, FusionOp::max})
            cells.push_back(AblationCell{arch, {0, 1, 2}, op});
    } else if (grid == "wavelength") {
        cells.push_back(AblationCell{arch, {1}, FusionOp::max});
        cells.push_back(AblationCell{arch, {2}, FusionOp::max});
        cells.push_back(AblationCell{arch, {1, 2}, FusionOp::max});
        cells.push_back(AblationCell{arch, {0, 1, 2}, FusionOp::max});
    } else {
        throw usage_error("--grid expects fusion|wavelength");
    }
    auto rows = ablation_run(cells, cfg, data);
    write_ablation_csv(out, rows);
    bool all_ok = true;
    for (const auto& r : rows) {
        std::cout << r.cell.arch << " [" << wavelengths_label(r.cell.wavelengths) << "] "
                  << fusion_name(r.cell.fusion) << ": ";
        if (r.ok)
            std::cout << "acc " << r.acc << " avg_acc " << r.avg_acc << "\n";
        else {
            std::cout << "FAILED: " << r.error << "\n";
            all_ok = false;
        }
    }
    std::cout << "rows written to " << out << "\n";
    return all_ok ? 0 : 2;
}

int cmd_cam(Options& opts) {
    const std::string data_dir = opts.require_str("data");
    const std::string weights = opts.require_str("weights");
    const std::string out_dir = opts.require_str("out");
    const int image_size = static_cast<int>(opts.get_int("image-size", 64));
    const int sample_id = static_cast<int>(opts.get_int("sample", 0));
    const std::string split = opts.get_str("split", "test");
    const std::string cls_name = opts.get_str("class", "");
    opts.reject_unknown();

    auto model = load_weights<float>(weights);
    if (model.views != 3) throw usage_error("cam expects a three-view model");
    auto sets = load_dataset(data_dir);
    const ViewSet* chosen = nullptr;
    for (const auto& vs : sets) {
        if (vs.split != split) continue;
        if (!cls_name.empty() && class_name(vs.label) != cls_name) continue;
        if (vs.id == sample_id) {
            chosen = &vs;
            break;
        }
    }
    if (!chosen)
        throw usage_error(detail::format_msg(
            "no sample with id ", sample_id, " in split ", split,
            cls_name.empty() ? "" : (" class " + cls_name)));

    std::vector<Tensor<float>> views;
    for (int w = 0; w < 3; ++w)
        views.push_back(preprocess(chosen->images[static_cast<std::size_t>(w)], image_size));
    const int target = static_cast<int>(chosen->label);
    auto maps = cam(model, views, target);
    fs::create_directories(out_dir);
    for (const auto& m : maps) {
        const std::string base =
            (fs::path(out_dir) / detail::format_msg(
                 "cam_", class_name(chosen->label), "_", chosen->id, "_",
                 wavelength_tags()[static_cast<std::size_t>(m.view)]))
                .string();
        pgm_write(base + ".pgm", m.heat);
        ppm_write_heatmap(base + ".ppm", m.heat);
    }
    std::cout << "sample " << class_name(chosen->label) << "/" << chosen->id << ": predicted "
              << class_name(static_cast<AuroraClass>(maps[0].predicted)) << ", heatmaps in "
              << out_dir << "\n";
    return 0;
}

int cmd_bench(Options& opts) {
    const std::string weights = opts.require_str("weights");
    const int warmup = static_cast<int>(opts.get_int("warmup", 3));
    const int runs = static_cast<int>(opts.get_int("runs", 20));
    const std::string input = opts.get_str("input", "");
    opts.reject_unknown();

    auto model = load_weights<float>(weights);
    const int size = input.empty() ? 64 : parse_input_shape(input).h;
    LatencyStats unfused = benchmark_inference(model, size, warmup, runs);
    std::cout << "unfused: mean " << unfused.mean_ms << " ms, p50 " << unfused.p50_ms
              << ", p95 " << unfused.p95_ms << "\n";
    if (model.phase == ModelPhase::training) {
        auto fused = fuse_model(model);
        LatencyStats f = benchmark_inference(fused, size, warmup, runs);
        std::cout << "fused:   mean " << f.mean_ms << " ms, p50 " << f.p50_ms << ", p95 "
                  << f.p95_ms << "\n";
        std::cout << "fused/unfused mean ratio: " << f.mean_ms / unfused.mean_ms << "\n";
        if (f.mean_ms > unfused.mean_ms)
            std::cout << "note: fused mean exceeded unfused within measurement noise\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        print_usage();
        return 1;
    }
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        print_usage();
        return 0;
    }
    try {
        Options opts = parse_cli_options(argc, argv, 2);
        if (cmd == "generate-data") return cmd_generate_data(opts);
        if (cmd == "train") return cmd_train(opts);
        if (cmd == "eval") return cmd_eval(opts);
        if (cmd == "fuse") return cmd_fuse(opts);
        if (cmd == "analyze") return cmd_analyze(opts);
        if (cmd == "ablate") return cmd_ablate(opts);
        if (cmd == "cam") return cmd_cam(opts);
        if (cmd == "bench") return cmd_bench(opts);
        std::cerr << "unknown subcommand: " << cmd << "\n";
        print_usage();
        return 1;
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
