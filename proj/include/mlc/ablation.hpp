#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mlc/analysis.hpp"
#include "mlc/train.hpp"

namespace mlc {

// One experiment cell of the ablation grid.
struct AblationCell {
    std::string arch = "mlcnet";              // convnext-tiny | lctnet | mlcnet
    std::vector<int> wavelengths{0, 1, 2};    // indices into wavelength_tags()
    FusionOp fusion = FusionOp::max;
};

struct AblationRow {
    AblationCell cell;
    bool ok = false;
    std::string error;
    double acc = 0, avg_acc = 0, macro_f1 = 0;
    unsigned long long params = 0, flops = 0;
    double latency_ms = 0;
};

inline std::string wavelengths_label(const std::vector<int>& wl) {
    std::string out;
    for (std::size_t i = 0; i < wl.size(); ++i) {
        if (i) out += "+";
        out += wavelength_tags()[static_cast<std::size_t>(wl[i])];
    }
    return out;
}

// Trains and evaluates every cell with a deterministic per-cell seed; a
// failed cell is recorded and the grid continues.
inline std::vector<AblationRow> ablation_run(const std::vector<AblationCell>& cells,
                                             const TrainConfig& base_cfg,
                                             const PreparedData& data) {
    std::vector<AblationRow> rows;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        AblationRow row;
        row.cell = cells[ci];
        try {
            TrainConfig cfg = base_cfg;
            cfg.wavelengths = cells[ci].wavelengths;
            cfg.fusion = cells[ci].fusion;
            cfg.seed = Rng::mix(base_cfg.seed, 0xab1 + ci);
            BackboneConfig bc = BackboneConfig::from_arch(cells[ci].arch);
            auto model = MultiViewModel<float>::make(
                bc, cfg.num_classes, static_cast<int>(cfg.wavelengths.size()), cfg.fusion);
            init_weights(model, cfg.seed);
            TrainResult res = train(cfg, data, model);
            row.acc = res.final_metrics.acc;
            row.avg_acc = res.final_metrics.avg_acc;
            row.macro_f1 = res.final_metrics.macro_f1;
            row.params = count_params(model);
            row.flops = count_flops(model, cfg.image_size, cfg.image_size);
            row.latency_ms =
                benchmark_inference(model, cfg.image_size, 2, 10).mean_ms;
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write ablation CSV: " + path);
    os << "arch,wavelengths,fusion,status,acc,avg_acc,macro_f1,params,flops,latency_ms\n";
    os.precision(8);
    for (const auto& r : rows) {
        os << r.cell.arch << "," << wavelengths_label(r.cell.wavelengths) << ","
           << fusion_name(r.cell.fusion) << "," << (r.ok ? "ok" : "failed") << ",";
        if (r.ok)
            os << r.acc << "," << r.avg_acc << "," << r.macro_f1 << "," << r.params << ","
               << r.flops << "," << r.latency_ms;
        else
            os << ",,,,,";
        os << "\n";
    }
}

} // namespace mlc
