#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mlc/models.hpp"

namespace mlc {

// Weight file: little-endian binary. Header carries magic "MLCW", a format
// version, the model configuration and the phase flag; entries follow as
// (name, dtype tag, rank, dims, raw payload). Round trips are byte-exact.

class weight_io_error : public std::runtime_error {
public:
    explicit weight_io_error(const std::string& m) : std::runtime_error(m) {}
};
class bad_magic_error : public weight_io_error {
public:
    explicit bad_magic_error(const std::string& m) : weight_io_error(m) {}
};
class version_mismatch_error : public weight_io_error {
public:
    explicit version_mismatch_error(const std::string& m) : weight_io_error(m) {}
};
class truncated_file_error : public weight_io_error {
public:
    explicit truncated_file_error(const std::string& m) : weight_io_error(m) {}
};
class shape_mismatch_error : public weight_io_error {
public:
    explicit shape_mismatch_error(const std::string& m) : weight_io_error(m) {}
};
class phase_mismatch_error : public weight_io_error {
public:
    explicit phase_mismatch_error(const std::string& m) : weight_io_error(m) {}
};

namespace detail {

constexpr std::uint32_t kWeightFormatVersion = 1;

template <typename P>
void write_pod(std::ostream& os, const P& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(P));
}
template <typename P>
P read_pod(std::istream& is, const char* what) {
    P v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(P));
    if (!is) throw truncated_file_error(format_msg("weight file truncated reading ", what));
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

template <typename T>
void write_entry(std::ostream& os, const std::string& name, const T* data,
                 const std::vector<std::uint64_t>& dims) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, dtype_tag<T>());
    write_pod(os, static_cast<std::uint8_t>(dims.size()));
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) {
        write_pod(os, d);
        n *= d;
    }
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

} // namespace detail

template <typename T>
void save_weights(MultiViewModel<T>& model, const std::string& path) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw weight_io_error("cannot open for writing: " + tmp);
        os.write("MLCW", 4);
        detail::write_pod(os, detail::kWeightFormatVersion);
        detail::write_pod(os, detail::dtype_tag<T>());
        detail::write_pod(os, static_cast<std::uint8_t>(model.phase == ModelPhase::inference));
        detail::write_pod(os, static_cast<std::uint8_t>(model.cfg.variant));
        detail::write_pod(os, static_cast<std::uint8_t>(model.fusion));
        detail::write_pod(os, static_cast<std::uint32_t>(model.num_classes));
        detail::write_pod(os, static_cast<std::uint32_t>(model.views));
        detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.in_channels));
        detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.stem_stride));
        detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.expand_ratio));
        detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.expand_groups));
        detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.depths.size()));
        for (std::size_t i = 0; i < model.cfg.depths.size(); ++i) {
            detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.depths[i]));
            detail::write_pod(os, static_cast<std::uint32_t>(model.cfg.widths[i]));
        }
        std::uint64_t entries = 0;
        model.visit_params([&](const std::string&, Tensor<T>* t, std::vector<T>* v) {
            (void)t;
            (void)v;
            ++entries;
        });
        model.visit_state([&](const std::string&, std::vector<T>*) { ++entries; });
        detail::write_pod(os, entries);
        model.visit_params([&](const std::string& name, Tensor<T>* t, std::vector<T>* v) {
            if (t) {
                const Shape s = t->shape();
                detail::write_entry(os, name, t->data(),
                                    {static_cast<std::uint64_t>(s.b),
                                     static_cast<std::uint64_t>(s.c),
                                     static_cast<std::uint64_t>(s.h),
                                     static_cast<std::uint64_t>(s.w)});
            } else {
                detail::write_entry(os, name, v->data(), {v->size()});
            }
        });
        model.visit_state([&](const std::string& name, std::vector<T>* v) {
            detail::write_entry(os, name, v->data(), {v->size()});
        });
        if (!os) throw weight_io_error("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

// Puts the model's RECblocks into the requested phase, allocating fused conv
// slots so a fused weight file has somewhere to load into.
template <typename T>
void prepare_phase(MultiViewModel<T>& model, ModelPhase phase) {
    model.phase = phase;
    for_each_rec_block(model, [&](RecBlock<T>& rec) {
        if (phase == ModelPhase::inference) {
            if (!rec.fused)
                rec.fused = ConvParams<T>::make(rec.channels, rec.channels, 3, 3, 1, 1,
                                                rec.channels, true);
            rec.phase = RecPhase::inference;
        } else {
            rec.phase = RecPhase::training;
        }
    });
}

template <typename T>
MultiViewModel<T> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw weight_io_error("cannot open weight file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MLCW", 4) != 0)
        throw bad_magic_error("not a weight file (bad magic): " + path);
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != detail::kWeightFormatVersion)
        throw version_mismatch_error(detail::format_msg(
            "weight format version ", version, ", expected ", detail::kWeightFormatVersion));
    const auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
    if (dtype != detail::dtype_tag<T>())
        throw shape_mismatch_error(detail::format_msg(
            "weight file dtype tag ", int(dtype), " does not match model scalar width ",
            sizeof(T) * 8, " bits"));
    const auto phase_flag = detail::read_pod<std::uint8_t>(is, "phase");
    const auto variant = detail::read_pod<std::uint8_t>(is, "variant");
    const auto fusion = detail::read_pod<std::uint8_t>(is, "fusion");
    const auto num_classes = detail::read_pod<std::uint32_t>(is, "num_classes");
    const auto views = detail::read_pod<std::uint32_t>(is, "views");
    BackboneConfig cfg;
    cfg.variant = static_cast<BlockVariant>(variant);
    cfg.in_channels = static_cast<int>(detail::read_pod<std::uint32_t>(is, "in_channels"));
    cfg.stem_stride = static_cast<int>(detail::read_pod<std::uint32_t>(is, "stem_stride"));
    cfg.expand_ratio = static_cast<int>(detail::read_pod<std::uint32_t>(is, "expand_ratio"));
    cfg.expand_groups = static_cast<int>(detail::read_pod<std::uint32_t>(is, "expand_groups"));
    const auto n_stages = detail::read_pod<std::uint32_t>(is, "stage count");
    cfg.depths.clear();
    cfg.widths.clear();
    for (std::uint32_t i = 0; i < n_stages; ++i) {
        cfg.depths.push_back(static_cast<int>(detail::read_pod<std::uint32_t>(is, "depth")));
        cfg.widths.push_back(static_cast<int>(detail::read_pod<std::uint32_t>(is, "width")));
    }
    MultiViewModel<T> model = MultiViewModel<T>::make(
        cfg, static_cast<int>(num_classes), static_cast<int>(views),
        static_cast<FusionOp>(fusion));
    prepare_phase(model, phase_flag ? ModelPhase::inference : ModelPhase::training);
    load_entries(is, model, path);
    return model;
}

// Loads into an existing model; the file's phase must match the model's.
template <typename T>
void load_weights_into(const std::string& path, MultiViewModel<T>& model) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw weight_io_error("cannot open weight file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MLCW", 4) != 0)
        throw bad_magic_error("not a weight file (bad magic): " + path);
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != detail::kWeightFormatVersion)
        throw version_mismatch_error(detail::format_msg(
            "weight format version ", version, ", expected ", detail::kWeightFormatVersion));
    const auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
    if (dtype != detail::dtype_tag<T>())
        throw shape_mismatch_error("weight file dtype does not match model scalar type");
    const auto phase_flag = detail::read_pod<std::uint8_t>(is, "phase");
    const bool model_fused = model.phase == ModelPhase::inference;
    if (static_cast<bool>(phase_flag) != model_fused)
        throw phase_mismatch_error(detail::format_msg(
            "weight file phase '", phase_flag ? "inference" : "training",
            "' does not match model phase '", model_fused ? "inference" : "training", "'"));
    // Skip over the config block, validating stage structure.
    detail::read_pod<std::uint8_t>(is, "variant");
    detail::read_pod<std::uint8_t>(is, "fusion");
    detail::read_pod<std::uint32_t>(is, "num_classes");
    detail::read_pod<std::uint32_t>(is, "views");
    detail::read_pod<std::uint32_t>(is, "in_channels");
    detail::read_pod<std::uint32_t>(is, "stem_stride");
    detail::read_pod<std::uint32_t>(is, "expand_ratio");
    detail::read_pod<std::uint32_t>(is, "expand_groups");
    const auto n_stages = detail::read_pod<std::uint32_t>(is, "stage count");
    for (std::uint32_t i = 0; i < n_stages; ++i) {
        detail::read_pod<std::uint32_t>(is, "depth");
        detail::read_pod<std::uint32_t>(is, "width");
    }
    load_entries(is, model, path);
}

template <typename T>
void load_entries(std::istream& is, MultiViewModel<T>& model, const std::string& path) {
    const auto entries = detail::read_pod<std::uint64_t>(is, "entry count");
    struct Slot {
        std::string name;
        T* data;
        std::uint64_t size;
    };
    std::vector<Slot> slots;
    model.visit_params([&](const std::string& name, Tensor<T>* t, std::vector<T>* v) {
        if (t)
            slots.push_back({name, t->data(), t->size()});
        else
            slots.push_back({name, v->data(), v->size()});
    });
    model.visit_state([&](const std::string& name, std::vector<T>* v) {
        slots.push_back({name, v->data(), v->size()});
    });
    if (entries != slots.size())
        throw shape_mismatch_error(detail::format_msg(
            "weight file has ", entries, " entries, model expects ", slots.size(), " (",
            path, ")"));
    for (auto& slot : slots) {
        const auto name_len = detail::read_pod<std::uint32_t>(is, "entry name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw truncated_file_error("weight file truncated reading entry name");
        if (name != slot.name)
            throw shape_mismatch_error(detail::format_msg(
                "weight entry '", name, "' does not match expected '", slot.name, "'"));
        const auto dtype = detail::read_pod<std::uint8_t>(is, "entry dtype");
        if (dtype != detail::dtype_tag<T>())
            throw shape_mismatch_error("entry dtype mismatch at " + name);
        const auto rank = detail::read_pod<std::uint8_t>(is, "entry rank");
        std::uint64_t n = 1;
        for (int r = 0; r < rank; ++r) n *= detail::read_pod<std::uint64_t>(is, "entry dim");
        if (n != slot.size)
            throw shape_mismatch_error(detail::format_msg(
                "entry '", name, "' holds ", n, " values, model expects ", slot.size));
        is.read(reinterpret_cast<char*>(slot.data),
                static_cast<std::streamsize>(n * sizeof(T)));
        if (!is) throw truncated_file_error("weight file truncated in payload of " + name);
    }
}

} // namespace mlc
