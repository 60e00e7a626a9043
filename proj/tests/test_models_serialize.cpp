#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mlc/models.hpp"
#include "mlc/reparam.hpp"
#include "mlc/serialize.hpp"

using namespace mlc;

namespace {

// Structurally complete MLCNet at toy widths; stem stride 2 keeps small
// inputs viable (total stride 16).
BackboneConfig mini_mlcnet() {
    BackboneConfig cfg = BackboneConfig::mlcnet();
    cfg.widths = {8, 12, 16, 20};
    cfg.stem_stride = 2;
    return cfg;
}

template <typename T>
std::vector<Tensor<T>> random_views(int v, int c, int hw, std::uint64_t seed) {
    std::vector<Tensor<T>> out;
    Rng rng(seed);
    for (int i = 0; i < v; ++i) {
        Tensor<T> t(1, c, hw, hw);
        t.fill_uniform(rng, T(-1), T(1));
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace

TEST_CASE("backbone output shapes follow the stride arithmetic") {
    auto cfg = BackboneConfig::lctnet();
    auto model = MultiViewModel<float>::make(cfg, 4, 1);
    init_weights(model, 3);
    Tensor<float> img224(1, 1, 224, 224);
    CHECK(model.forward_features(img224).shape() == Shape{1, 768, 7, 7});
    Tensor<float> img64(1, 1, 64, 64);
    CHECK(model.forward_features(img64).shape() == Shape{1, 768, 2, 2});
    Tensor<float> odd(1, 1, 100, 100); // 100/4 = 25, not divisible by 2
    CHECK_THROWS_AS(model.forward_features(odd), std::invalid_argument);
}

TEST_CASE("backbone forward is deterministic") {
    auto model = MultiViewModel<float>::make(mini_mlcnet(), 4, 1);
    init_weights(model, 5);
    Tensor<float> img(2, 1, 32, 32);
    Rng rng(6);
    img.fill_uniform(rng, -1.f, 1.f);
    CHECK(model.forward_features(img) == model.forward_features(img));
}

TEST_CASE("fuse_views semantics") {
    Tensor<float> t1(1, 3, 1, 1), t2(1, 3, 1, 1), t3(1, 3, 1, 1);
    t1[0] = 1;
    t1[1] = 5;
    t1[2] = 2;
    t2[0] = 3;
    t2[1] = 2;
    t2[2] = 2;
    t3[0] = 0;
    t3[1] = 6;
    t3[2] = 1;
    SUBCASE("elementwise max") {
        Tensor<float> f = fuse_views<float>({t1, t2, t3}, FusionOp::max);
        CHECK(f[0] == 3.f);
        CHECK(f[1] == 6.f);
        CHECK(f[2] == 2.f);
    }
    SUBCASE("max of identical vectors is that vector") {
        Tensor<float> f = fuse_views<float>({t1, t1, t1}, FusionOp::max);
        CHECK(f == t1);
    }
    SUBCASE("max fusion is permutation invariant") {
        Tensor<float> a = fuse_views<float>({t1, t2, t3}, FusionOp::max);
        Tensor<float> b = fuse_views<float>({t3, t1, t2}, FusionOp::max);
        CHECK(a == b);
    }
    SUBCASE("max fusion is monotone in each input") {
        Tensor<float> base = fuse_views<float>({t1, t2, t3}, FusionOp::max);
        Tensor<float> t1b = t1;
        t1b[0] += 2.f;
        Tensor<float> bumped = fuse_views<float>({t1b, t2, t3}, FusionOp::max);
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(bumped[i] >= base[i]);
    }
    SUBCASE("add, min and concat") {
        Tensor<float> a = fuse_views<float>({t1, t2}, FusionOp::add);
        CHECK(a[0] == 4.f);
        Tensor<float> m = fuse_views<float>({t1, t2}, FusionOp::min);
        CHECK(m[1] == 2.f);
        Tensor<float> c = fuse_views<float>({t1, t2}, FusionOp::concat);
        CHECK(c.shape().c == 6);
    }
    SUBCASE("mixed shapes rejected") {
        Tensor<float> bad(1, 4, 1, 1);
        CHECK_THROWS_AS(fuse_views<float>({t1, bad}, FusionOp::max), std::invalid_argument);
    }
}

TEST_CASE("multi-view model contracts") {
    auto cfg = mini_mlcnet();
    SUBCASE("V=1 reduces to single-view classification") {
        auto m1 = MultiViewModel<float>::make(cfg, 4, 1);
        init_weights(m1, 9);
        auto m3 = MultiViewModel<float>::make(cfg, 4, 3);
        init_weights(m3, 9); // same visiting order -> identical backbone weights
        auto views = random_views<float>(1, 1, 32, 11);
        Tensor<float> l1 = m1.forward(views);
        std::vector<Tensor<float>> same3{views[0], views[0], views[0]};
        Tensor<float> l3 = m3.forward(same3);
        REQUIRE(l1.shape() == Shape{1, 4, 1, 1});
        for (std::size_t i = 0; i < l1.size(); ++i)
            CHECK(l1[i] == doctest::Approx(l3[i]).epsilon(1e-6));
    }
    SUBCASE("logits shape honors the head contract") {
        auto m = MultiViewModel<float>::make(cfg, 4, 3);
        init_weights(m, 2);
        auto views = random_views<float>(3, 1, 32, 21);
        CHECK(m.forward(views).shape() == Shape{1, 4, 1, 1});
    }
    SUBCASE("parameter count is independent of the view count") {
        auto m1 = MultiViewModel<float>::make(cfg, 4, 1);
        auto m2 = MultiViewModel<float>::make(cfg, 4, 2);
        auto m3 = MultiViewModel<float>::make(cfg, 4, 3);
        CHECK(m1.param_count() == m2.param_count());
        CHECK(m1.param_count() == m3.param_count());
    }
    SUBCASE("concat fusion widens only the head") {
        auto mm = MultiViewModel<float>::make(cfg, 4, 3, FusionOp::max);
        auto mc = MultiViewModel<float>::make(cfg, 4, 3, FusionOp::concat);
        CHECK(mc.head.in_channels == 3 * cfg.top_width());
        CHECK(mc.param_count() - mc.head.weight.size() ==
              mm.param_count() - mm.head.weight.size());
    }
    SUBCASE("wrong view count is rejected") {
        auto m = MultiViewModel<float>::make(cfg, 4, 3);
        init_weights(m, 2);
        auto views = random_views<float>(2, 1, 32, 22);
        CHECK_THROWS_AS(m.forward(views), std::invalid_argument);
    }
}

TEST_CASE("init_weights is seed-deterministic and non-degenerate") {
    auto cfg = mini_mlcnet();
    auto a = MultiViewModel<float>::make(cfg, 4, 3);
    auto b = MultiViewModel<float>::make(cfg, 4, 3);
    init_weights(a, 42);
    init_weights(b, 42);
    bool all_equal = true;
    std::vector<std::pair<Tensor<float>*, Tensor<float>*>> pairs;
    std::vector<Tensor<float>*> ta, tb;
    a.visit_params([&](const std::string&, Tensor<float>* t, std::vector<float>*) {
        if (t) ta.push_back(t);
    });
    b.visit_params([&](const std::string&, Tensor<float>* t, std::vector<float>*) {
        if (t) tb.push_back(t);
    });
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (!(*ta[i] == *tb[i])) all_equal = false;
    CHECK(all_equal);

    init_weights(b, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (!(*ta[i] == *tb[i])) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("init_weights empirical std lands in the truncated-normal band") {
    auto model = MultiViewModel<float>::make(BackboneConfig::lctnet(), 4, 1);
    init_weights(model, 7);
    bool found_large = false;
    model.visit_params([&](const std::string&, Tensor<float>* t, std::vector<float>*) {
        if (!t || t->size() < 10000) return;
        found_large = true;
        double mean = 0;
        for (std::size_t i = 0; i < t->size(); ++i) mean += (*t)[i];
        mean /= static_cast<double>(t->size());
        double var = 0;
        for (std::size_t i = 0; i < t->size(); ++i) {
            const double d = (*t)[i] - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(t->size()));
        CHECK(sd > 0.015);
        CHECK(sd < 0.025);
    });
    CHECK(found_large);
}

TEST_CASE("weight save/load round trip is bit exact") {
    namespace fs = std::filesystem;
    const std::string path = "mlc_test_weights.bin";
    auto cfg = mini_mlcnet();
    auto model = MultiViewModel<float>::make(cfg, 4, 3);
    init_weights(model, 77);
    // Perturb running stats so state round-tripping is visible.
    model.visit_state([&](const std::string&, std::vector<float>* v) {
        Rng rng(55);
        for (auto& x : *v) x += static_cast<float>(rng.uniform(0.0, 0.01));
    });
    save_weights(model, path);
    auto loaded = load_weights<float>(path);
    CHECK(loaded.cfg.widths == model.cfg.widths);
    CHECK(loaded.views == model.views);

    bool equal = true;
    std::vector<Tensor<float>*> ta, tb;
    std::vector<std::vector<float>*> va, vb;
    model.visit_params([&](const std::string&, Tensor<float>* t, std::vector<float>* v) {
        if (t) ta.push_back(t);
        if (v) va.push_back(v);
    });
    loaded.visit_params([&](const std::string&, Tensor<float>* t, std::vector<float>* v) {
        if (t) tb.push_back(t);
        if (v) vb.push_back(v);
    });
    REQUIRE(ta.size() == tb.size());
    REQUIRE(va.size() == vb.size());
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (!(*ta[i] == *tb[i])) equal = false;
    for (std::size_t i = 0; i < va.size(); ++i)
        if (*va[i] != *vb[i]) equal = false;
    std::vector<std::vector<float>*> sa, sb;
    model.visit_state([&](const std::string&, std::vector<float>* v) { sa.push_back(v); });
    loaded.visit_state([&](const std::string&, std::vector<float>* v) { sb.push_back(v); });
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (*sa[i] != *sb[i]) equal = false;
    CHECK(equal);

    // Same logits after reload.
    auto views = random_views<float>(3, 1, 32, 200);
    CHECK(model.forward(views) == loaded.forward(views));
    fs::remove(path);
}

TEST_CASE("weight file error paths are distinct") {
    namespace fs = std::filesystem;
    auto cfg = mini_mlcnet();
    auto model = MultiViewModel<float>::make(cfg, 4, 3);
    init_weights(model, 31);
    const std::string path = "mlc_test_weights_err.bin";
    save_weights(model, path);

    SUBCASE("truncated file") {
        const auto full = fs::file_size(path);
        std::ifstream is(path, std::ios::binary);
        std::vector<char> buf(static_cast<std::size_t>(full) / 2);
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const std::string tpath = "mlc_test_weights_trunc.bin";
        std::ofstream os(tpath, std::ios::binary);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        os.close();
        CHECK_THROWS_AS(load_weights<float>(tpath), truncated_file_error);
        fs::remove(tpath);
    }
    SUBCASE("bad magic") {
        const std::string bpath = "mlc_test_weights_magic.bin";
        std::ofstream os(bpath, std::ios::binary);
        os << "NOPE this is not a weight file";
        os.close();
        CHECK_THROWS_AS(load_weights<float>(bpath), bad_magic_error);
        fs::remove(bpath);
    }
    SUBCASE("loading fused weights into a training-phase model") {
        auto fused = fuse_model(model);
        const std::string fpath = "mlc_test_weights_fused.bin";
        save_weights(fused, fpath);
        auto target = MultiViewModel<float>::make(cfg, 4, 3); // training phase
        CHECK_THROWS_AS(load_weights_into(fpath, target), phase_mismatch_error);
        // And the fused file loads cleanly into a fused-phase model.
        auto reloaded = load_weights<float>(fpath);
        CHECK(reloaded.phase == ModelPhase::inference);
        fs::remove(fpath);
    }
    SUBCASE("dtype mismatch is reported") {
        CHECK_THROWS_AS(load_weights<double>(path), shape_mismatch_error);
    }
    fs::remove(path);
}
