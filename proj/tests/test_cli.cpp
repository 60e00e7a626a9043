// End-to-end pipeline smoke test driving the CLI binary:
// generate-data -> train -> eval -> fuse -> analyze -> ablate -> cam -> bench.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(MLC_CLI_PATH) + " " + args + " > cli_last_out.txt 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string last_output() {
    std::ifstream is("cli_last_out.txt");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("full CLI pipeline on a tiny dataset") {
    fs::remove_all("cli_ds");
    fs::remove_all("cli_run");
    fs::remove_all("cli_cam");

    // Tiny dataset: 8 samples/class at generator size 96, train at 32x32.
    REQUIRE(run("generate-data --out cli_ds --seed 11 --samples-per-class 8 --size 96") == 0);
    CHECK(fs::exists("cli_ds/manifest.csv"));

    REQUIRE(run("train --data cli_ds --out cli_run --epochs 2 --batch 8 --lr 1e-3 "
                "--image-size 32 --seed 11") == 0);
    CHECK(fs::exists("cli_run/history.csv"));
    CHECK(fs::exists("cli_run/weights.bin"));

    CHECK(run("eval --data cli_ds --weights cli_run/weights.bin --image-size 32") == 0);
    CHECK(last_output().find("acc") != std::string::npos);

    CHECK(run("fuse --weights cli_run/weights.bin --out cli_run/weights_fused.bin "
              "--verify 10 --image-size 32") == 0);
    CHECK(fs::exists("cli_run/weights_fused.bin"));
    CHECK(last_output().find("PASS") != std::string::npos);

    CHECK(run("analyze --arch lctnet --input 1x224x224 --out cli_run/cost.csv") == 0);
    CHECK(fs::exists("cli_run/cost.csv"));
    CHECK(last_output().find("params") != std::string::npos);

    CHECK(run("cam --data cli_ds --weights cli_run/weights.bin --out cli_cam "
              "--image-size 32 --split test --sample 5") == 0);
    int heatmaps = 0;
    for (const auto& f : fs::directory_iterator("cli_cam"))
        if (f.path().extension() == ".pgm" || f.path().extension() == ".ppm") ++heatmaps;
    CHECK(heatmaps == 6); // 3 views x (pgm + ppm)

    CHECK(run("bench --weights cli_run/weights.bin --input 1x32x32 --warmup 1 --runs 10") == 0);
    CHECK(last_output().find("fused/unfused") != std::string::npos);

    SUBCASE("same config and seed give byte-identical artifacts") {
        fs::remove_all("cli_run_b");
        REQUIRE(run("train --data cli_ds --out cli_run_b --epochs 2 --batch 8 --lr 1e-3 "
                    "--image-size 32 --seed 11") == 0);
        auto bytes = [](const std::string& p) {
            std::ifstream is(p, std::ios::binary);
            return std::string{std::istreambuf_iterator<char>(is),
                               std::istreambuf_iterator<char>()};
        };
        CHECK(bytes("cli_run/weights.bin") == bytes("cli_run_b/weights.bin"));
        CHECK(bytes("cli_run/history.csv") == bytes("cli_run_b/history.csv"));
        fs::remove_all("cli_run_b");
    }

    SUBCASE("config file with command-line override") {
        std::ofstream cf("cli_cfg.txt");
        cf << "# comment line\n";
        cf << "arch = lctnet\n";
        cf << "input = 1x64x64\n";
        cf.close();
        CHECK(run("analyze --config cli_cfg.txt --input 1x224x224") == 0);
        CHECK(last_output().find("1x224x224") != std::string::npos);
    }

    SUBCASE("error surfaces") {
        CHECK(run("train --data cli_ds") == 1);                // missing --out
        CHECK(run("analyze --bogus-key 3") == 1);              // unknown key
        CHECK(run("analyze --arch nope") == 1);                // bad arch
        CHECK(run("eval --data cli_ds --weights no_such.bin") == 2);
        CHECK(run("wat") == 1);                                // unknown subcommand
    }

    fs::remove_all("cli_ds");
    fs::remove_all("cli_run");
    fs::remove_all("cli_cam");
    fs::remove("cli_cfg.txt");
    fs::remove("cli_last_out.txt");
}
