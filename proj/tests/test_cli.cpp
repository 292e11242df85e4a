#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "idf/cli.hpp"
#include "idf/io.hpp"
#include "idf/model.hpp"
#include "oracles.hpp"

using namespace idf;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    RunResult res;
    const std::string cmd = std::string(IDF_BINARY) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) res.out += buf;
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

fs::path make_workdir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("param-count prints the default budget and the resolved config") {
    const RunResult res = run("param-count");
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("config: model.hidden_width = 56") != std::string::npos);
    // Last line is the count.
    const size_t pos = res.out.find_last_of('\n', res.out.size() - 2);
    const long count = std::stol(res.out.substr(pos + 1));
    CHECK(count >= 30000);
    CHECK(count <= 50000);
}

TEST_CASE("add-noise is deterministic per seed") {
    const fs::path dir = make_workdir("idf_cli_noise");
    save_image(oracle::random_texture(3, 32, 32, 1), (dir / "in.png").string());
    const std::string base = "add-noise --in " + (dir / "in.png").string();
    CHECK(run(base + " --out " + (dir / "a.png").string() + " --noise gaussian:sigma=25 --seed 7").exit_code == 0);
    CHECK(run(base + " --out " + (dir / "b.png").string() + " --noise gaussian:sigma=25 --seed 7").exit_code == 0);
    CHECK(run(base + " --out " + (dir / "c.png").string() + " --noise gaussian:sigma=25 --seed 8").exit_code == 0);
    CHECK(read_file(dir / "a.png") == read_file(dir / "b.png"));
    CHECK(read_file(dir / "a.png") != read_file(dir / "c.png"));
    fs::remove_all(dir);
}

TEST_CASE("denoise --stop fixed --T 1 equals the library refinement step") {
    const fs::path dir = make_workdir("idf_cli_denoise");
    const Image noisy = oracle::random_image(3, 24, 24, 2);
    save_image(noisy, (dir / "in.png").string());

    ModelConfig cfg;
    cfg.hidden_width = 8;
    const ModelWeights w = ModelWeights::init(cfg, 5);
    save_weights(w, (dir / "w.idfw").string());

    const RunResult res = run("denoise --in " + (dir / "in.png").string() + " --out " +
                              (dir / "out.png").string() + " --weights " + (dir / "w.idfw").string() +
                              " --stop fixed --T 1 --set model.hidden_width=8");
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("iterations_used: 1") != std::string::npos);
    CHECK(res.out.find("stop_reason: max_reached") != std::string::npos);

    // Expected: load the quantized input, one refinement step at dilation 2.
    const Image loaded = load_image((dir / "in.png").string());
    const DidResult step = did_forward(loaded, nullptr, w, 2);
    save_image(step.estimate, (dir / "expect.png").string());
    CHECK(read_file(dir / "out.png") == read_file(dir / "expect.png"));
    fs::remove_all(dir);
}

TEST_CASE("denoise writes a full trace when asked") {
    const fs::path dir = make_workdir("idf_cli_trace");
    save_image(oracle::random_image(3, 16, 16, 3), (dir / "in.png").string());
    ModelConfig cfg;
    cfg.hidden_width = 8;
    save_weights(ModelWeights::init(cfg, 6), (dir / "w.idfw").string());
    const RunResult res = run("denoise --in " + (dir / "in.png").string() + " --out " +
                              (dir / "out.png").string() + " --weights " + (dir / "w.idfw").string() +
                              " --stop fixed --T 3 --trace " + (dir / "trace").string() +
                              " --set model.hidden_width=8");
    CHECK(res.exit_code == 0);
    CHECK(fs::exists(dir / "trace" / "trace.jsonl"));
    CHECK(fs::exists(dir / "trace" / "iter_03.png"));
    fs::remove_all(dir);
}

TEST_CASE("eval on identical directories reports the psnr cap and unit ssim") {
    const fs::path dir = make_workdir("idf_cli_eval");
    fs::create_directories(dir / "pred");
    fs::create_directories(dir / "ref");
    for (int i = 0; i < 2; ++i) {
        const Image img = oracle::random_texture(3, 20, 20, 40 + i);
        const std::string name = "img" + std::to_string(i) + ".png";
        save_image(img, (dir / "pred" / name).string());
        save_image(img, (dir / "ref" / name).string());
    }
    const RunResult res = run("eval --pred " + (dir / "pred").string() + " --ref " +
                              (dir / "ref").string() + " --report " + (dir / "report.csv").string());
    CHECK(res.exit_code == 0);
    const std::string csv = read_file(dir / "report.csv");
    CHECK(csv.find("img0.png,100.000000,1.000000") != std::string::npos);
    CHECK(csv.find("img1.png,100.000000,1.000000") != std::string::npos);
    CHECK(csv.find("mean,100.000000,1.000000") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("train subcommand produces weights and a log csv") {
    const fs::path dir = make_workdir("idf_cli_train");
    fs::create_directories(dir / "data");
    for (int i = 0; i < 2; ++i) {
        save_image(oracle::random_texture(3, 24, 24, 50 + i),
                   (dir / "data" / ("t" + std::to_string(i) + ".png")).string());
    }
    std::ofstream cfg(dir / "train.cfg");
    cfg << "model.hidden_width = 4\n"
        << "train.steps = 3\n"
        << "train.batch_size = 1\n"
        << "train.patch_size = 12\n"
        << "train.unroll_iterations = 1\n"
        << "train.seed = 3\n";
    cfg.close();
    const RunResult res = run("train --data " + (dir / "data").string() + " --out " +
                              (dir / "w.idfw").string() + " --config " + (dir / "train.cfg").string());
    CHECK(res.exit_code == 0);
    CHECK(fs::exists(dir / "w.idfw"));
    const std::string log = read_file(dir / "w.idfw.log.csv");
    CHECK(log.find("step,loss,wall_ms") == 0);
    int lines = 0;
    for (char c : log) {
        if (c == '\n') ++lines;
    }
    CHECK(lines == 4);  // header + 3 steps
    ModelConfig mc;
    mc.hidden_width = 4;
    CHECK(load_weights((dir / "w.idfw").string(), mc).config.hidden_width == 4);
    fs::remove_all(dir);
}

TEST_CASE("bench sweeps the suite and writes the table") {
    const fs::path dir = make_workdir("idf_cli_bench");
    fs::create_directories(dir / "data");
    for (int i = 0; i < 2; ++i) {
        save_image(oracle::random_texture(3, 24, 24, 60 + i),
                   (dir / "data" / ("d" + std::to_string(i) + ".png")).string());
    }
    ModelConfig cfg;
    cfg.hidden_width = 8;
    save_weights(ModelWeights::init(cfg, 7), (dir / "w.idfw").string());
    std::ofstream suite(dir / "suite.txt");
    suite << "# two desk-scale rows\n"
          << "gaussian:sigma=15\n"
          << "salt_pepper:density=0.02\n";
    suite.close();
    const RunResult res = run("bench --data " + (dir / "data").string() + " --weights " +
                              (dir / "w.idfw").string() + " --suite " + (dir / "suite.txt").string() +
                              " --report " + (dir / "bench.csv").string() +
                              " --set model.hidden_width=8 --set engine.max_iterations=3" +
                              " --set engine.stop_mode=kernel-dic");
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("| gaussian:sigma=15 |") != std::string::npos);
    const std::string csv = read_file(dir / "bench.csv");
    CHECK(csv.find("noise,psnr_db,ssim,mean_iterations,early_stops") == 0);
    CHECK(csv.find("salt_pepper:density=0.02,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("exit codes: usage 2, io 3, validation 4") {
    CHECK(run("--definitely-not-a-flag").exit_code == 2);
    CHECK(run("denoise --in only").exit_code == 2);
    CHECK(run("param-count --set bogus.key=1").exit_code == 4);

    const fs::path dir = make_workdir("idf_cli_codes");
    save_image(oracle::random_image(3, 16, 16, 1), (dir / "in.png").string());
    ModelConfig cfg;
    cfg.hidden_width = 8;
    save_weights(ModelWeights::init(cfg, 8), (dir / "w.idfw").string());

    // Missing input file -> IO error.
    CHECK(run("denoise --in /nonexistent.png --out " + (dir / "o.png").string() + " --weights " +
              (dir / "w.idfw").string() + " --set model.hidden_width=8")
              .exit_code == 3);

    // Shape mismatch against default config -> validation error.
    CHECK(run("denoise --in " + (dir / "in.png").string() + " --out " + (dir / "o.png").string() +
              " --weights " + (dir / "w.idfw").string())
              .exit_code == 4);

    // Corrupt the weight file: CRC failure -> validation error.
    {
        std::fstream f(dir / "w.idfw", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(60);
        f.write("\xff", 1);
    }
    CHECK(run("denoise --in " + (dir / "in.png").string() + " --out " + (dir / "o.png").string() +
              " --weights " + (dir / "w.idfw").string() + " --set model.hidden_width=8")
              .exit_code == 4);
    fs::remove_all(dir);
}

TEST_CASE("in-process entry point mirrors the binary") {
    const char* argv[] = {"idf", "param-count"};
    CHECK(run_cli(2, argv) == 0);
    const char* bad[] = {"idf", "nonsense-subcommand"};
    CHECK(run_cli(2, bad) == 2);
}
