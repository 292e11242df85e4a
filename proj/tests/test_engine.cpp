#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "idf/engine.hpp"
#include "idf/noise.hpp"
#include "oracles.hpp"

using namespace idf;

namespace {

ModelConfig small_cfg(int hidden = 8) {
    ModelConfig cfg;
    cfg.hidden_width = hidden;
    return cfg;
}

EngineConfig engine_cfg(StopMode mode, int t = 10, double kappa = 0.015) {
    EngineConfig cfg;
    cfg.stop_mode = mode;
    cfg.max_iterations = t;
    cfg.kappa = kappa;
    return cfg;
}

KernelField make_field(int taps, int positions, double value) {
    KernelField f;
    f.kernel_area = taps;
    f.positions = positions;
    f.data = Tensor({1, taps, positions});
    f.data.fill(value);
    f.normalized = true;
    return f;
}

bool images_equal(const Image& a, const Image& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i] != b.values[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("confidence_score worked examples") {
    KernelField a = make_field(9, 16, 0.1);
    KernelField b = a;
    CHECK(confidence_score(a, b) == 0.0);

    // center plane +0.1 everywhere
    for (int j = 0; j < 16; ++j) a.at(4, j) += 0.1;
    CHECK(confidence_score(a, b) == doctest::Approx(0.1).epsilon(1e-12));

    // +0.2 on half of the positions, -0.2 on the other half: the signed sum
    // cancels, the mean-absolute variant does not.
    KernelField c = b;
    for (int j = 0; j < 16; ++j) c.at(4, j) += (j < 8 ? 0.2 : -0.2);
    CHECK(confidence_score(c, b) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(confidence_score(c, b, true) == doctest::Approx(0.2).epsilon(1e-12));

    KernelField bad_field = make_field(25, 16, 0.0);
    CHECK_THROWS_AS(confidence_score(a, bad_field), ValidationError);
}

TEST_CASE("fixed mode with T=1 equals a single refinement step") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 50);
    const Image img = oracle::random_image(3, 12, 12, 1);
    const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::fixed, 1));
    CHECK(res.iterations_used == 1);
    CHECK(res.stop_reason == StopReason::max_reached);
    CHECK(res.confidence_history.empty());
    const DidResult ref = did_forward(img, nullptr, w, 2);  // t=1 uses dilation 2
    CHECK(images_equal(res.estimate, ref.estimate));
}

TEST_CASE("kernel-dic with a huge kappa stops at the first checkable step") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 51);
    const Image img = oracle::random_image(3, 12, 12, 2);
    const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::kernel_dic, 10, 1e18));
    CHECK(res.iterations_used == 2);
    CHECK(res.stop_reason == StopReason::confidence_converged);
    CHECK(res.confidence_history.size() == 1);
}

TEST_CASE("kernel-dic with kappa=0 always reaches T") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 52);
    const Image img = oracle::random_image(3, 10, 10, 3);
    const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::kernel_dic, 6, 0.0));
    CHECK(res.iterations_used == 6);
    CHECK(res.stop_reason == StopReason::max_reached);
    CHECK(res.confidence_history.size() == 5);
}

TEST_CASE("dilation alternates starting from two") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 53);
    const Image img = oracle::random_image(3, 9, 9, 4);
    const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::fixed, 5));
    REQUIRE(res.records.size() == 5);
    for (const auto& rec : res.records) {
        CHECK(rec.dilation == (rec.t % 2 == 1 ? 2 : 1));
    }
}

TEST_CASE("constant input stops at t=2 under kernel-dic and stays constant") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 54);
    const Image img = Image::constant(3, 16, 16, 0.25);
    for (double kappa : {1e-9, 0.015}) {
        const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::kernel_dic, 10, kappa));
        CHECK(res.iterations_used == 2);
        CHECK(res.stop_reason == StopReason::confidence_converged);
        REQUIRE(res.confidence_history.size() == 1);
        CHECK(res.confidence_history[0] == 0.0);
        for (size_t i = 0; i < res.estimate.values.size(); ++i) {
            REQUIRE(std::fabs(res.estimate.values[i] - 0.25) <= 1e-12);
        }
    }
    // Fixed mode keeps the constant across all iterations too.
    const DenoiseResult fixed = denoise(img, w, engine_cfg(StopMode::fixed, 10));
    for (size_t i = 0; i < fixed.estimate.values.size(); ++i) {
        REQUIRE(std::fabs(fixed.estimate.values[i] - 0.25) <= 1e-10);
    }
}

TEST_CASE("denoise is deterministic") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 55);
    const Image img = oracle::random_image(3, 14, 14, 5);
    const EngineConfig cfg = engine_cfg(StopMode::kernel_dic, 8, 0.01);
    const DenoiseResult a = denoise(img, w, cfg);
    const DenoiseResult b = denoise(img, w, cfg);
    CHECK(a.iterations_used == b.iterations_used);
    CHECK(images_equal(a.estimate, b.estimate));
    REQUIRE(a.confidence_history.size() == b.confidence_history.size());
    for (size_t i = 0; i < a.confidence_history.size(); ++i) {
        CHECK(a.confidence_history[i] == b.confidence_history[i]);
    }
}

TEST_CASE("iterations are monotone in kappa") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 56);
    Image img = oracle::random_texture(3, 24, 24, 6);
    NoiseSpec noise;
    noise.sigma = 25.0;
    noise.seed = 7;
    img = apply_noise(img, noise);
    int prev_iters = 1 << 20;
    for (double kappa : {0.005, 0.01, 0.015, 0.02, 0.025, 0.03}) {
        const DenoiseResult res = denoise(img, w, engine_cfg(StopMode::kernel_dic, 10, kappa));
        CHECK(res.iterations_used <= prev_iters);
        prev_iters = res.iterations_used;
    }
}

TEST_CASE("full trace replays through the refinement step bit-for-bit") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 57);
    const Image img = oracle::random_image(3, 10, 10, 8);
    EngineConfig cfg = engine_cfg(StopMode::fixed, 4);
    cfg.trace_level = TraceLevel::full;
    const DenoiseResult res = denoise(img, w, cfg);
    REQUIRE(res.estimates.size() == 4);
    REQUIRE(res.kernel_centers.size() == 4);
    CHECK(res.confidence_history.size() == 3);

    const Image* prev2 = nullptr;
    const Image* prev = &img;
    for (int t = 1; t <= 4; ++t) {
        const DidResult step = did_forward(*prev, prev2, w, t % 2 == 1 ? 2 : 1);
        CHECK(images_equal(step.estimate, res.estimates[static_cast<size_t>(t - 1)]));
        prev2 = prev;
        prev = &res.estimates[static_cast<size_t>(t - 1)];
    }
    CHECK(images_equal(res.estimate, res.estimates.back()));
}

TEST_CASE("image-dic stops on the image residual score") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 58);
    const Image img = oracle::random_image(3, 12, 12, 9);
    const DenoiseResult big = denoise(img, w, engine_cfg(StopMode::image_dic, 10, 1e18));
    CHECK(big.iterations_used == 2);
    CHECK(big.stop_reason == StopReason::confidence_converged);
    const DenoiseResult none = denoise(img, w, engine_cfg(StopMode::image_dic, 5, 0.0));
    CHECK(none.iterations_used == 5);
    CHECK(none.stop_reason == StopReason::max_reached);
}

TEST_CASE("iteration_stats summaries") {
    DenoiseResult a, b, c;
    a.iterations_used = 7;
    a.stop_reason = StopReason::confidence_converged;
    b.iterations_used = 8;
    b.stop_reason = StopReason::max_reached;
    c.iterations_used = 9;
    c.stop_reason = StopReason::confidence_converged;

    IterationStats one = iteration_stats({a});
    CHECK(one.mean_iterations == doctest::Approx(7.0));
    CHECK(one.min_iterations == 7);
    CHECK(one.max_iterations == 7);

    IterationStats three = iteration_stats({a, b, c});
    CHECK(three.mean_iterations == doctest::Approx(8.0));
    CHECK(three.min_iterations == 7);
    CHECK(three.max_iterations == 9);
    CHECK(three.stopped_early == 2);
    CHECK(three.reached_max == 1);

    CHECK_THROWS_AS(iteration_stats({}), ValidationError);
}

TEST_CASE("write_trace emits the jsonl record and per-iteration images") {
    namespace fs = std::filesystem;
    const ModelWeights w = ModelWeights::init(small_cfg(), 59);
    const Image img = oracle::random_image(3, 12, 12, 10);
    EngineConfig cfg = engine_cfg(StopMode::fixed, 3);
    cfg.trace_level = TraceLevel::full;
    const DenoiseResult res = denoise(img, w, cfg);

    const fs::path dir = fs::temp_directory_path() / "idf_trace_test";
    fs::remove_all(dir);
    write_trace(res, dir.string());

    std::ifstream jsonl(dir / "trace.jsonl");
    REQUIRE(jsonl.good());
    std::string line;
    int lines = 0;
    while (std::getline(jsonl, line)) {
        ++lines;
        CHECK(line.find("\"t\":") != std::string::npos);
        CHECK(line.find("\"dilation\":") != std::string::npos);
        CHECK(line.find("\"confidence\":") != std::string::npos);
        CHECK(line.find("\"degenerate_kernels\":") != std::string::npos);
    }
    CHECK(lines == 3);
    CHECK(fs::exists(dir / "iter_01.png"));
    CHECK(fs::exists(dir / "iter_03.png"));
    CHECK(fs::exists(dir / "kernel_01.png"));
    CHECK(fs::exists(dir / "kernel_03.png"));
    fs::remove_all(dir);
}

TEST_CASE("engine validates config against the weights") {
    const ModelWeights w = ModelWeights::init(small_cfg(), 60);
    const Image img = oracle::random_image(3, 8, 8, 11);
    EngineConfig cfg = engine_cfg(StopMode::fixed, 2);
    cfg.kernel_size = 5;
    CHECK_THROWS_AS(denoise(img, w, cfg), ValidationError);
    cfg = engine_cfg(StopMode::fixed, 0);
    CHECK_THROWS_AS(denoise(img, w, cfg), ValidationError);
}
