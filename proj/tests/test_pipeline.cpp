#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "common/synthetic.hpp"
#include "common/test_util.hpp"
#include "jlcm/container_io.hpp"
#include "jlcm/pipeline.hpp"
#include "jlcm/rng.hpp"

using namespace jlcm;
using namespace jlcm_test;

namespace {

// Two layers drawn from {-1.5, -0.5, 0.5, 1.5}; alpha = 7.5 yields one
// codebook of four entries, so compression can be lossless.
ModelContainer planted_codebook_model(std::uint64_t seed) {
    ModelContainer model;
    LinearLayer l0;
    l0.weights = Matf(8, 16);
    for (std::size_t r = 0; r < 8; ++r) {
        const auto row = planted_row_equal(16, 1.0, mix_seed(seed, r));
        for (std::size_t c = 0; c < 16; ++c) l0.weights(r, c) = row[c];
    }
    l0.activation = Activation::relu;
    l0.bias.assign(8, 0.0f);
    for (std::size_t r = 0; r < 8; ++r) l0.bias[r] = 0.125f * float(int(r % 5) - 2);

    LinearLayer l1;
    l1.weights = Matf(4, 8);
    for (std::size_t r = 0; r < 4; ++r) {
        const auto row = planted_row_equal(8, 1.0, mix_seed(seed, 100 + r));
        for (std::size_t c = 0; c < 8; ++c) l1.weights(r, c) = row[c];
    }
    l1.activation = Activation::identity;

    model.layers = {l0, l1};
    return model;
}

// Layer values from {-3, -1, 1, 3} arranged so every scale group has
// population variance exactly 4; the shared normalized codebook and the
// scales are then all exactly representable.
ModelContainer planted_scaled_model(std::uint64_t seed) {
    ModelContainer model;
    LinearLayer l0;
    l0.weights = Matf(8, 16);
    for (std::size_t r = 0; r < 8; ++r) {
        const auto row = planted_row_unit_std(16, 1.0, mix_seed(seed, r));
        for (std::size_t c = 0; c < 16; ++c) l0.weights(r, c) = row[c];
    }
    l0.activation = Activation::relu;

    LinearLayer l1;
    l1.weights = Matf(4, 8);
    const int counts_a[4] = {1, 3, 3, 1}; // rows 0, 1
    const int counts_b[4] = {2, 2, 2, 2}; // rows 2, 3
    const double values[4] = {-3.0, -1.0, 1.0, 3.0};
    for (std::size_t r = 0; r < 4; ++r) {
        const int* counts = r < 2 ? counts_a : counts_b;
        std::size_t c = 0;
        for (std::size_t v = 0; v < 4; ++v)
            for (int rep = 0; rep < counts[v]; ++rep) l1.weights(r, c++) = float(values[v]);
        REQUIRE(c == 8);
    }
    l1.activation = Activation::identity;

    model.layers = {l0, l1};
    return model;
}

CalibrationSet make_calib(const ModelContainer& model, std::size_t batch, std::uint64_t seed) {
    CalibrationSet calib;
    calib.inputs = gaussian_matrix(batch, model.layers.front().n_in(), seed);
    return calib;
}

} // namespace

TEST_CASE("planted multi-codebook model compresses losslessly") {
    const ModelContainer model = planted_codebook_model(11);
    RunConfig cfg;
    cfg.alpha = 7.5;
    cfg.optimize = false;
    const CompressionOutcome outcome = compress_model(model, nullptr, cfg);
    CHECK(outcome.layers[0].plan.codebook_size == 4);
    CHECK(outcome.layers[0].plan.num_codebooks == 1);
    CHECK(outcome.layers[0].init_weight_mse == 0.0);
    CHECK(outcome.layers[1].init_weight_mse == 0.0);

    const Matf inputs = gaussian_matrix(32, 16, 12);
    const EvalMetrics metrics = evaluate(model, outcome.compressed, inputs);
    CHECK(metrics.output_mse == 0.0);
    CHECK(metrics.max_abs_deviation == 0.0);
    CHECK(metrics.top1_agreement == 1.0);
    for (double mse : metrics.layer_weight_mse) CHECK(mse == 0.0);
    for (const auto& trace : outcome.traces) CHECK(trace.empty());
}

TEST_CASE("planted multi-scale model compresses losslessly") {
    const ModelContainer model = planted_scaled_model(13);
    RunConfig cfg;
    cfg.alpha = 7.5;
    cfg.mode = ModeChoice::multi_scale;
    cfg.optimize = false;
    const CompressionOutcome outcome = compress_model(model, nullptr, cfg);
    CHECK(outcome.layers[0].plan.num_scales == 1);
    CHECK(outcome.layers[0].init_weight_mse == 0.0);
    CHECK(outcome.layers[1].init_weight_mse == 0.0);

    const Matf inputs = gaussian_matrix(32, 16, 14);
    const EvalMetrics metrics = evaluate(model, outcome.compressed, inputs);
    CHECK(metrics.output_mse == 0.0);
}

TEST_CASE("optimization does not hurt the planted-noise model") {
    const ModelContainer model = noisy_planted_model(16, 12, 8, 0.25, 0.05, 21);
    const CalibrationSet calib = make_calib(model, 24, 22);
    const Matf eval_inputs = gaussian_matrix(128, 12, 23);

    RunConfig init_only;
    init_only.alpha = 7.5;
    init_only.optimize = false;
    const EvalMetrics init_metrics =
        evaluate(model, compress_model(model, &calib, init_only).compressed, eval_inputs);

    RunConfig full = init_only;
    full.optimize = true;
    full.schedule.iterations = 800;
    const CompressionOutcome opt_outcome = compress_model(model, &calib, full);
    const EvalMetrics opt_metrics = evaluate(model, opt_outcome.compressed, eval_inputs);

    CHECK(opt_metrics.output_mse <= init_metrics.output_mse);
    REQUIRE(opt_outcome.traces[0].size() == 800);
    CHECK(opt_outcome.traces[0].front().total >= opt_outcome.traces[0].back().total);
}

TEST_CASE("optimizer consumes features from the compressed prefix") {
    const ModelContainer model = noisy_planted_model(12, 12, 6, 0.3, 0.08, 31);
    const CalibrationSet calib = make_calib(model, 16, 32);

    RunConfig cfg;
    cfg.alpha = 16.0; // two-entry codebooks distort the prefix measurably
    cfg.optimize = true;
    cfg.schedule.iterations = 40;
    const CompressionOutcome outcome = compress_model(model, &calib, cfg);

    // no re-ordering at a single group, so the reference equals the input
    REQUIRE_FALSE(outcome.layers[0].reordered);
    const ModelContainer decompressed = decompress_model(outcome.compressed);
    ModelContainer prefix = model;
    prefix.layers[0] = decompressed.layers[0];

    const Matf x_original = forward(model, calib.inputs, 1, Capture::pre_layer_input);
    const Matf x_compressed = forward(prefix, calib.inputs, 1, Capture::pre_layer_input);
    double expect = 0.0;
    for (std::size_t i = 0; i < x_original.size(); ++i) {
        const double diff = double(x_compressed.data[i]) - double(x_original.data[i]);
        expect += diff * diff;
    }
    expect /= double(x_original.size());

    CHECK(outcome.layers[1].calib_feature_mse > 0.0);
    CHECK(outcome.layers[1].calib_feature_mse == doctest::Approx(expect).epsilon(1e-12));
    CHECK(outcome.layers[0].calib_feature_mse == 0.0);
}

TEST_CASE("evaluate on identical models reports zeros") {
    const ModelContainer model = noisy_planted_model(10, 8, 5, 0.3, 0.1, 41);
    const Matf inputs = gaussian_matrix(20, 8, 42);
    const EvalMetrics metrics = evaluate(model, model, inputs);
    CHECK(metrics.output_mse == 0.0);
    CHECK(metrics.max_abs_deviation == 0.0);
    CHECK(metrics.top1_agreement == 1.0);
    for (double mse : metrics.layer_weight_mse) CHECK(mse == 0.0);
}

TEST_CASE("tighter targets cost more output error") {
    double mse_high = 0.0, mse_low = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ModelContainer model;
        model.layers.push_back(random_layer(24, 16, 500 + seed, Activation::relu, 0.4));
        model.layers.push_back(random_layer(8, 24, 600 + seed, Activation::identity, 0.4));
        const Matf inputs = gaussian_matrix(64, 16, 700 + seed);
        for (double alpha : {3.9, 7.5}) {
            RunConfig cfg;
            cfg.alpha = alpha;
            cfg.optimize = false;
            const EvalMetrics metrics =
                evaluate(model, compress_model(model, nullptr, cfg).compressed, inputs);
            (alpha == 7.5 ? mse_high : mse_low) += metrics.output_mse;
        }
    }
    CHECK(mse_high >= mse_low);
}

TEST_CASE("compression is deterministic end to end") {
    const std::string dir = temp_dir("pipeline");
    const ModelContainer model = noisy_planted_model(12, 10, 6, 0.3, 0.06, 51);
    const CalibrationSet calib = make_calib(model, 16, 52);
    RunConfig cfg;
    cfg.alpha = 6.0;
    cfg.optimize = true;
    cfg.schedule.iterations = 200;

    const CompressionOutcome a = compress_model(model, &calib, cfg);
    const CompressionOutcome b = compress_model(model, &calib, cfg);
    serialize_compressed(a.compressed, dir + "/a.jlcz");
    serialize_compressed(b.compressed, dir + "/b.jlcz");
    std::ifstream fa(dir + "/a.jlcz", std::ios::binary), fb(dir + "/b.jlcz", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
    REQUIRE(a.traces.size() == b.traces.size());
    for (std::size_t l = 0; l < a.traces.size(); ++l) {
        REQUIRE(a.traces[l].size() == b.traces[l].size());
        for (std::size_t i = 0; i < a.traces[l].size(); ++i)
            CHECK(a.traces[l][i].total == b.traces[l][i].total);
    }
}

TEST_CASE("init-only parallelism does not change the artifact") {
    ModelContainer model;
    for (int l = 0; l < 4; ++l)
        model.layers.push_back(random_layer(20, 20, 800 + l, Activation::relu, 0.4));
    RunConfig cfg;
    cfg.alpha = 5.33;
    cfg.optimize = false;

    setenv("JLCM_THREADS", "1", 1);
    const CompressionOutcome serial = compress_model(model, nullptr, cfg);
    setenv("JLCM_THREADS", "3", 1);
    const CompressionOutcome parallel = compress_model(model, nullptr, cfg);
    unsetenv("JLCM_THREADS");

    REQUIRE(serial.compressed.layers.size() == parallel.compressed.layers.size());
    for (std::size_t l = 0; l < serial.compressed.layers.size(); ++l) {
        CHECK(serial.compressed.layers[l].codewords == parallel.compressed.layers[l].codewords);
        CHECK(serial.compressed.layers[l].packed_indices ==
              parallel.compressed.layers[l].packed_indices);
    }
}

TEST_CASE("the input model is never mutated") {
    const ModelContainer model = noisy_planted_model(10, 8, 5, 0.3, 0.1, 61);
    const ModelContainer pristine = model;
    const CalibrationSet calib = make_calib(model, 8, 62);
    RunConfig cfg;
    cfg.alpha = 3.9;
    cfg.optimize = true;
    cfg.schedule.iterations = 30;
    compress_model(model, &calib, cfg);
    REQUIRE(model.layers.size() == pristine.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        CHECK(model.layers[l].weights.data == pristine.layers[l].weights.data);
        CHECK(model.layers[l].bias == pristine.layers[l].bias);
    }
}

TEST_CASE("pipeline argument validation") {
    const ModelContainer model = noisy_planted_model(10, 8, 5, 0.3, 0.1, 71);
    RunConfig cfg;
    cfg.optimize = true;
    CHECK_THROWS_AS(compress_model(model, nullptr, cfg), std::invalid_argument);

    CalibrationSet bad;
    bad.inputs = gaussian_matrix(4, 9, 72); // width mismatch
    CHECK_THROWS_AS(compress_model(model, &bad, cfg), std::invalid_argument);
}

TEST_CASE("run report carries the plan and footprint") {
    const ModelContainer model = planted_codebook_model(81);
    RunConfig cfg;
    cfg.alpha = 3.9;
    cfg.optimize = false;
    const CompressionOutcome outcome = compress_model(model, nullptr, cfg);
    const std::string report = run_report_json(cfg, outcome);
    CHECK(report.find("\"codebook_size\": 16") != std::string::npos);
    CHECK(report.find("\"alpha_weights\"") != std::string::npos);
    CHECK(report.find("\"m_w_bits\"") != std::string::npos);
}
