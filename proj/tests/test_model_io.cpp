#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "common/oracles.hpp"
#include "common/test_util.hpp"
#include "jlcm/container_io.hpp"
#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"
#include "jlcm/model.hpp"
#include "jlcm/rng.hpp"

using namespace jlcm;
using namespace jlcm_test;

namespace {

ModelContainer two_layer_model(std::uint64_t seed, std::size_t n0 = 6, std::size_t n1 = 5,
                               std::size_t n2 = 4) {
    ModelContainer m;
    m.layers.push_back(random_layer(n1, n0, seed, Activation::relu, 0.6, true));
    m.layers.push_back(random_layer(n2, n1, mix_seed(seed, 1), Activation::identity, 0.6, true));
    return m;
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

} // namespace

TEST_CASE("forward basics") {
    ModelContainer m;
    m.layers.push_back(make_layer(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Matf in(1, 3);
    in.data = {1, 2, 3};
    const Matf out = forward(m, in, 0, Capture::output);
    CHECK(out.data == std::vector<float>{1, 2, 3});

    ModelContainer r;
    r.layers.push_back(make_layer(2, 2, {1, 1, 1, -1}, Activation::relu));
    Matf in2(1, 2);
    in2.data = {1, 2};
    const Matf out2 = forward(r, in2, 0, Capture::output);
    CHECK(out2(0, 0) == doctest::Approx(3.0));
    CHECK(out2(0, 1) == 0.0f); // relu(-1)

    const ModelContainer deep = two_layer_model(10);
    const Matf x = gaussian_matrix(4, 6, 11);
    const Matf pre1 = forward(deep, x, 1, Capture::pre_layer_input);
    const Matf out0 = forward(deep, x, 0, Capture::output);
    CHECK(pre1.data == out0.data);
    CHECK(forward(deep, x, 0, Capture::pre_layer_input).data == x.data);
}

TEST_CASE("forward is deterministic") {
    const ModelContainer m = two_layer_model(21);
    const Matf x = gaussian_matrix(8, 6, 22);
    const Matf a = forward_all(m, x);
    const Matf b = forward_all(m, x);
    CHECK(a.data == b.data);
}

TEST_CASE("gelu activation and derivative are consistent") {
    for (double x : {-2.0, -0.3, 0.0, 0.7, 3.1}) {
        const double h = 1e-6;
        const double fd =
            (activate(Activation::gelu, x + h) - activate(Activation::gelu, x - h)) / (2 * h);
        CHECK(activate_derivative(Activation::gelu, x) == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK(activate(Activation::gelu, 0.0) == 0.0);
}

TEST_CASE("apply_permutation identity and inverse restore") {
    const ModelContainer m = two_layer_model(31);
    std::vector<std::size_t> identity(m.layers[0].n_out());
    std::iota(identity.begin(), identity.end(), 0);
    const ModelContainer same = apply_permutation(m, 0, identity);
    CHECK(same.layers[0].weights.data == m.layers[0].weights.data);
    CHECK(same.layers[1].weights.data == m.layers[1].weights.data);

    Rng rng(32);
    std::vector<std::size_t> sigma(m.layers[0].n_out());
    std::iota(sigma.begin(), sigma.end(), 0);
    for (std::size_t i = sigma.size(); i > 1; --i) std::swap(sigma[i - 1], sigma[rng.index(i)]);
    std::vector<std::size_t> inverse(sigma.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) inverse[sigma[i]] = i;

    const ModelContainer permuted = apply_permutation(m, 0, sigma);
    const ModelContainer restored = apply_permutation(permuted, 0, inverse);
    CHECK(restored.layers[0].weights.data == m.layers[0].weights.data);
    CHECK(restored.layers[0].bias == m.layers[0].bias);
    CHECK(restored.layers[1].weights.data == m.layers[1].weights.data);
}

TEST_CASE("permutation equivalence over random permutations") {
    const ModelContainer m = two_layer_model(41);
    const Matf x = gaussian_matrix(100, 6, 42);
    const Matf base = forward_all(m, x);
    Rng rng(43);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<std::size_t> sigma(m.layers[0].n_out());
        std::iota(sigma.begin(), sigma.end(), 0);
        for (std::size_t i = sigma.size(); i > 1; --i) std::swap(sigma[i - 1], sigma[rng.index(i)]);
        const Matf out = forward_all(apply_permutation(m, 0, sigma), x);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(out.data[i] - base.data[i]) <= 1e-6f);
    }
}

TEST_CASE("apply_permutation rejects the last layer and bad sigma") {
    const ModelContainer m = two_layer_model(51);
    std::vector<std::size_t> sigma(m.layers[1].n_out());
    std::iota(sigma.begin(), sigma.end(), 0);
    CHECK_THROWS_AS(apply_permutation(m, 1, sigma), std::invalid_argument);
    CHECK_THROWS_AS(apply_permutation(m, 0, {0, 0, 1, 2, 3, 4}), std::invalid_argument);
}

TEST_CASE("container roundtrip f32 is bitwise") {
    const std::string dir = temp_dir("model_io");
    const ModelContainer m = two_layer_model(61);
    save_container(m, dir + "/m.jlcm", StorageType::f32);
    const ModelContainer loaded = load_container(dir + "/m.jlcm");
    REQUIRE(loaded.layers.size() == 2);
    CHECK(loaded.layers[0].weights.data == m.layers[0].weights.data);
    CHECK(loaded.layers[1].weights.data == m.layers[1].weights.data);
    CHECK(loaded.layers[0].bias == m.layers[0].bias);
    CHECK(loaded.layers[0].activation == Activation::relu);
    CHECK(loaded.dtype_stored == StorageType::f32);
}

TEST_CASE("container f16 storage rounds like the IEEE reference and is idempotent") {
    const std::string dir = temp_dir("model_io");
    ModelContainer m;
    m.layers.push_back(make_layer(1, 4, {1.0f, 1e-8f, 0.333333f, -65519.0f}));

    save_container(m, dir + "/h.jlcm", StorageType::f16);
    const ModelContainer loaded = load_container(dir + "/h.jlcm");
    CHECK(loaded.layers[0].weights(0, 0) == 1.0f); // exactly representable
    for (std::size_t i = 0; i < 4; ++i) {
        const float expect = half_pattern_value(half_reference_bits(m.layers[0].weights.data[i]));
        CHECK(loaded.layers[0].weights.data[i] == float(expect));
    }
    // 1e-8 is below half the smallest subnormal
    CHECK(loaded.layers[0].weights(0, 1) == 0.0f);

    save_container(loaded, dir + "/h2.jlcm", StorageType::f16);
    const ModelContainer loaded2 = load_container(dir + "/h2.jlcm");
    save_container(loaded2, dir + "/h3.jlcm", StorageType::f16);
    CHECK(file_bytes(dir + "/h2.jlcm") == file_bytes(dir + "/h3.jlcm"));
}

TEST_CASE("half conversion matches the value-space reference") {
    std::vector<float> cases = {0.0f,    -0.0f,   1.0f,     -1.0f,   65504.0f, 65519.9f,
                                65520.0f, 1e-8f,  5.96e-8f, 2.98e-8f, 6.1e-5f, 6.0e-5f,
                                0.1f,    -0.1f,   1024.03f, 3.14159f};
    Rng rng(71);
    for (int i = 0; i < 3000; ++i)
        cases.push_back(float(rng.gaussian() * std::pow(10.0, double(rng.index(10)) - 5.0)));
    for (float f : cases) {
        const std::uint16_t got = float_to_half_bits(f);
        const std::uint16_t expect = half_reference_bits(f);
        CAPTURE(f);
        CHECK(got == expect);
        if (!std::isnan(f)) {
            // widening back must be exact for every pattern
            CHECK(double(half_bits_to_float(got)) == half_pattern_value(got));
        }
    }
}

TEST_CASE("load errors are distinct") {
    const std::string dir = temp_dir("model_io");
    const ModelContainer m = two_layer_model(81);
    save_container(m, dir + "/ok.jlcm", StorageType::f32);
    std::vector<std::uint8_t> bytes = file_bytes(dir + "/ok.jlcm");

    SUBCASE("blob one byte short") {
        bytes.pop_back();
        write_bytes(dir + "/short.jlcm", bytes);
        try {
            load_container(dir + "/short.jlcm");
            FAIL("expected a blob mismatch");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::blob_mismatch);
            CHECK(std::string(e.what()).find("blob length mismatch") != std::string::npos);
        }
    }
    SUBCASE("trailing byte") {
        bytes.push_back(0);
        write_bytes(dir + "/long.jlcm", bytes);
        CHECK_THROWS_AS(load_container(dir + "/long.jlcm"), IoError);
    }
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        write_bytes(dir + "/magic.jlcm", bytes);
        try {
            load_container(dir + "/magic.jlcm");
            FAIL("expected bad magic");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::bad_magic);
        }
    }
    SUBCASE("bad version") {
        bytes[4] = 9;
        write_bytes(dir + "/ver.jlcm", bytes);
        try {
            load_container(dir + "/ver.jlcm");
            FAIL("expected bad version");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::bad_version);
        }
    }
    SUBCASE("non-finite weight") {
        // first weight starts right after the 10-byte global header and two
        // 10-byte layer records
        const std::size_t offset = 10 + 2 * 10;
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(&bytes[offset], &nan, 4);
        write_bytes(dir + "/nan.jlcm", bytes);
        try {
            load_container(dir + "/nan.jlcm");
            FAIL("expected non-finite error");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::non_finite);
        }
    }
}

TEST_CASE("dimension incompatibility is reported with the layer index") {
    // 8x4 followed by 3x5: the second layer expects width 8
    std::vector<std::uint8_t> bytes = {'J', 'L', 'C', 'M', 1, 0};
    auto u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    };
    u32(2);
    u32(8); u32(4); bytes.push_back(0); bytes.push_back(0);
    u32(3); u32(5); bytes.push_back(0); bytes.push_back(0);
    for (std::size_t i = 0; i < 8 * 4 + 3 * 5; ++i) u32(0x3f800000); // 1.0f
    const std::string dir = temp_dir("model_io");
    write_bytes(dir + "/dim.jlcm", bytes);
    try {
        load_container(dir + "/dim.jlcm");
        FAIL("expected dimension incompatibility");
    } catch (const IoError& e) {
        CHECK(e.kind() == IoError::Kind::dim_incompat);
        CHECK(std::string(e.what()) == "dimension incompatibility at layer 1");
    }
}

TEST_CASE("calibration roundtrip and validation") {
    const std::string dir = temp_dir("model_io");
    CalibrationSet calib;
    calib.inputs = gaussian_matrix(5, 3, 91);
    save_calibration(calib, dir + "/c.jcal");
    const CalibrationSet loaded = load_calibration(dir + "/c.jcal");
    CHECK(loaded.inputs.data == calib.inputs.data);
    CHECK(loaded.batch_size() == 5);

    std::vector<std::uint8_t> bytes = file_bytes(dir + "/c.jcal");
    bytes.pop_back();
    write_bytes(dir + "/c_bad.jcal", bytes);
    CHECK_THROWS_AS(load_calibration(dir + "/c_bad.jcal"), IoError);
}
