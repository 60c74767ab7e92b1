#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "common/synthetic.hpp"
#include "common/test_util.hpp"
#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"
#include "jlcm/packfmt.hpp"
#include "jlcm/pipeline.hpp"
#include "jlcm/rng.hpp"

using namespace jlcm;
using namespace jlcm_test;

namespace {

std::vector<std::uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// A small compressed model produced through the real pipeline.
CompressionOutcome sample_outcome(std::uint64_t seed, std::size_t layers = 2) {
    ModelContainer model;
    std::size_t width = 16;
    for (std::size_t l = 0; l < layers; ++l) {
        model.layers.push_back(random_layer(16, width, mix_seed(seed, l),
                                            l + 1 == layers ? Activation::identity
                                                            : Activation::relu,
                                            0.5, true));
        width = 16;
    }
    RunConfig cfg;
    cfg.alpha = 5.33;
    cfg.optimize = false;
    return compress_model(model, nullptr, cfg);
}

} // namespace

TEST_CASE("bit layout of packed indices") {
    CHECK(pack_indices({0, 1, 2, 3}, 2) == std::vector<std::uint8_t>{0xE4});
    CHECK(pack_indices({}, 3).empty());
    CHECK(pack_indices(std::vector<std::int32_t>(10, 0), 3) ==
          std::vector<std::uint8_t>(4, 0)); // ceil(30 / 8) zero bytes
    CHECK(pack_indices({1, 1, 1, 1, 1, 1, 1, 1}, 1) == std::vector<std::uint8_t>{0xFF});
    CHECK(pack_indices({5}, 3) == std::vector<std::uint8_t>{0x05});
}

TEST_CASE("pack rejects out-of-range input and widths") {
    CHECK_THROWS_AS(pack_indices({4}, 2), std::invalid_argument);
    CHECK_THROWS_AS(pack_indices({-1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(pack_indices({0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(pack_indices({0}, 9), std::invalid_argument);
    CHECK_THROWS_AS(unpack_indices({0xFF}, 3, 5), IoError);
}

TEST_CASE("pack and unpack are inverse over random sequences") {
    Rng rng(5);
    for (unsigned bits = 1; bits <= 8; ++bits) {
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t count = rng.index(60);
            std::vector<std::int32_t> indices(count);
            for (auto& idx : indices) idx = std::int32_t(rng.index(std::size_t(1) << bits));
            const auto packed = pack_indices(indices, bits);
            CHECK(packed.size() == (count * bits + 7) / 8);
            CHECK(unpack_indices(packed, bits, count) == indices);
        }
    }
}

TEST_CASE("compressed serialization round-trips byte for byte") {
    const std::string dir = temp_dir("packfmt");
    const CompressionOutcome outcome = sample_outcome(1);
    serialize_compressed(outcome.compressed, dir + "/a.jlcz");
    const CompressedModel loaded = deserialize_compressed(dir + "/a.jlcz");
    serialize_compressed(loaded, dir + "/b.jlcz");
    CHECK(file_bytes(dir + "/a.jlcz") == file_bytes(dir + "/b.jlcz"));

    REQUIRE(loaded.layers.size() == 2);
    CHECK(loaded.layers[0].codebook_size == 8);
    CHECK(loaded.layers[0].bits_per_index() == 3);
}

TEST_CASE("on-the-fly forward matches the eagerly reconstructed model") {
    const CompressionOutcome outcome = sample_outcome(2);
    const Matf inputs = gaussian_matrix(12, 16, 3);
    const Matf lazy = forward_compressed(outcome.compressed, inputs);
    const Matf eager = forward_all(decompress_model(outcome.compressed), inputs);
    REQUIRE(lazy.size() == eager.size());
    for (std::size_t i = 0; i < lazy.size(); ++i)
        CHECK(std::abs(lazy.data[i] - eager.data[i]) <= 1e-6f);
}

TEST_CASE("footprint of a single small layer matches the formula") {
    CodebookSet cbs;
    cbs.codebooks = {{-1.0, 0.0, 0.5, 1.0}};
    cbs.row_group_boundaries = {0, 4};
    HardMapping map{Matrix<std::int32_t>(4, 4)};
    LinearLayer layer = make_layer(4, 4, std::vector<float>(16, 0.5f));
    CompressedModel model;
    model.layers.push_back(compress_layer(layer, PlanMode::multi_codebook, cbs, map));

    ModelContainer original;
    original.layers.push_back(layer);
    const FootprintReport rep = measure_footprint(model, original);
    CHECK(rep.per_layer[0].weight_bits == 96); // 4 codewords * 16 + 2 * 16
    CHECK(rep.m_w_bits == 96);
    CHECK(rep.m_a_bits == 16 * 8);
    CHECK(rep.m_ref_bits == 16 * 16);
}

TEST_CASE("uncompressed passthrough footprint has alpha near one") {
    ModelContainer model;
    model.layers.push_back(random_layer(32, 32, 4));
    model.layers.push_back(random_layer(32, 32, 5));
    const FootprintReport rep = measure_footprint(model);
    CHECK(rep.alpha_weights == doctest::Approx(1.0));
    CHECK(rep.alpha_achieved == doctest::Approx(1.0).epsilon(0.07)); // activations only
    CHECK(rep.alpha_achieved < 1.0);
}

TEST_CASE("reported weight bits match the serialized payload within padding") {
    const std::string dir = temp_dir("packfmt");
    const CompressionOutcome outcome = sample_outcome(6, 3);
    serialize_compressed(outcome.compressed, dir + "/c.jlcz");
    const std::size_t total = file_bytes(dir + "/c.jlcz").size();
    const std::size_t layers = outcome.compressed.layers.size();
    const std::size_t header_bytes = 9 + 23 * layers;
    const std::uint64_t payload_bits = 8ull * (total - header_bytes);
    CHECK(payload_bits >= outcome.footprint.m_w_bits);
    CHECK(payload_bits - outcome.footprint.m_w_bits <= 8ull * layers);

    // file size stays under the payload-plus-headers budget
    CHECK(total <= (outcome.footprint.m_w_bits + 7) / 8 + 64 + 16 * layers);
}

TEST_CASE("achieved weight ratio lands within 0.1 of the target on 2^14 layers") {
    for (double alpha : {3.9, 7.5}) {
        for (ModeChoice mode : {ModeChoice::multi_codebook, ModeChoice::multi_scale}) {
            ModelContainer model;
            model.layers.push_back(random_layer(128, 128, 7));
            RunConfig cfg;
            cfg.alpha = alpha;
            cfg.mode = mode;
            cfg.optimize = false;
            const CompressionOutcome outcome = compress_model(model, nullptr, cfg);
            CAPTURE(alpha);
            CAPTURE(mode_choice_name(mode));
            CHECK(std::abs(outcome.footprint.alpha_weights - alpha) <= 0.1);
        }
    }
}

TEST_CASE("weight bits dominate on wide stacks") {
    ModelContainer model;
    for (int l = 0; l < 4; ++l)
        model.layers.push_back(random_layer(512, 512, 100 + l, Activation::relu, 0.1));
    RunConfig cfg;
    cfg.alpha = 3.9;
    cfg.optimize = false;
    cfg.method = clustering::Method::kmeans;
    const CompressionOutcome outcome = compress_model(model, nullptr, cfg);
    const double ratio = double(outcome.footprint.m_w_bits) /
                         double(outcome.footprint.m_w_bits + outcome.footprint.m_a_bits);
    CHECK(ratio > 0.94);
}

TEST_CASE("deserialize rejects corrupted streams") {
    const std::string dir = temp_dir("packfmt");
    const CompressionOutcome outcome = sample_outcome(8);
    serialize_compressed(outcome.compressed, dir + "/ok.jlcz");
    std::vector<std::uint8_t> bytes = file_bytes(dir + "/ok.jlcz");

    SUBCASE("bad magic") {
        bytes[0] = 'x';
        write_bytes(dir + "/bad.jlcz", bytes);
        try {
            deserialize_compressed(dir + "/bad.jlcz");
            FAIL("expected bad magic");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::bad_magic);
        }
    }
    SUBCASE("bad version") {
        bytes[4] = 7;
        write_bytes(dir + "/bad.jlcz", bytes);
        try {
            deserialize_compressed(dir + "/bad.jlcz");
            FAIL("expected bad version");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::bad_version);
        }
    }
    SUBCASE("truncated") {
        bytes.resize(bytes.size() - 3);
        write_bytes(dir + "/bad.jlcz", bytes);
        try {
            deserialize_compressed(dir + "/bad.jlcz");
            FAIL("expected truncation error");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::truncated);
        }
    }
    SUBCASE("trailing bytes") {
        bytes.push_back(0);
        write_bytes(dir + "/bad.jlcz", bytes);
        try {
            deserialize_compressed(dir + "/bad.jlcz");
            FAIL("expected trailing bytes error");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoError::Kind::corrupt_payload);
        }
    }
}

TEST_CASE("nonzero padding bits are rejected") {
    // one 1x3 layer at 3 bits/index: 9 bits used, 7 pad bits in byte 2
    CodebookSet cbs;
    cbs.codebooks = {{-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5}};
    cbs.row_group_boundaries = {0, 1};
    HardMapping map{Matrix<std::int32_t>(1, 3)};
    map.indices.data = {7, 7, 7};
    LinearLayer layer = make_layer(1, 3, {1.5f, 1.5f, 1.5f});
    CompressedModel model;
    model.layers.push_back(compress_layer(layer, PlanMode::multi_codebook, cbs, map));

    const std::string dir = temp_dir("packfmt");
    serialize_compressed(model, dir + "/pad.jlcz");
    std::vector<std::uint8_t> bytes = file_bytes(dir + "/pad.jlcz");
    bytes.back() |= 0x80; // flip a pad bit
    write_bytes(dir + "/pad_bad.jlcz", bytes);
    try {
        deserialize_compressed(dir + "/pad_bad.jlcz");
        FAIL("expected padding error");
    } catch (const IoError& e) {
        CHECK(e.kind() == IoError::Kind::corrupt_payload);
    }
}
