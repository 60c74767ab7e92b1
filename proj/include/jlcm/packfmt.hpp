#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jlcm/matrix.hpp"
#include "jlcm/model.hpp"
#include "jlcm/planner.hpp"
#include "jlcm/reorder_init.hpp"

namespace jlcm {

// Packs indices at `bits` per entry (1..8), little-endian bit order within
// bytes: the first index occupies the lowest-order bits of byte 0. Trailing
// pad bits are zero.
std::vector<std::uint8_t> pack_indices(const std::vector<std::int32_t>& indices, unsigned bits);

// Exact inverse of pack_indices. Throws IoError when the byte buffer is too
// short for `count` entries.
std::vector<std::int32_t> unpack_indices(const std::vector<std::uint8_t>& bytes, unsigned bits,
                                         std::size_t count);

// Finalized layer: f16 codebooks, bit-packed hard indices, optional f16
// scales and bias. Group boundaries are derived from the row index, never
// stored.
struct CompressedLayer {
    PlanMode mode = PlanMode::multi_codebook;
    std::uint32_t n_o = 0;
    std::uint32_t n_i = 0;
    Activation activation = Activation::identity;
    bool has_bias = false;
    std::uint16_t codebook_size = 0;
    std::uint16_t num_codebooks = 1; // 1 in multi-scale mode
    std::uint32_t num_scales = 0;    // 0 in multi-codebook mode
    std::vector<std::uint16_t> codewords; // num_codebooks * codebook_size, f16 bits
    std::vector<std::uint16_t> scales;    // f16 bits
    std::vector<std::uint16_t> bias;      // f16 bits, n_o entries when present
    std::vector<std::uint8_t> packed_indices;

    unsigned bits_per_index() const;
    std::size_t num_groups() const {
        return mode == PlanMode::multi_codebook ? num_codebooks : num_scales;
    }
};

struct CompressedModel {
    std::vector<CompressedLayer> layers;
};

CompressedLayer compress_layer(const LinearLayer& layer, PlanMode mode,
                               const CodebookSet& finalized, const HardMapping& mapping);

// f32 weights from the f16 codebooks and packed indices.
Matf reconstruct_layer_weights(const CompressedLayer& layer);

// Widens every layer into a plain container (reconstruct + f16 bias).
ModelContainer decompress_model(const CompressedModel& model);

// Forward pass that reconstructs each layer on the fly instead of
// materializing the whole container.
Matf forward_compressed(const CompressedModel& model, const Matf& inputs);

struct LayerFootprint {
    std::size_t layer = 0;
    std::uint64_t weight_bits = 0; // codeword + scale + index + bias bits
    std::uint64_t codeword_bits = 0;
    std::uint64_t scale_bits = 0;
    std::uint64_t index_bits = 0;
    std::uint64_t bias_bits = 0;
};

// Footprint accounting at 16-bit parameter storage. alpha_achieved compares
// the f16 reference against the full runtime footprint (weights plus peak
// activations); alpha_weights is the weights-only ratio the planner budgets
// against.
struct FootprintReport {
    std::uint64_t m_w_bits = 0;
    std::uint64_t m_a_bits = 0;
    std::uint64_t m_ref_bits = 0;
    std::uint64_t m_total_bits = 0;
    double alpha_achieved = 0.0;
    double alpha_weights = 0.0;
    std::vector<LayerFootprint> per_layer;
};

FootprintReport measure_footprint(const CompressedModel& model, const ModelContainer& original);

// Footprint of an uncompressed container stored at f16 (the passthrough
// baseline; alpha_achieved is just under 1 because activations count).
FootprintReport measure_footprint(const ModelContainer& original);

// JLCZ v1, little-endian: magic "JLCZ", u8 version = 1, u32 L; per layer:
// u8 mode (0 = multi-scale, 1 = multi-codebook), u32 n_o, u32 n_i,
// u8 activation, u8 has_bias, u16 codebook_size, u16 k, u32 num_scales,
// k * codebook_size f16 codewords, num_scales f16 scales, n_o f16 bias when
// present, u32 bitstream byte length, bitstream.
void serialize_compressed(const CompressedModel& model, const std::string& path);
CompressedModel deserialize_compressed(const std::string& path);

} // namespace jlcm
