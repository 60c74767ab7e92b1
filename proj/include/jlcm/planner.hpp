#pragma once

#include <cstdint>
#include <string>

namespace jlcm {

enum class PlanMode : std::uint8_t { multi_scale = 0, multi_codebook = 1 };

PlanMode plan_mode_from_name(const std::string& name);
const char* plan_mode_name(PlanMode mode);

// Per-layer structure derived from the single compression target alpha:
// codebook size, index width, and the group counts for both modes.
struct CompressionPlan {
    double alpha = 0.0;
    PlanMode mode = PlanMode::multi_codebook;
    std::size_t codebook_size = 0;   // always a power of two
    std::size_t num_codebooks = 1;   // active in multi_codebook mode
    std::size_t num_scales = 1;      // active in multi_scale mode
    std::size_t bits_per_index = 0;  // log2(codebook_size)
};

// codebook_size = 2^floor(16/alpha); the remaining bit budget
// slack = (16/alpha - bits) * n_o * n_i pays for extra codebooks
// (slack / (16 * codebook_size)) or extra scales (slack / 16), each
// clamped to [1, n_o]. Throws std::invalid_argument unless 1 < alpha <= 16.
CompressionPlan derive_plan(std::size_t n_o, std::size_t n_i, double alpha, PlanMode mode);

// Weight-storage cost of the plan in bits:
//   multi_scale:    (codebook_size + num_scales) * 16 + bits * n_o * n_i
//   multi_codebook: num_codebooks * codebook_size * 16 + bits * n_o * n_i
std::uint64_t predicted_footprint_bits(const CompressionPlan& plan, std::size_t n_o,
                                       std::size_t n_i);

} // namespace jlcm
