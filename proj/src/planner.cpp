#include "jlcm/planner.hpp"

#include <cmath>
#include <stdexcept>

namespace jlcm {

PlanMode plan_mode_from_name(const std::string& name) {
    if (name == "multi-scale") return PlanMode::multi_scale;
    if (name == "multi-codebook") return PlanMode::multi_codebook;
    throw std::invalid_argument("unknown mode: " + name);
}

const char* plan_mode_name(PlanMode mode) {
    return mode == PlanMode::multi_scale ? "multi-scale" : "multi-codebook";
}

CompressionPlan derive_plan(std::size_t n_o, std::size_t n_i, double alpha, PlanMode mode) {
    if (!(alpha > 1.0) || alpha > 16.0)
        throw std::invalid_argument("alpha must exceed 1 and not exceed 16");
    if (n_o == 0 || n_i == 0) throw std::invalid_argument("empty layer shape");

    CompressionPlan plan;
    plan.alpha = alpha;
    plan.mode = mode;
    plan.bits_per_index = std::size_t(std::floor(16.0 / alpha));
    plan.codebook_size = std::size_t(1) << plan.bits_per_index;

    const double num_weights = double(n_o) * double(n_i);
    const double slack_bits = (16.0 / alpha - double(plan.bits_per_index)) * num_weights;
    auto clamp_to_rows = [&](double raw) {
        if (raw < 1.0) return std::size_t(1);
        if (raw >= double(n_o)) return n_o;
        return std::size_t(raw);
    };
    plan.num_scales = clamp_to_rows(std::floor(slack_bits / 16.0));
    plan.num_codebooks = clamp_to_rows(std::floor(slack_bits / (16.0 * double(plan.codebook_size))));
    return plan;
}

std::uint64_t predicted_footprint_bits(const CompressionPlan& plan, std::size_t n_o,
                                       std::size_t n_i) {
    const std::uint64_t index_bits = std::uint64_t(plan.bits_per_index) * n_o * n_i;
    if (plan.mode == PlanMode::multi_scale)
        return (std::uint64_t(plan.codebook_size) + plan.num_scales) * 16 + index_bits;
    return std::uint64_t(plan.num_codebooks) * plan.codebook_size * 16 + index_bits;
}

} // namespace jlcm
