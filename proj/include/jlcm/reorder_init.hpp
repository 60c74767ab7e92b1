#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "jlcm/clustering.hpp"
#include "jlcm/matrix.hpp"
#include "jlcm/planner.hpp"

namespace jlcm {

// Row permutation placing same-cluster neurons contiguously.
// sigma maps old row index -> new position; group_of_row is indexed by the
// new position and is non-decreasing.
struct ReorderResult {
    std::vector<std::size_t> sigma;
    std::vector<int> group_of_row;
};

// Learnable codebook structure of one layer. Multi-codebook layers hold
// one codebook per contiguous row group and no scales; multi-scale layers
// hold a single shared codebook plus one positive scale per row group.
struct CodebookSet {
    std::vector<std::vector<double>> codebooks;
    std::vector<double> scales;
    std::vector<std::size_t> row_group_boundaries; // group count + 1 offsets

    bool multi_scale() const { return !scales.empty(); }
    std::size_t num_groups() const { return row_group_boundaries.size() - 1; }
    std::size_t group_of_row(std::size_t row) const;
    std::size_t codebook_index_of_row(std::size_t row) const {
        return multi_scale() ? 0 : group_of_row(row);
    }
    double scale_of_row(std::size_t row) const {
        return multi_scale() ? scales[group_of_row(row)] : 1.0;
    }
};

// Hard per-weight codeword choice; every index is valid for the codebook
// owned by its row's group.
struct HardMapping {
    Matrix<std::int32_t> indices; // n_o x n_i
};

enum class ScaleEstimator : std::uint8_t { stddev, max_abs };

// Equal row blocks floor(g * n_o / groups); implements the row-derived
// codebook index of the compressed encoding.
std::vector<std::size_t> group_boundaries(std::size_t n_o, std::size_t groups);

// Clusters the rows of W into k groups and emits the permutation making
// them contiguous; blocks ordered by ascending centroid mean, ties by
// lowest original row index.
ReorderResult reorder(const Matf& weights, std::size_t k, clustering::Method method,
                      std::uint64_t seed);

// Scalar-clusters each of the plan's k row groups into codebook_size
// codewords; indices point at the nearest codeword (ties -> lower index).
std::pair<CodebookSet, HardMapping> init_multi_codebook(const Matf& weights,
                                                        const CompressionPlan& plan,
                                                        clustering::Method method,
                                                        std::uint64_t seed);

// One shared codebook over all weights normalized by per-group scales
// (group standard deviation by default, floored at 1e-12).
std::pair<CodebookSet, HardMapping> init_multi_scale(const Matf& weights,
                                                     const CompressionPlan& plan,
                                                     clustering::Method method,
                                                     std::uint64_t seed,
                                                     ScaleEstimator estimator = ScaleEstimator::stddev);

std::pair<CodebookSet, HardMapping> initialize(const Matf& weights, const CompressionPlan& plan,
                                               clustering::Method method, std::uint64_t seed,
                                               ScaleEstimator estimator = ScaleEstimator::stddev);

// W[i, j] = scale(i) * codebook(i)[indices(i, j)].
Matd reconstruct(const CodebookSet& cbs, const HardMapping& mapping);

// Nearest codeword in an ascending codebook, lower index on ties.
std::size_t nearest_codeword(const std::vector<double>& codebook, double value);

} // namespace jlcm
