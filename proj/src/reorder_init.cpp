#include "jlcm/reorder_init.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "jlcm/rng.hpp"

namespace jlcm {

std::size_t CodebookSet::group_of_row(std::size_t row) const {
    const auto& b = row_group_boundaries;
    auto it = std::upper_bound(b.begin(), b.end(), row);
    return std::size_t(it - b.begin()) - 1;
}

std::vector<std::size_t> group_boundaries(std::size_t n_o, std::size_t groups) {
    std::vector<std::size_t> bounds(groups + 1);
    for (std::size_t g = 0; g <= groups; ++g) bounds[g] = g * n_o / groups;
    return bounds;
}

std::size_t nearest_codeword(const std::vector<double>& codebook, double value) {
    auto it = std::lower_bound(codebook.begin(), codebook.end(), value);
    if (it == codebook.begin()) return 0;
    if (it == codebook.end()) return codebook.size() - 1;
    const std::size_t hi = std::size_t(it - codebook.begin());
    const std::size_t lo = hi - 1;
    // equidistant -> lower index
    return (value - codebook[lo] <= codebook[hi] - value) ? lo : hi;
}

ReorderResult reorder(const Matf& weights, std::size_t k, clustering::Method method,
                      std::uint64_t seed) {
    const std::size_t n_o = weights.rows;
    if (k > n_o) throw std::invalid_argument("more row groups than rows");

    const clustering::ClusterResult rows = clustering::run(method, widen(weights), k, seed);

    // order cluster blocks by ascending centroid mean, ties by the lowest
    // original row index they contain
    std::vector<double> centroid_mean(k, 0.0);
    std::vector<std::size_t> lowest_row(k, n_o);
    for (std::size_t c = 0; c < k; ++c)
        for (double v : rows.centroids[c]) centroid_mean[c] += v / double(weights.cols);
    for (std::size_t r = 0; r < n_o; ++r)
        lowest_row[rows.labels[r]] = std::min(lowest_row[rows.labels[r]], r);

    std::vector<std::size_t> block_order(k);
    std::iota(block_order.begin(), block_order.end(), 0);
    std::sort(block_order.begin(), block_order.end(), [&](std::size_t a, std::size_t b) {
        if (centroid_mean[a] != centroid_mean[b]) return centroid_mean[a] < centroid_mean[b];
        return lowest_row[a] < lowest_row[b];
    });

    ReorderResult result;
    result.sigma.assign(n_o, 0);
    result.group_of_row.assign(n_o, 0);
    std::size_t pos = 0;
    for (std::size_t rank = 0; rank < k; ++rank) {
        const int cluster = int(block_order[rank]);
        for (std::size_t r = 0; r < n_o; ++r) {
            if (rows.labels[r] != cluster) continue;
            result.sigma[r] = pos;
            result.group_of_row[pos] = int(rank);
            pos++;
        }
    }
    return result;
}

namespace {

// Sorted, deduplicated codewords padded back to `size` by repeating the
// largest value; tail duplicates are unreachable under the lower-index
// tie-break.
std::vector<double> canonical_codebook(const std::vector<std::vector<double>>& centroids,
                                       std::size_t size) {
    std::vector<double> values;
    values.reserve(centroids.size());
    for (const auto& c : centroids) values.push_back(c[0]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    while (values.size() < size) values.push_back(values.back());
    return values;
}

std::size_t count_distinct(const std::vector<double>& values) {
    std::set<double> s(values.begin(), values.end());
    return s.size();
}

clustering::ClusterResult cluster_scalars(const std::vector<double>& values, std::size_t want,
                                          clustering::Method method, std::uint64_t seed) {
    Matd samples(values.size(), 1);
    samples.data = values;
    const std::size_t k = std::min({want, count_distinct(values), values.size()});
    return clustering::run(method, samples, k, seed);
}

} // namespace

std::pair<CodebookSet, HardMapping> init_multi_codebook(const Matf& weights,
                                                        const CompressionPlan& plan,
                                                        clustering::Method method,
                                                        std::uint64_t seed) {
    if (plan.mode != PlanMode::multi_codebook)
        throw std::invalid_argument("plan mode is not multi-codebook");
    const std::size_t n_o = weights.rows, n_i = weights.cols;
    const std::size_t k = plan.num_codebooks;

    CodebookSet cbs;
    cbs.row_group_boundaries = group_boundaries(n_o, k);
    HardMapping mapping{Matrix<std::int32_t>(n_o, n_i)};

    for (std::size_t g = 0; g < k; ++g) {
        const std::size_t row_begin = cbs.row_group_boundaries[g];
        const std::size_t row_end = cbs.row_group_boundaries[g + 1];
        std::vector<double> values;
        values.reserve((row_end - row_begin) * n_i);
        for (std::size_t r = row_begin; r < row_end; ++r)
            for (std::size_t c = 0; c < n_i; ++c) values.push_back(double(weights(r, c)));

        const auto clustered = cluster_scalars(values, plan.codebook_size, method, mix_seed(seed, g));
        cbs.codebooks.push_back(canonical_codebook(clustered.centroids, plan.codebook_size));

        const auto& codebook = cbs.codebooks.back();
        for (std::size_t r = row_begin; r < row_end; ++r)
            for (std::size_t c = 0; c < n_i; ++c)
                mapping.indices(r, c) = std::int32_t(nearest_codeword(codebook, double(weights(r, c))));
    }
    return {std::move(cbs), std::move(mapping)};
}

std::pair<CodebookSet, HardMapping> init_multi_scale(const Matf& weights,
                                                     const CompressionPlan& plan,
                                                     clustering::Method method, std::uint64_t seed,
                                                     ScaleEstimator estimator) {
    if (plan.mode != PlanMode::multi_scale)
        throw std::invalid_argument("plan mode is not multi-scale");
    const std::size_t n_o = weights.rows, n_i = weights.cols;
    const std::size_t groups = plan.num_scales;

    CodebookSet cbs;
    cbs.row_group_boundaries = group_boundaries(n_o, groups);
    cbs.scales.resize(groups);

    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t row_begin = cbs.row_group_boundaries[g];
        const std::size_t row_end = cbs.row_group_boundaries[g + 1];
        const std::size_t count = (row_end - row_begin) * n_i;
        double scale = 0.0;
        if (estimator == ScaleEstimator::stddev) {
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t r = row_begin; r < row_end; ++r)
                for (std::size_t c = 0; c < n_i; ++c) sum += double(weights(r, c));
            const double mean = sum / double(count);
            for (std::size_t r = row_begin; r < row_end; ++r)
                for (std::size_t c = 0; c < n_i; ++c) {
                    const double d = double(weights(r, c)) - mean;
                    sumsq += d * d;
                }
            scale = std::sqrt(sumsq / double(count));
        } else {
            for (std::size_t r = row_begin; r < row_end; ++r)
                for (std::size_t c = 0; c < n_i; ++c)
                    scale = std::max(scale, std::abs(double(weights(r, c))));
        }
        cbs.scales[g] = std::max(scale, 1e-12);
    }

    std::vector<double> normalized(n_o * n_i);
    for (std::size_t r = 0; r < n_o; ++r) {
        const double s = cbs.scales[cbs.group_of_row(r)];
        for (std::size_t c = 0; c < n_i; ++c) normalized[r * n_i + c] = double(weights(r, c)) / s;
    }

    const auto clustered = cluster_scalars(normalized, plan.codebook_size, method, mix_seed(seed, 0));
    cbs.codebooks.push_back(canonical_codebook(clustered.centroids, plan.codebook_size));

    HardMapping mapping{Matrix<std::int32_t>(n_o, n_i)};
    const auto& codebook = cbs.codebooks[0];
    for (std::size_t r = 0; r < n_o; ++r)
        for (std::size_t c = 0; c < n_i; ++c)
            mapping.indices(r, c) = std::int32_t(nearest_codeword(codebook, normalized[r * n_i + c]));
    return {std::move(cbs), std::move(mapping)};
}

std::pair<CodebookSet, HardMapping> initialize(const Matf& weights, const CompressionPlan& plan,
                                               clustering::Method method, std::uint64_t seed,
                                               ScaleEstimator estimator) {
    if (plan.mode == PlanMode::multi_codebook)
        return init_multi_codebook(weights, plan, method, seed);
    return init_multi_scale(weights, plan, method, seed, estimator);
}

Matd reconstruct(const CodebookSet& cbs, const HardMapping& mapping) {
    const std::size_t n_o = mapping.indices.rows, n_i = mapping.indices.cols;
    Matd out(n_o, n_i);
    for (std::size_t r = 0; r < n_o; ++r) {
        const auto& codebook = cbs.codebooks[cbs.codebook_index_of_row(r)];
        const double s = cbs.scale_of_row(r);
        for (std::size_t c = 0; c < n_i; ++c)
            out(r, c) = s * codebook[std::size_t(mapping.indices(r, c))];
    }
    return out;
}

} // namespace jlcm
