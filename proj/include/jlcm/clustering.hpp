#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jlcm/matrix.hpp"

namespace jlcm::clustering {

enum class Method : std::uint8_t { random, kmeans, bisecting_kmeans, graph_spectral, hierarchical };

Method method_from_name(const std::string& name);
const char* method_name(Method m);

struct ClusterResult {
    std::vector<int> labels;                     // one id in [0, k) per sample
    std::vector<std::vector<double>> centroids;  // k x d
    double inertia = 0.0;                        // sum of squared distances to assigned centroid

    std::size_t num_clusters() const { return centroids.size(); }
};

// Lloyd iterations from k-means++ seeding; deterministic given seed.
// Scalar inputs (d == 1) of moderate size take an exact sorted
// dynamic-programming path instead. Empty clusters are re-seeded at the
// current farthest sample. Throws std::invalid_argument when k > N.
ClusterResult kmeans(const Matd& samples, std::size_t k, std::uint64_t seed,
                     std::size_t max_iter = 100, double tol = 1e-10);

// Repeatedly 2-means-splits the cluster with the largest inertia until k
// clusters exist.
ClusterResult bisecting_kmeans(const Matd& samples, std::size_t k, std::uint64_t seed);

// Agglomerative with Ward linkage, merged down to k clusters. Seed-free;
// ties broken by lowest pair index.
ClusterResult hierarchical(const Matd& samples, std::size_t k);

// Symmetric kNN similarity graph (Gaussian kernel, bandwidth = median
// pairwise distance, kNN = min(10, N-1)), then recursive normalized-cut
// bisection via power iteration on the normalized Laplacian. Disconnected
// components become clusters first.
ClusterResult graph_spectral(const Matd& samples, std::size_t k, std::uint64_t seed);

// Uniform random labels given seed; empty clusters are repaired
// deterministically so every id is used when N >= k.
ClusterResult random_clustering(const Matd& samples, std::size_t k, std::uint64_t seed);

ClusterResult run(Method method, const Matd& samples, std::size_t k, std::uint64_t seed);

// The graph used by graph_spectral, exposed for inspection: N x N
// symmetric adjacency with zero diagonal.
Matd similarity_graph(const Matd& samples);

// Ncut objective of a bipartition (side[i] in {0, 1}) of an adjacency
// matrix; +inf when either side has zero association.
double normalized_cut(const Matd& adjacency, const std::vector<char>& side);

} // namespace jlcm::clustering
