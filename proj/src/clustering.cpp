#include "jlcm/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "jlcm/rng.hpp"

namespace jlcm::clustering {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sq_dist(const Matd& samples, std::size_t i, const std::vector<double>& c) {
    const double* x = &samples.data[i * samples.cols];
    double acc = 0.0;
    for (std::size_t j = 0; j < samples.cols; ++j) {
        const double diff = x[j] - c[j];
        acc += diff * diff;
    }
    return acc;
}

double sq_dist_rows(const Matd& samples, std::size_t i, std::size_t j) {
    const double* a = &samples.data[i * samples.cols];
    const double* b = &samples.data[j * samples.cols];
    double acc = 0.0;
    for (std::size_t d = 0; d < samples.cols; ++d) {
        const double diff = a[d] - b[d];
        acc += diff * diff;
    }
    return acc;
}

// Recomputes centroids as label means and the inertia against them, so the
// reported result is always self-consistent.
ClusterResult finalize(const Matd& samples, std::vector<int> labels, std::size_t k) {
    ClusterResult result;
    result.centroids.assign(k, std::vector<double>(samples.cols, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < samples.rows; ++i) {
        const int c = labels[i];
        counts[c]++;
        for (std::size_t j = 0; j < samples.cols; ++j)
            result.centroids[c][j] += samples(i, j);
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0)
            for (double& v : result.centroids[c]) v /= double(counts[c]);
    result.inertia = 0.0;
    for (std::size_t i = 0; i < samples.rows; ++i)
        result.inertia += sq_dist(samples, i, result.centroids[labels[i]]);
    result.labels = std::move(labels);
    return result;
}

void check_args(const Matd& samples, std::size_t k) {
    if (samples.rows == 0 || samples.cols == 0)
        throw std::invalid_argument("clustering requires a non-empty sample matrix");
    if (k == 0) throw std::invalid_argument("k must be at least 1");
    if (k > samples.rows) throw std::invalid_argument("k exceeds the number of samples");
}

// ---- exact 1-d k-means ------------------------------------------------

// Contiguous-partition DP over sorted scalars; optimal 1-d clusters are
// intervals of the sorted order. The segment-cost matrix is Monge, so the
// optimal split points are monotone and each DP row fills in O(N log N)
// by divide and conquer.
struct Dp1d {
    const std::vector<double>& s1;
    const std::vector<double>& s2;
    const std::vector<double>& prev; // dp row for m-1 segments
    std::vector<double>& cur;
    std::vector<std::size_t>& parent;
    std::size_t min_split;

    double segment_cost(std::size_t a, std::size_t b) const {
        const double cnt = double(b - a);
        const double sum = s1[b] - s1[a];
        const double cost = (s2[b] - s2[a]) - sum * sum / cnt;
        return cost > 0.0 ? cost : 0.0;
    }

    void fill(std::size_t lo, std::size_t hi, std::size_t opt_lo, std::size_t opt_hi) {
        if (lo > hi) return;
        const std::size_t mid = lo + (hi - lo) / 2;
        double best = kInf;
        std::size_t best_i = opt_lo;
        const std::size_t i_end = std::min(opt_hi, mid - 1);
        for (std::size_t i = std::max(opt_lo, min_split); i <= i_end; ++i) {
            if (prev[i] == kInf) continue;
            const double cost = prev[i] + segment_cost(i, mid);
            if (cost < best) {
                best = cost;
                best_i = i;
            }
        }
        cur[mid] = best;
        parent[mid] = best_i;
        if (mid > lo) fill(lo, mid - 1, opt_lo, best_i);
        if (mid < hi) fill(mid + 1, hi, best_i, opt_hi);
    }
};

ClusterResult kmeans_1d_exact(const Matd& samples, std::size_t k) {
    const std::size_t n = samples.rows;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples.data[a] < samples.data[b];
    });

    std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = samples.data[order[i]];
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }

    std::vector<double> prev(n + 1, kInf), cur(n + 1, kInf);
    std::vector<std::vector<std::size_t>> parents(k + 1, std::vector<std::size_t>(n + 1, 0));
    prev[0] = 0.0;
    for (std::size_t m = 1; m <= k; ++m) {
        std::fill(cur.begin(), cur.end(), kInf);
        Dp1d dp{s1, s2, prev, cur, parents[m], m - 1};
        dp.fill(m, n - (k - m), m - 1, n - 1);
        std::swap(prev, cur);
    }

    std::vector<int> labels(n, 0);
    std::size_t j = n;
    for (std::size_t m = k; m >= 1; --m) {
        const std::size_t i = parents[m][j];
        for (std::size_t p = i; p < j; ++p) labels[order[p]] = int(m - 1);
        j = i;
    }
    return finalize(samples, std::move(labels), k);
}

// ---- Lloyd ------------------------------------------------------------

std::vector<std::vector<double>> kmeanspp_seed(const Matd& samples, std::size_t k, Rng& rng) {
    const std::size_t n = samples.rows;
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);

    std::vector<double> row(samples.cols);
    auto sample_row = [&](std::size_t i) {
        for (std::size_t j = 0; j < samples.cols; ++j) row[j] = samples(i, j);
        return row;
    };

    centroids.push_back(sample_row(rng.index(n)));
    std::vector<double> best(n, kInf);
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], sq_dist(samples, i, centroids.back()));
            total += best[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.index(n); // all mass at existing centroids
        } else {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += best[i];
                if (acc > target) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(sample_row(pick));
    }
    return centroids;
}

ClusterResult kmeans_lloyd(const Matd& samples, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter, double tol) {
    const std::size_t n = samples.rows;
    Rng rng(seed);
    std::vector<std::vector<double>> centroids = kmeanspp_seed(samples, k, rng);
    std::vector<int> labels(n, 0);
    double prev_inertia = kInf;

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // assignment (ties -> lowest centroid index)
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = kInf;
            int best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(samples, i, centroids[c]);
                if (d < best) {
                    best = d;
                    best_c = int(c);
                }
            }
            labels[i] = best_c;
            inertia += best;
        }
        if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12)
            throw std::logic_error("k-means inertia increased between iterations");
        const bool converged = prev_inertia != kInf && prev_inertia - inertia <= tol * std::max(1.0, prev_inertia);
        prev_inertia = inertia;

        // update
        std::vector<std::size_t> counts(k, 0);
        for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[labels[i]]++;
            for (std::size_t j = 0; j < samples.cols; ++j) centroids[labels[i]][j] += samples(i, j);
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (double& v : centroids[c]) v /= double(counts[c]);

        // re-seed empty clusters at the farthest sample, lowest index on ties;
        // never drain a singleton donor
        std::vector<char> stolen(n, 0);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            double far_d = -1.0;
            std::size_t far_i = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (stolen[i] || counts[labels[i]] <= 1) continue;
                const double d = sq_dist(samples, i, centroids[labels[i]]);
                if (d > far_d) {
                    far_d = d;
                    far_i = i;
                }
            }
            if (far_i == n) break; // nothing left to steal; N < k cannot happen here
            for (std::size_t j = 0; j < samples.cols; ++j) centroids[c][j] = samples(far_i, j);
            counts[labels[far_i]]--;
            labels[far_i] = int(c);
            counts[c] = 1;
            stolen[far_i] = 1;
        }
        if (converged) break;
    }
    return finalize(samples, std::move(labels), k);
}

// ---- hierarchical (Ward) ----------------------------------------------

double ward_cost(std::size_t n1, double mean_diff_sq, std::size_t n2) {
    return double(n1) * double(n2) / double(n1 + n2) * mean_diff_sq;
}

// 1-d specialisation: Ward merges over sorted scalars only ever join
// adjacent clusters, so a linked list plus a lazy heap suffices.
ClusterResult hierarchical_1d(const Matd& samples, std::size_t k) {
    const std::size_t n = samples.rows;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples.data[a] < samples.data[b];
    });

    std::vector<double> sum(n);
    std::vector<std::size_t> cnt(n, 1);
    std::vector<std::size_t> prev(n), next(n), version(n, 0);
    std::vector<char> alive(n, 1);
    for (std::size_t p = 0; p < n; ++p) {
        sum[p] = samples.data[order[p]];
        prev[p] = p == 0 ? n : p - 1;
        next[p] = p + 1 == n ? n : p + 1;
    }

    struct Edge {
        double cost;
        std::size_t left, right;
        std::size_t vl, vr;
    };
    auto cmp = [](const Edge& a, const Edge& b) {
        if (a.cost != b.cost) return a.cost > b.cost;
        if (a.left != b.left) return a.left > b.left;
        return a.right > b.right;
    };
    std::priority_queue<Edge, std::vector<Edge>, decltype(cmp)> heap(cmp);

    auto push_edge = [&](std::size_t l, std::size_t r) {
        const double ml = sum[l] / double(cnt[l]);
        const double mr = sum[r] / double(cnt[r]);
        const double diff = mr - ml;
        heap.push({ward_cost(cnt[l], diff * diff, cnt[r]), l, r, version[l], version[r]});
    };
    for (std::size_t p = 0; p + 1 < n; ++p) push_edge(p, p + 1);

    std::size_t clusters = n;
    while (clusters > k) {
        const Edge e = heap.top();
        heap.pop();
        if (!alive[e.left] || !alive[e.right]) continue;
        if (version[e.left] != e.vl || version[e.right] != e.vr) continue;
        // merge right into left
        sum[e.left] += sum[e.right];
        cnt[e.left] += cnt[e.right];
        alive[e.right] = 0;
        version[e.left]++;
        next[e.left] = next[e.right];
        if (next[e.right] != n) prev[next[e.right]] = e.left;
        if (prev[e.left] != n) push_edge(prev[e.left], e.left);
        if (next[e.left] != n) push_edge(e.left, next[e.left]);
        clusters--;
    }

    std::vector<int> labels(n, 0);
    int id = 0;
    for (std::size_t p = 0; p != n;) {
        std::size_t q = p;
        std::size_t covered = 0;
        // members of cluster at head position p are the next cnt[p] sorted points
        while (covered < cnt[p]) {
            labels[order[q]] = id;
            ++covered;
            ++q;
        }
        id++;
        p = next[p];
        if (p == n) break;
    }
    return finalize(samples, std::move(labels), k);
}

ClusterResult hierarchical_general(const Matd& samples, std::size_t k) {
    const std::size_t n = samples.rows;
    struct Cluster {
        std::vector<double> mean;
        std::size_t count = 0;
        std::size_t rep = 0; // lowest original sample index
        bool alive = true;
    };
    std::vector<Cluster> cl(n);
    for (std::size_t i = 0; i < n; ++i) {
        cl[i].mean.assign(samples.cols, 0.0);
        for (std::size_t j = 0; j < samples.cols; ++j) cl[i].mean[j] = samples(i, j);
        cl[i].count = 1;
        cl[i].rep = i;
    }
    std::vector<int> member(n);
    std::iota(member.begin(), member.end(), 0);

    // Ward merge costs, Lance-Williams updated after each merge.
    Matd cost(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            cost(i, j) = 0.5 * sq_dist_rows(samples, i, j);

    std::size_t alive = n;
    while (alive > k) {
        double best = kInf;
        std::size_t bi = 0, bj = 0;
        std::size_t best_lo = 0, best_hi = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!cl[i].alive) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!cl[j].alive) continue;
                const double c = cost(i, j);
                const std::size_t lo = std::min(cl[i].rep, cl[j].rep);
                const std::size_t hi = std::max(cl[i].rep, cl[j].rep);
                if (c < best || (c == best && (lo < best_lo || (lo == best_lo && hi < best_hi)))) {
                    best = c;
                    bi = i;
                    bj = j;
                    best_lo = lo;
                    best_hi = hi;
                }
            }
        }

        const double na = double(cl[bi].count), nb = double(cl[bj].count);
        for (std::size_t c = 0; c < n; ++c) {
            if (!cl[c].alive || c == bi || c == bj) continue;
            const double nc = double(cl[c].count);
            const double dac = cost(std::min(bi, c), std::max(bi, c));
            const double dbc = cost(std::min(bj, c), std::max(bj, c));
            const double merged = ((na + nc) * dac + (nb + nc) * dbc - nc * best) / (na + nb + nc);
            cost(std::min(bi, c), std::max(bi, c)) = merged;
        }
        for (std::size_t j = 0; j < samples.cols; ++j)
            cl[bi].mean[j] = (cl[bi].mean[j] * na + cl[bj].mean[j] * nb) / (na + nb);
        cl[bi].count += cl[bj].count;
        cl[bi].rep = std::min(cl[bi].rep, cl[bj].rep);
        cl[bj].alive = false;
        for (std::size_t i = 0; i < n; ++i)
            if (member[i] == int(bj)) member[i] = int(bi);
        alive--;
    }

    // order surviving clusters by lowest original index
    std::vector<std::size_t> survivors;
    for (std::size_t i = 0; i < n; ++i)
        if (cl[i].alive) survivors.push_back(i);
    std::sort(survivors.begin(), survivors.end(),
              [&](std::size_t a, std::size_t b) { return cl[a].rep < cl[b].rep; });
    std::vector<int> remap(n, -1);
    for (std::size_t r = 0; r < survivors.size(); ++r) remap[survivors[r]] = int(r);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = remap[member[i]];
    return finalize(samples, std::move(labels), k);
}

// ---- spectral ---------------------------------------------------------

// kNN similarity graph held as symmetric adjacency lists; dense storage is
// only materialized by the similarity_graph helper.
struct SparseGraph {
    std::vector<std::vector<std::pair<std::size_t, double>>> adj;

    std::size_t size() const { return adj.size(); }
};

std::vector<double> pairwise_distance_sample(const Matd& samples) {
    const std::size_t n = samples.rows;
    const std::size_t cap = 2048; // median over a stride sample beyond this
    std::vector<std::size_t> idx;
    if (n <= cap) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0);
    } else {
        const std::size_t stride = (n + cap - 1) / cap;
        for (std::size_t i = 0; i < n; i += stride) idx.push_back(i);
    }
    std::vector<double> dists;
    dists.reserve(idx.size() * (idx.size() - 1) / 2);
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b)
            dists.push_back(std::sqrt(sq_dist_rows(samples, idx[a], idx[b])));
    return dists;
}

SparseGraph build_knn_graph(const Matd& samples) {
    const std::size_t n = samples.rows;
    SparseGraph graph;
    graph.adj.resize(n);
    if (n == 1) return graph;

    const std::size_t knn = std::min<std::size_t>(10, n - 1);
    std::vector<double> dists = pairwise_distance_sample(samples);
    std::nth_element(dists.begin(), dists.begin() + std::ptrdiff_t(dists.size() / 2), dists.end());
    const double bandwidth = dists[dists.size() / 2];

    if (bandwidth <= 0.0) {
        // the sampled points coincide; fall back to a unit path graph
        for (std::size_t i = 0; i + 1 < n; ++i) {
            graph.adj[i].emplace_back(i + 1, 1.0);
            graph.adj[i + 1].emplace_back(i, 1.0);
        }
        return graph;
    }

    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    auto connect = [&](std::size_t i, const std::vector<std::pair<double, std::size_t>>& cand) {
        for (std::size_t t = 0; t < knn && t < cand.size(); ++t) {
            const std::size_t j = cand[t].second;
            const double w = std::exp(-cand[t].first * inv_two_h2);
            graph.adj[i].emplace_back(j, w);
            graph.adj[j].emplace_back(i, w);
        }
    };

    if (samples.cols == 1) {
        // in 1-d the k nearest live among the k sorted neighbors per side
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return samples.data[a] < samples.data[b];
        });
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t p = 0; p < n; ++p) {
            cand.clear();
            const std::size_t lo = p > knn ? p - knn : 0;
            const std::size_t hi = std::min(n - 1, p + knn);
            for (std::size_t q = lo; q <= hi; ++q) {
                if (q == p) continue;
                const double diff = samples.data[order[p]] - samples.data[order[q]];
                cand.emplace_back(diff * diff, order[q]);
            }
            std::sort(cand.begin(), cand.end());
            connect(order[p], cand);
        }
    } else {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t i = 0; i < n; ++i) {
            cand.clear();
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) cand.emplace_back(sq_dist_rows(samples, i, j), j);
            std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(knn), cand.end());
            connect(i, cand);
        }
    }

    // dedupe the symmetrized lists
    for (auto& edges : graph.adj) {
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    }
    return graph;
}

struct SubSplit {
    std::vector<std::size_t> a, b;
};

std::vector<std::vector<std::size_t>> components_of(const SparseGraph& graph,
                                                    const std::vector<std::size_t>& nodes) {
    std::vector<char> in_set(graph.size(), 0), visited(graph.size(), 0);
    for (std::size_t v : nodes) in_set[v] = 1;
    std::vector<std::vector<std::size_t>> comps;
    for (std::size_t s : nodes) {
        if (visited[s]) continue;
        std::vector<std::size_t> comp;
        std::vector<std::size_t> stack{s};
        visited[s] = 1;
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            comp.push_back(u);
            for (const auto& [v, w] : graph.adj[u])
                if (in_set[v] && !visited[v] && w > 0.0) {
                    visited[v] = 1;
                    stack.push_back(v);
                }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
    }
    return comps;
}

// Fiedler-vector bisection of a connected subgraph; the split threshold is
// the prefix of the sorted indicator minimizing the normalized cut.
SubSplit ncut_bisect(const SparseGraph& graph, const std::vector<std::size_t>& nodes, Rng& rng) {
    const std::size_t m = nodes.size();
    if (m == 2) return {{nodes[0]}, {nodes[1]}};

    std::vector<std::ptrdiff_t> local(graph.size(), -1);
    for (std::size_t a = 0; a < m; ++a) local[nodes[a]] = std::ptrdiff_t(a);

    std::vector<double> degree(m, 0.0);
    for (std::size_t a = 0; a < m; ++a)
        for (const auto& [v, w] : graph.adj[nodes[a]])
            if (local[v] >= 0) degree[a] += w;

    std::vector<double> inv_sqrt_deg(m);
    for (std::size_t a = 0; a < m; ++a) inv_sqrt_deg[a] = 1.0 / std::sqrt(degree[a]);

    // leading eigenvector of the normalized adjacency, known in closed form
    std::vector<double> v0(m);
    double v0_norm = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        v0[a] = std::sqrt(degree[a]);
        v0_norm += v0[a] * v0[a];
    }
    v0_norm = std::sqrt(v0_norm);
    for (double& v : v0) v /= v0_norm;

    auto orthonormalize = [&](std::vector<double>& x) {
        double dot = 0.0;
        for (std::size_t a = 0; a < m; ++a) dot += x[a] * v0[a];
        for (std::size_t a = 0; a < m; ++a) x[a] -= dot * v0[a];
        double norm = 0.0;
        for (double v : x) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (double& v : x) v /= norm;
        return norm;
    };

    std::vector<double> x(m), y(m);
    for (double& v : x) v = rng.uniform() - 0.5;
    orthonormalize(x);

    // power iteration on 2I - L_sym; its top eigenvector orthogonal to v0
    // is the Fiedler direction
    const std::size_t max_power_iter = 10000;
    const double power_tol = 1e-8;
    for (std::size_t it = 0; it < max_power_iter; ++it) {
        for (std::size_t a = 0; a < m; ++a) {
            double acc = x[a];
            for (const auto& [v, w] : graph.adj[nodes[a]]) {
                const std::ptrdiff_t b = local[v];
                if (b >= 0) acc += w * inv_sqrt_deg[a] * inv_sqrt_deg[std::size_t(b)] * x[std::size_t(b)];
            }
            y[a] = acc;
        }
        if (orthonormalize(y) == 0.0) { // restart on degenerate directions
            for (double& v : y) v = rng.uniform() - 0.5;
            orthonormalize(y);
        }
        double delta = 0.0;
        for (std::size_t a = 0; a < m; ++a) delta = std::max(delta, std::abs(y[a] - x[a]));
        x = y;
        if (delta < power_tol) break;
    }

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = x[a] * inv_sqrt_deg[a];
        const double fb = x[b] * inv_sqrt_deg[b];
        if (fa != fb) return fa < fb;
        return nodes[a] < nodes[b];
    });

    // sweep all prefix splits, maintaining cut and associations incrementally
    double assoc_a = 0.0, assoc_b = 0.0, cut = 0.0;
    for (std::size_t a = 0; a < m; ++a) assoc_b += degree[a];
    std::vector<char> in_a(m, 0);
    double best_ncut = kInf;
    std::size_t best_prefix = 1;
    for (std::size_t p = 0; p + 1 < m; ++p) {
        const std::size_t moved = order[p];
        double to_a = 0.0, to_b = 0.0;
        for (const auto& [v, w] : graph.adj[nodes[moved]]) {
            const std::ptrdiff_t b = local[v];
            if (b < 0 || std::size_t(b) == moved) continue;
            if (in_a[std::size_t(b)]) to_a += w;
            else to_b += w;
        }
        cut += to_b - to_a;
        assoc_a += degree[moved];
        assoc_b -= degree[moved];
        in_a[moved] = 1;
        if (assoc_a <= 0.0 || assoc_b <= 0.0) continue;
        const double nc = cut / assoc_a + cut / assoc_b;
        if (nc < best_ncut) {
            best_ncut = nc;
            best_prefix = p + 1;
        }
    }

    SubSplit split;
    for (std::size_t p = 0; p < m; ++p)
        (p < best_prefix ? split.a : split.b).push_back(nodes[order[p]]);
    std::sort(split.a.begin(), split.a.end());
    std::sort(split.b.begin(), split.b.end());
    return split;
}

} // namespace

Matd similarity_graph(const Matd& samples) {
    const SparseGraph graph = build_knn_graph(samples);
    Matd adj(samples.rows, samples.rows, 0.0);
    for (std::size_t i = 0; i < graph.size(); ++i)
        for (const auto& [j, w] : graph.adj[i]) adj(i, j) = w;
    return adj;
}

double normalized_cut(const Matd& adjacency, const std::vector<char>& side) {
    const std::size_t n = adjacency.rows;
    double cut = 0.0, assoc_a = 0.0, assoc_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double w = adjacency(i, j);
            if (side[i]) assoc_a += w;
            else assoc_b += w;
            if (j > i && side[i] != side[j]) cut += 2.0 * w;
        }
    }
    if (assoc_a <= 0.0 || assoc_b <= 0.0) return kInf;
    return cut / assoc_a + cut / assoc_b;
}

ClusterResult kmeans(const Matd& samples, std::size_t k, std::uint64_t seed,
                     std::size_t max_iter, double tol) {
    check_args(samples, k);
    if (samples.cols == 1 && samples.rows <= 4096) return kmeans_1d_exact(samples, k);
    return kmeans_lloyd(samples, k, seed, max_iter, tol);
}

ClusterResult bisecting_kmeans(const Matd& samples, std::size_t k, std::uint64_t seed) {
    check_args(samples, k);
    std::vector<std::vector<std::size_t>> clusters;
    clusters.emplace_back(samples.rows);
    std::iota(clusters[0].begin(), clusters[0].end(), 0);

    std::uint64_t round = 0;
    while (clusters.size() < k) {
        // pick the splittable cluster with the largest inertia, lowest index on ties
        double best_inertia = -1.0;
        std::size_t pick = clusters.size();
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            if (clusters[c].size() < 2) continue;
            std::vector<double> mean(samples.cols, 0.0);
            for (std::size_t i : clusters[c])
                for (std::size_t j = 0; j < samples.cols; ++j) mean[j] += samples(i, j);
            for (double& v : mean) v /= double(clusters[c].size());
            double inertia = 0.0;
            for (std::size_t i : clusters[c]) inertia += sq_dist(samples, i, mean);
            if (inertia > best_inertia) {
                best_inertia = inertia;
                pick = c;
            }
        }

        Matd sub(clusters[pick].size(), samples.cols);
        for (std::size_t r = 0; r < clusters[pick].size(); ++r)
            for (std::size_t j = 0; j < samples.cols; ++j) sub(r, j) = samples(clusters[pick][r], j);
        const ClusterResult two = kmeans(sub, 2, mix_seed(seed, round++));

        std::vector<std::size_t> part0, part1;
        for (std::size_t r = 0; r < clusters[pick].size(); ++r)
            (two.labels[r] == 0 ? part0 : part1).push_back(clusters[pick][r]);
        clusters[pick] = std::move(part0);
        clusters.push_back(std::move(part1));
    }

    std::vector<int> labels(samples.rows, 0);
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (std::size_t i : clusters[c]) labels[i] = int(c);
    return finalize(samples, std::move(labels), k);
}

ClusterResult hierarchical(const Matd& samples, std::size_t k) {
    check_args(samples, k);
    if (samples.cols == 1) return hierarchical_1d(samples, k);
    return hierarchical_general(samples, k);
}

ClusterResult graph_spectral(const Matd& samples, std::size_t k, std::uint64_t seed) {
    check_args(samples, k);
    const std::size_t n = samples.rows;
    Rng rng(seed);

    if (k == n) {
        std::vector<int> labels(n);
        std::iota(labels.begin(), labels.end(), 0);
        return finalize(samples, std::move(labels), k);
    }

    const SparseGraph graph = build_knn_graph(samples);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::vector<std::size_t>> clusters = components_of(graph, all);

    auto cluster_order = [&](std::size_t a, std::size_t b) {
        if (clusters[a].size() != clusters[b].size())
            return clusters[a].size() < clusters[b].size();
        return clusters[a].front() < clusters[b].front();
    };

    // more components than requested clusters: merge smallest first
    while (clusters.size() > k) {
        std::vector<std::size_t> idx(clusters.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), cluster_order);
        const std::size_t a = std::min(idx[0], idx[1]);
        const std::size_t b = std::max(idx[0], idx[1]);
        clusters[a].insert(clusters[a].end(), clusters[b].begin(), clusters[b].end());
        std::sort(clusters[a].begin(), clusters[a].end());
        clusters.erase(clusters.begin() + std::ptrdiff_t(b));
    }

    while (clusters.size() < k) {
        // split the largest splittable cluster, lowest front index on ties
        std::size_t pick = clusters.size();
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            if (clusters[c].size() < 2) continue;
            if (pick == clusters.size() || clusters[c].size() > clusters[pick].size() ||
                (clusters[c].size() == clusters[pick].size() &&
                 clusters[c].front() < clusters[pick].front()))
                pick = c;
        }
        const std::vector<std::vector<std::size_t>> sub_comps = components_of(graph, clusters[pick]);
        SubSplit split;
        if (sub_comps.size() > 1) {
            std::size_t lowest = 0;
            for (std::size_t c = 1; c < sub_comps.size(); ++c)
                if (sub_comps[c].front() < sub_comps[lowest].front()) lowest = c;
            for (std::size_t c = 0; c < sub_comps.size(); ++c) {
                auto& side = (c == lowest) ? split.a : split.b;
                side.insert(side.end(), sub_comps[c].begin(), sub_comps[c].end());
            }
            std::sort(split.b.begin(), split.b.end());
        } else {
            split = ncut_bisect(graph, clusters[pick], rng);
        }
        clusters[pick] = std::move(split.a);
        clusters.push_back(std::move(split.b));
    }

    std::sort(clusters.begin(), clusters.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    std::vector<int> labels(n, 0);
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (std::size_t i : clusters[c]) labels[i] = int(c);
    return finalize(samples, std::move(labels), k);
}

ClusterResult random_clustering(const Matd& samples, std::size_t k, std::uint64_t seed) {
    check_args(samples, k);
    const std::size_t n = samples.rows;
    Rng rng(seed);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = int(rng.index(k));

    // repair empty clusters so every id is used when n >= k
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) counts[l]++;
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0) continue;
        std::size_t donor = 0;
        for (std::size_t d = 1; d < k; ++d)
            if (counts[d] > counts[donor]) donor = d;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == int(donor)) {
                labels[i] = int(c);
                counts[donor]--;
                counts[c]++;
                break;
            }
        }
    }
    return finalize(samples, std::move(labels), k);
}

ClusterResult run(Method method, const Matd& samples, std::size_t k, std::uint64_t seed) {
    switch (method) {
        case Method::random: return random_clustering(samples, k, seed);
        case Method::kmeans: return kmeans(samples, k, seed);
        case Method::bisecting_kmeans: return bisecting_kmeans(samples, k, seed);
        case Method::graph_spectral: return graph_spectral(samples, k, seed);
        case Method::hierarchical: return hierarchical(samples, k);
    }
    throw std::invalid_argument("unknown clustering method");
}

Method method_from_name(const std::string& name) {
    if (name == "random") return Method::random;
    if (name == "kmeans") return Method::kmeans;
    if (name == "bisecting") return Method::bisecting_kmeans;
    if (name == "graph") return Method::graph_spectral;
    if (name == "hierarchical") return Method::hierarchical;
    throw std::invalid_argument("unknown clustering method: " + name);
}

const char* method_name(Method m) {
    switch (m) {
        case Method::random: return "random";
        case Method::kmeans: return "kmeans";
        case Method::bisecting_kmeans: return "bisecting";
        case Method::graph_spectral: return "graph";
        case Method::hierarchical: return "hierarchical";
    }
    return "?";
}

} // namespace jlcm::clustering
