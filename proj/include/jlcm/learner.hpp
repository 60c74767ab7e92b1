#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jlcm/matrix.hpp"
#include "jlcm/model.hpp"
#include "jlcm/reorder_init.hpp"

namespace jlcm {

// Gradient rule for the mapping logits. `standard` is the plain chain rule
// through softmax and the codeword values; it favors jumps toward extreme
// codewords and exists for comparison runs. `proximal` replaces that factor
// with a decreasing function of codeword distance.
enum class MappingRule : std::uint8_t { frozen, proximal, standard };

struct Schedule {
    double beta_start = 20.0;
    double beta_end = 2.0;
    double warmup_fraction = 0.2;
    double lambda = 0.01;
    std::size_t iterations = 10000;
    double learning_rate_codebooks = 1e-4;
    double learning_rate_logits = 1e-3;
    std::uint64_t seed = 12345;

    bool learn_codebooks = true;
    MappingRule mapping_rule = MappingRule::proximal;
    double initial_logit_sharpness = 4.5; // logit gap of the one-hot init

    std::size_t warmup_steps() const { return std::size_t(warmup_fraction * double(iterations)); }
    bool in_warmup(std::size_t step) const { return step < warmup_steps(); }
    // beta_start during warmup, then linear down to beta_end at the last step
    double beta_at(std::size_t step) const;
};

// Per-weight logits over the codeword axis; softmax rows are the soft
// assignment probabilities.
struct SoftMapping {
    std::size_t num_weights = 0;
    std::size_t num_codewords = 0;
    std::vector<double> logits; // row-major num_weights x num_codewords

    double& logit(std::size_t w, std::size_t j) { return logits[w * num_codewords + j]; }
    double logit(std::size_t w, std::size_t j) const { return logits[w * num_codewords + j]; }

    // softmax of one row, ties in argmax resolved to the lowest index
    std::vector<double> probabilities_row(std::size_t w) const;
    std::size_t argmax_row(std::size_t w) const;
    Matd probabilities() const;
};

// Near-one-hot logits matching a hard mapping: `sharpness` at the assigned
// codeword, zero elsewhere.
SoftMapping soften(const HardMapping& mapping, std::size_t num_codewords,
                   double sharpness = 4.5);

struct LossParts {
    double total = 0.0;
    double reconstruction = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
};

struct TraceRow {
    std::size_t step;
    double total, reconstruction, l1, l2, beta;
};

// step,total,recon,l1,l2,beta
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

// Soft weight reconstruction: W[w] = scale(w) * sum_j p[w,j] * codeword[j].
Matd soft_reconstruct(const CodebookSet& cbs, const SoftMapping& mapping);

// Mean-squared output mismatch against the original layer on (X_compressed,
// X_original) plus the weight-space L1 term and (after warmup) lambda times
// the hardness regularizer L2 = mean(1 - |2p - 1|^beta). All terms are
// means, so lambda is scale-free.
LossParts loss_total(const CodebookSet& cbs, const SoftMapping& mapping, const Matf& x_compressed,
                     const Matf& x_original, const LinearLayer& layer, const Schedule& sched,
                     std::size_t step);

// d(reconstruction + l1)/dW~, the upstream fed to both parameter gradients.
Matd reconstruction_upstream(const CodebookSet& cbs, const SoftMapping& mapping,
                             const Matf& x_compressed, const Matf& x_original,
                             const LinearLayer& layer);

// grad[g][j] = sum over weights w in group g of upstream[w] * scale(w) * p[w,j].
std::vector<std::vector<double>> grad_codebooks(const CodebookSet& cbs, const SoftMapping& mapping,
                                                const Matd& upstream);

// One row of the proximal update weights for a codebook and the currently
// assigned codeword: sign(c_a - c_j) / (1 + |c_a - c_j|) - [j == a], with
// sign(0) = 1 so the assigned entry is exactly zero.
std::vector<double> proximal_update_row(const std::vector<double>& codebook, std::size_t assigned);

// Full num_weights x num_codewords update-weight matrix.
Matd proximal_update_matrix(const CodebookSet& cbs, const SoftMapping& mapping);

// Proximal logits gradient: upstream[w] * scale(w) * D[w,j] plus lambda
// times the exact softmax-Jacobian gradient of L2 at the given beta.
Matd grad_logits_proximal(const CodebookSet& cbs, const SoftMapping& mapping, const Matd& upstream,
                          double lambda, double beta);

// Plain chain-rule logits gradient (comparison rule).
Matd grad_logits_standard(const CodebookSet& cbs, const SoftMapping& mapping, const Matd& upstream,
                          double lambda, double beta);

struct OptimizeResult {
    CodebookSet codebooks;
    SoftMapping mapping;
    std::vector<TraceRow> trace;
};

// Runs sched.iterations adaptive-moment steps over the full calibration
// batch; deterministic. Throws NumericError on divergence or non-finite
// loss. Scales are frozen; only codebooks and logits move.
OptimizeResult optimize_layer(const LinearLayer& layer, const CodebookSet& cbs,
                              const SoftMapping& mapping, const Matf& x_compressed,
                              const Matf& x_original, const Schedule& sched);

// Hard argmax assignment (ties -> lowest index); codewords and scales are
// rounded to their f16 storage values.
std::pair<CodebookSet, HardMapping> finalize(const CodebookSet& cbs, const SoftMapping& mapping,
                                             std::size_t n_o, std::size_t n_i);

} // namespace jlcm
