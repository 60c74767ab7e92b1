#include "jlcm/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"

namespace jlcm {

double Schedule::beta_at(std::size_t step) const {
    const std::size_t warmup = warmup_steps();
    if (step < warmup || iterations <= warmup + 1) return beta_start;
    const double t = double(step - warmup) / double(iterations - 1 - warmup);
    return beta_start + (beta_end - beta_start) * t;
}

std::vector<double> SoftMapping::probabilities_row(std::size_t w) const {
    std::vector<double> p(num_codewords);
    const double* row = &logits[w * num_codewords];
    double hi = row[0];
    for (std::size_t j = 1; j < num_codewords; ++j) hi = std::max(hi, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < num_codewords; ++j) {
        p[j] = std::exp(row[j] - hi);
        total += p[j];
    }
    for (double& v : p) v /= total;
    return p;
}

std::size_t SoftMapping::argmax_row(std::size_t w) const {
    const double* row = &logits[w * num_codewords];
    std::size_t best = 0;
    for (std::size_t j = 1; j < num_codewords; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

Matd SoftMapping::probabilities() const {
    Matd out(num_weights, num_codewords);
    for (std::size_t w = 0; w < num_weights; ++w) {
        const std::vector<double> p = probabilities_row(w);
        for (std::size_t j = 0; j < num_codewords; ++j) out(w, j) = p[j];
    }
    return out;
}

SoftMapping soften(const HardMapping& mapping, std::size_t num_codewords, double sharpness) {
    SoftMapping soft;
    soft.num_weights = mapping.indices.size();
    soft.num_codewords = num_codewords;
    soft.logits.assign(soft.num_weights * num_codewords, 0.0);
    for (std::size_t w = 0; w < soft.num_weights; ++w)
        soft.logit(w, std::size_t(mapping.indices.data[w])) = sharpness;
    return soft;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::io_failure, "cannot open " + path + " for writing");
    out << "step,total,recon,l1,l2,beta\n";
    out.precision(17);
    for (const TraceRow& row : trace)
        out << row.step << ',' << row.total << ',' << row.reconstruction << ',' << row.l1 << ','
            << row.l2 << ',' << row.beta << '\n';
}

namespace {

struct LayerData {
    Matd x_compressed;       // B x n_i
    Matd target;             // B x n_o, output of the original layer on x_original
    Matd weights;            // n_o x n_i
    std::vector<double> bias;
    Activation activation;
    std::size_t batch, n_o, n_i;
};

LayerData prepare(const LinearLayer& layer, const Matf& x_compressed, const Matf& x_original) {
    if (x_compressed.rows != x_original.rows)
        throw std::invalid_argument("calibration batches differ in size");
    if (x_compressed.cols != layer.n_in() || x_original.cols != layer.n_in())
        throw std::invalid_argument("calibration width does not match layer n_in");

    LayerData d;
    d.x_compressed = widen(x_compressed);
    d.weights = widen(layer.weights);
    d.bias.assign(layer.n_out(), 0.0);
    if (layer.has_bias())
        for (std::size_t o = 0; o < layer.n_out(); ++o) d.bias[o] = double(layer.bias[o]);
    d.activation = layer.activation;
    d.batch = x_original.rows;
    d.n_o = layer.n_out();
    d.n_i = layer.n_in();

    const Matd x = widen(x_original);
    d.target = Matd(d.batch, d.n_o);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t o = 0; o < d.n_o; ++o) {
            double acc = d.bias[o];
            for (std::size_t i = 0; i < d.n_i; ++i) acc += d.weights(o, i) * x(b, i);
            d.target(b, o) = activate(d.activation, acc);
        }
    return d;
}

Matd reconstruct_soft(const CodebookSet& cbs, const Matd& probs, std::size_t n_o, std::size_t n_i) {
    Matd out(n_o, n_i);
    for (std::size_t r = 0; r < n_o; ++r) {
        const auto& codebook = cbs.codebooks[cbs.codebook_index_of_row(r)];
        const double s = cbs.scale_of_row(r);
        for (std::size_t c = 0; c < n_i; ++c) {
            const std::size_t w = r * n_i + c;
            double acc = 0.0;
            for (std::size_t j = 0; j < codebook.size(); ++j) acc += probs(w, j) * codebook[j];
            out(r, c) = s * acc;
        }
    }
    return out;
}

struct StepEval {
    LossParts parts;
    Matd reconstructed; // W~
    Matd pre_act;       // B x n_o
    Matd output;        // B x n_o
};

StepEval eval_forward(const CodebookSet& cbs, const Matd& probs, const LayerData& d,
                      double beta, double lambda_effective) {
    StepEval ev;
    ev.reconstructed = reconstruct_soft(cbs, probs, d.n_o, d.n_i);
    ev.pre_act = Matd(d.batch, d.n_o);
    ev.output = Matd(d.batch, d.n_o);

    double recon = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t o = 0; o < d.n_o; ++o) {
            double acc = d.bias[o];
            for (std::size_t i = 0; i < d.n_i; ++i)
                acc += ev.reconstructed(o, i) * d.x_compressed(b, i);
            ev.pre_act(b, o) = acc;
            ev.output(b, o) = activate(d.activation, acc);
            const double diff = ev.output(b, o) - d.target(b, o);
            recon += diff * diff;
        }
    recon /= double(d.batch * d.n_o);

    double l1 = 0.0;
    for (std::size_t i = 0; i < ev.reconstructed.size(); ++i) {
        const double diff = ev.reconstructed.data[i] - d.weights.data[i];
        l1 += diff * diff;
    }
    l1 /= double(d.n_o * d.n_i);

    double l2 = 0.0;
    for (double p : probs.data) l2 += 1.0 - std::pow(std::abs(2.0 * p - 1.0), beta);
    l2 /= double(probs.size());

    ev.parts.reconstruction = recon;
    ev.parts.l1 = l1;
    ev.parts.l2 = l2;
    ev.parts.total = recon + l1 + lambda_effective * l2;
    return ev;
}

// d(recon + l1)/dW~ for a prepared layer and forward evaluation.
Matd upstream_of(const StepEval& ev, const LayerData& d) {
    Matd up(d.n_o, d.n_i, 0.0);
    const double recon_norm = 2.0 / double(d.batch * d.n_o);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t o = 0; o < d.n_o; ++o) {
            const double g = recon_norm * (ev.output(b, o) - d.target(b, o)) *
                             activate_derivative(d.activation, ev.pre_act(b, o));
            if (g == 0.0) continue;
            for (std::size_t i = 0; i < d.n_i; ++i) up(o, i) += g * d.x_compressed(b, i);
        }
    const double l1_norm = 2.0 / double(d.n_o * d.n_i);
    for (std::size_t i = 0; i < up.size(); ++i)
        up.data[i] += l1_norm * (ev.reconstructed.data[i] - d.weights.data[i]);
    return up;
}

// Exact softmax-Jacobian gradient of lambda * mean(1 - |2p - 1|^beta),
// accumulated into grad. Subgradient zero is taken at p = 1/2.
void add_l2_gradient(const Matd& probs, double lambda, double beta, Matd& grad) {
    if (lambda == 0.0) return;
    const std::size_t n_w = probs.rows, n_j = probs.cols;
    const double norm = lambda * 2.0 * beta / double(probs.size());
    std::vector<double> q(n_j);
    for (std::size_t w = 0; w < n_w; ++w) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n_j; ++j) {
            const double t = 2.0 * probs(w, j) - 1.0;
            q[j] = t == 0.0 ? 0.0 : -norm * std::copysign(std::pow(std::abs(t), beta - 1.0), t);
            dot += q[j] * probs(w, j);
        }
        for (std::size_t j = 0; j < n_j; ++j) grad(w, j) += probs(w, j) * (q[j] - dot);
    }
}

Matd grad_logits_impl(const CodebookSet& cbs, const SoftMapping& mapping, const Matd& probs,
                      const Matd& upstream, double lambda, double beta, MappingRule rule) {
    const std::size_t n_o = upstream.rows, n_i = upstream.cols;
    const std::size_t n_j = mapping.num_codewords;
    Matd grad(mapping.num_weights, n_j, 0.0);

    for (std::size_t r = 0; r < n_o; ++r) {
        const auto& codebook = cbs.codebooks[cbs.codebook_index_of_row(r)];
        const double s = cbs.scale_of_row(r);
        for (std::size_t c = 0; c < n_i; ++c) {
            const std::size_t w = r * n_i + c;
            const double u = upstream(r, c) * s;
            if (rule == MappingRule::proximal) {
                // Descent on the negated update row: a positive upstream must
                // raise the logits of smaller codewords, nearest first. The
                // update-weight magnitudes are 1 / (1 + distance).
                const std::size_t a = mapping.argmax_row(w);
                const double ca = codebook[a];
                for (std::size_t j = 0; j < n_j; ++j) {
                    if (j == a) continue; // update weight is exactly zero there
                    const double diff = ca - codebook[j];
                    const double sgn = diff < 0.0 ? -1.0 : 1.0; // sign(0) = 1
                    grad(w, j) = -u * sgn / (1.0 + std::abs(diff));
                }
            } else {
                double dot = 0.0;
                for (std::size_t j = 0; j < n_j; ++j) dot += probs(w, j) * codebook[j];
                for (std::size_t j = 0; j < n_j; ++j)
                    grad(w, j) = u * probs(w, j) * (codebook[j] - dot);
            }
        }
    }
    add_l2_gradient(probs, lambda, beta, grad);
    return grad;
}

std::vector<std::vector<double>> grad_codebooks_impl(const CodebookSet& cbs,
                                                     const Matd& probs, const Matd& upstream) {
    const std::size_t n_o = upstream.rows, n_i = upstream.cols;
    std::vector<std::vector<double>> grad(cbs.codebooks.size());
    for (std::size_t g = 0; g < grad.size(); ++g) grad[g].assign(cbs.codebooks[g].size(), 0.0);
    for (std::size_t r = 0; r < n_o; ++r) {
        const std::size_t g = cbs.codebook_index_of_row(r);
        const double s = cbs.scale_of_row(r);
        for (std::size_t c = 0; c < n_i; ++c) {
            const std::size_t w = r * n_i + c;
            const double u = upstream(r, c) * s;
            if (u == 0.0) continue;
            for (std::size_t j = 0; j < grad[g].size(); ++j) grad[g][j] += u * probs(w, j);
        }
    }
    return grad;
}

// Adam with bias correction.
struct AdamState {
    std::vector<double> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::size_t t, double lr, const double* grad, double* param, std::size_t n) {
        const double c1 = 1.0 - std::pow(beta1, double(t));
        const double c2 = 1.0 - std::pow(beta2, double(t));
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

} // namespace

Matd soft_reconstruct(const CodebookSet& cbs, const SoftMapping& mapping) {
    const std::size_t n_o = cbs.row_group_boundaries.back();
    const std::size_t n_i = mapping.num_weights / n_o;
    return reconstruct_soft(cbs, mapping.probabilities(), n_o, n_i);
}

LossParts loss_total(const CodebookSet& cbs, const SoftMapping& mapping, const Matf& x_compressed,
                     const Matf& x_original, const LinearLayer& layer, const Schedule& sched,
                     std::size_t step) {
    const LayerData d = prepare(layer, x_compressed, x_original);
    const Matd probs = mapping.probabilities();
    const double lambda_eff = sched.in_warmup(step) ? 0.0 : sched.lambda;
    const StepEval ev = eval_forward(cbs, probs, d, sched.beta_at(step), lambda_eff);
    if (!std::isfinite(ev.parts.total))
        throw NumericError("non-finite loss (learning rate too high?)");
    return ev.parts;
}

Matd reconstruction_upstream(const CodebookSet& cbs, const SoftMapping& mapping,
                             const Matf& x_compressed, const Matf& x_original,
                             const LinearLayer& layer) {
    const LayerData d = prepare(layer, x_compressed, x_original);
    const Matd probs = mapping.probabilities();
    const StepEval ev = eval_forward(cbs, probs, d, 2.0, 0.0);
    return upstream_of(ev, d);
}

std::vector<std::vector<double>> grad_codebooks(const CodebookSet& cbs, const SoftMapping& mapping,
                                                const Matd& upstream) {
    return grad_codebooks_impl(cbs, mapping.probabilities(), upstream);
}

std::vector<double> proximal_update_row(const std::vector<double>& codebook, std::size_t assigned) {
    std::vector<double> row(codebook.size());
    const double ca = codebook[assigned];
    for (std::size_t j = 0; j < codebook.size(); ++j) {
        const double diff = ca - codebook[j];
        const double sgn = diff < 0.0 ? -1.0 : 1.0; // sign(0) = 1
        row[j] = sgn / (1.0 + std::abs(diff)) - (j == assigned ? 1.0 : 0.0);
    }
    return row;
}

Matd proximal_update_matrix(const CodebookSet& cbs, const SoftMapping& mapping) {
    const std::size_t n_o = cbs.row_group_boundaries.back();
    const std::size_t n_i = mapping.num_weights / n_o;
    Matd out(mapping.num_weights, mapping.num_codewords);
    for (std::size_t r = 0; r < n_o; ++r) {
        const auto& codebook = cbs.codebooks[cbs.codebook_index_of_row(r)];
        for (std::size_t c = 0; c < n_i; ++c) {
            const std::size_t w = r * n_i + c;
            const std::vector<double> row = proximal_update_row(codebook, mapping.argmax_row(w));
            for (std::size_t j = 0; j < row.size(); ++j) out(w, j) = row[j];
        }
    }
    return out;
}

Matd grad_logits_proximal(const CodebookSet& cbs, const SoftMapping& mapping, const Matd& upstream,
                          double lambda, double beta) {
    return grad_logits_impl(cbs, mapping, mapping.probabilities(), upstream, lambda, beta,
                            MappingRule::proximal);
}

Matd grad_logits_standard(const CodebookSet& cbs, const SoftMapping& mapping, const Matd& upstream,
                          double lambda, double beta) {
    return grad_logits_impl(cbs, mapping, mapping.probabilities(), upstream, lambda, beta,
                            MappingRule::standard);
}

OptimizeResult optimize_layer(const LinearLayer& layer, const CodebookSet& cbs,
                              const SoftMapping& mapping, const Matf& x_compressed,
                              const Matf& x_original, const Schedule& sched) {
    OptimizeResult result{cbs, mapping, {}};
    if (sched.iterations == 0) return result;
    result.trace.reserve(sched.iterations);

    const LayerData d = prepare(layer, x_compressed, x_original);

    std::size_t codeword_count = 0;
    for (const auto& c : result.codebooks.codebooks) codeword_count += c.size();
    AdamState adam_c(codeword_count);
    AdamState adam_i(result.mapping.logits.size());
    std::vector<double> flat_c(codeword_count), flat_gc(codeword_count);

    double initial_total = 0.0;
    for (std::size_t step = 0; step < sched.iterations; ++step) {
        const double beta = sched.beta_at(step);
        const double lambda_eff = sched.in_warmup(step) ? 0.0 : sched.lambda;

        const Matd probs = result.mapping.probabilities();
        const StepEval ev = eval_forward(result.codebooks, probs, d, beta, lambda_eff);
        result.trace.push_back(
            {step, ev.parts.total, ev.parts.reconstruction, ev.parts.l1, ev.parts.l2, beta});

        if (!std::isfinite(ev.parts.total))
            throw NumericError("non-finite loss at step " + std::to_string(step) +
                               " (learning rate too high?)");
        // divergence is judged on the data terms; the regularizer switches
        // on only after warmup
        const double data_term = ev.parts.reconstruction + ev.parts.l1;
        if (step == 0) initial_total = data_term;
        else if (data_term > 1e3 * std::max(initial_total, 1e-12))
            throw NumericError("optimization diverged at step " + std::to_string(step));

        const Matd upstream = upstream_of(ev, d);

        if (sched.learn_codebooks) {
            const auto gc = grad_codebooks_impl(result.codebooks, probs, upstream);
            std::size_t at = 0;
            for (std::size_t g = 0; g < gc.size(); ++g)
                for (std::size_t j = 0; j < gc[g].size(); ++j) {
                    flat_c[at] = result.codebooks.codebooks[g][j];
                    flat_gc[at] = gc[g][j];
                    at++;
                }
            adam_c.step(step + 1, sched.learning_rate_codebooks, flat_gc.data(), flat_c.data(),
                        codeword_count);
            at = 0;
            for (auto& codebook : result.codebooks.codebooks)
                for (double& value : codebook) value = flat_c[at++];
        }

        if (sched.mapping_rule != MappingRule::frozen) {
            const Matd gi = grad_logits_impl(result.codebooks, result.mapping, probs, upstream,
                                             lambda_eff, beta, sched.mapping_rule);
            adam_i.step(step + 1, sched.learning_rate_logits, gi.data.data(),
                        result.mapping.logits.data(), result.mapping.logits.size());
        }
    }
    return result;
}

std::pair<CodebookSet, HardMapping> finalize(const CodebookSet& cbs, const SoftMapping& mapping,
                                             std::size_t n_o, std::size_t n_i) {
    CodebookSet out = cbs;
    for (auto& codebook : out.codebooks)
        for (double& value : codebook) value = round_to_half(value);
    for (double& s : out.scales) s = round_to_half(s);

    HardMapping hard{Matrix<std::int32_t>(n_o, n_i)};
    for (std::size_t w = 0; w < mapping.num_weights; ++w)
        hard.indices.data[w] = std::int32_t(mapping.argmax_row(w));
    return {std::move(out), std::move(hard)};
}

} // namespace jlcm
