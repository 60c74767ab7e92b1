#include "jlcm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "jlcm/half.hpp"
#include "jlcm/rng.hpp"

namespace jlcm {

ModeChoice mode_choice_from_name(const std::string& name) {
    if (name == "auto") return ModeChoice::automatic;
    if (name == "multi-scale") return ModeChoice::multi_scale;
    if (name == "multi-codebook") return ModeChoice::multi_codebook;
    throw std::invalid_argument("unknown mode: " + name);
}

const char* mode_choice_name(ModeChoice mode) {
    switch (mode) {
        case ModeChoice::automatic: return "auto";
        case ModeChoice::multi_scale: return "multi-scale";
        case ModeChoice::multi_codebook: return "multi-codebook";
    }
    return "?";
}

namespace {

std::size_t worker_cap() {
    if (const char* env = std::getenv("JLCM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return std::size_t(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

double weight_mse(const Matf& reference, const Matd& candidate) {
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double diff = double(reference.data[i]) - candidate.data[i];
        acc += diff * diff;
    }
    return acc / double(reference.size());
}

double feature_mse(const Matf& a, const Matf& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = double(a.data[i]) - double(b.data[i]);
        acc += diff * diff;
    }
    return acc / double(a.size());
}

std::size_t plan_groups(const CompressionPlan& plan) {
    return plan.mode == PlanMode::multi_codebook ? plan.num_codebooks : plan.num_scales;
}

// Replaces a layer in the runtime view with its finalized f16 weights/bias.
void install_compressed(ModelContainer& hybrid, std::size_t l, const CompressedLayer& cl) {
    hybrid.layers[l].weights = reconstruct_layer_weights(cl);
    for (float& b : hybrid.layers[l].bias) b = round_to_half(b);
}

struct LayerResult {
    CompressedLayer compressed;
    LayerReport report;
    std::vector<TraceRow> trace;
};

// Init (and optionally optimize) one layer of the already re-ordered model.
LayerResult process_layer(const LinearLayer& layer, std::size_t index, const CompressionPlan& plan,
                          bool reordered, const RunConfig& cfg, const Matf* x_compressed,
                          const Matf* x_original) {
    LayerResult result;
    result.report.index = index;
    result.report.n_o = layer.n_out();
    result.report.n_i = layer.n_in();
    result.report.plan = plan;
    result.report.reordered = reordered;

    const std::uint64_t init_seed = mix_seed(cfg.schedule.seed, index * 2 + 1);
    auto [cbs, hard] = initialize(layer.weights, plan, cfg.method, init_seed, cfg.scale_estimator);
    result.report.init_weight_mse = weight_mse(layer.weights, reconstruct(cbs, hard));

    if (cfg.optimize) {
        result.report.calib_feature_mse = feature_mse(*x_compressed, *x_original);
        SoftMapping soft = soften(hard, plan.codebook_size, cfg.schedule.initial_logit_sharpness);
        OptimizeResult opt =
            optimize_layer(layer, cbs, soft, *x_compressed, *x_original, cfg.schedule);
        result.trace = std::move(opt.trace);
        auto [final_cbs, final_hard] =
            finalize(opt.codebooks, opt.mapping, layer.n_out(), layer.n_in());
        result.report.final_weight_mse = weight_mse(layer.weights, reconstruct(final_cbs, final_hard));
        result.compressed = compress_layer(layer, plan.mode, final_cbs, final_hard);
    } else {
        // storage is f16 either way; round so the artifact matches the report
        for (auto& codebook : cbs.codebooks)
            for (double& v : codebook) v = round_to_half(v);
        for (double& s : cbs.scales) s = round_to_half(s);
        result.report.final_weight_mse = weight_mse(layer.weights, reconstruct(cbs, hard));
        result.compressed = compress_layer(layer, plan.mode, cbs, hard);
    }
    return result;
}

} // namespace

CompressionOutcome compress_model(const ModelContainer& model, const CalibrationSet* calib,
                                  const RunConfig& cfg) {
    validate_model(model);
    if (model.layers.empty()) throw std::invalid_argument("model has no layers");
    if (cfg.optimize && calib == nullptr)
        throw std::invalid_argument("optimization requires a calibration set");
    if (calib != nullptr && calib->inputs.cols != model.layers.front().n_in())
        throw std::invalid_argument("calibration width does not match the first layer");

    const std::size_t num_layers = model.layers.size();
    const PlanMode mode = cfg.resolved_mode();

    std::vector<CompressionPlan> plans(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l)
        plans[l] = derive_plan(model.layers[l].n_out(), model.layers[l].n_in(), cfg.alpha, mode);

    // Row clustering is invariant to the column permutation inherited from
    // the previous layer, so every sigma can be derived from the original
    // weights. The last layer is never re-ordered (no successor to absorb
    // the permutation).
    std::vector<std::vector<std::size_t>> sigmas(num_layers);
    std::vector<char> reordered(num_layers, 0);
    auto derive_sigma = [&](std::size_t l) {
        const std::size_t groups = plan_groups(plans[l]);
        if (l + 1 >= num_layers || groups < 2) return;
        sigmas[l] = reorder(model.layers[l].weights, groups, cfg.method,
                            mix_seed(cfg.schedule.seed, l * 2))
                        .sigma;
        reordered[l] = 1;
    };

    CompressionOutcome outcome;
    outcome.layers.resize(num_layers);
    outcome.traces.resize(num_layers);
    outcome.compressed.layers.resize(num_layers);

    if (!cfg.optimize) {
        const std::size_t workers = std::min(worker_cap(), num_layers);
        auto parallel_for_layers = [&](auto&& fn) {
            if (workers <= 1) {
                for (std::size_t l = 0; l < num_layers; ++l) fn(l);
                return;
            }
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (std::size_t t = 0; t < workers; ++t)
                pool.emplace_back([&] {
                    for (std::size_t l = next.fetch_add(1); l < num_layers; l = next.fetch_add(1))
                        fn(l);
                });
            for (auto& th : pool) th.join();
        };

        parallel_for_layers(derive_sigma);
        ModelContainer work = model;
        for (std::size_t l = 0; l < num_layers; ++l)
            if (reordered[l]) work = apply_permutation(work, l, sigmas[l]);

        parallel_for_layers([&](std::size_t l) {
            LayerResult r = process_layer(work.layers[l], l, plans[l], reordered[l] != 0, cfg,
                                          nullptr, nullptr);
            outcome.compressed.layers[l] = std::move(r.compressed);
            outcome.layers[l] = r.report;
        });
    } else {
        for (std::size_t l = 0; l < num_layers; ++l) derive_sigma(l);
        ModelContainer work = model;   // permuted original; the target function
        for (std::size_t l = 0; l < num_layers; ++l)
            if (reordered[l]) work = apply_permutation(work, l, sigmas[l]);
        ModelContainer hybrid = work;  // compressed prefix, pristine suffix

        for (std::size_t l = 0; l < num_layers; ++l) {
            const Matf x_original = forward(work, calib->inputs, l, Capture::pre_layer_input);
            const Matf x_compressed = forward(hybrid, calib->inputs, l, Capture::pre_layer_input);
            LayerResult r = process_layer(work.layers[l], l, plans[l], reordered[l] != 0, cfg,
                                          &x_compressed, &x_original);
            install_compressed(hybrid, l, r.compressed);
            outcome.compressed.layers[l] = std::move(r.compressed);
            outcome.layers[l] = r.report;
            outcome.traces[l] = std::move(r.trace);
        }
    }

    outcome.footprint = measure_footprint(outcome.compressed, model);
    return outcome;
}

EvalMetrics evaluate(const ModelContainer& original, const ModelContainer& compressed,
                     const Matf& inputs) {
    if (original.layers.size() != compressed.layers.size())
        throw std::invalid_argument("models have different layer counts");

    EvalMetrics metrics;
    for (std::size_t l = 0; l < original.layers.size(); ++l) {
        const Matf& a = original.layers[l].weights;
        const Matf& b = compressed.layers[l].weights;
        if (a.rows != b.rows || a.cols != b.cols)
            throw std::invalid_argument("layer shapes differ at layer " + std::to_string(l));
        metrics.layer_weight_mse.push_back(feature_mse(a, b));
    }

    const Matf out_a = forward_all(original, inputs);
    const Matf out_b = forward_all(compressed, inputs);
    double mse = 0.0, max_abs = 0.0;
    std::size_t agree = 0;
    for (std::size_t r = 0; r < out_a.rows; ++r) {
        std::size_t arg_a = 0, arg_b = 0;
        for (std::size_t c = 0; c < out_a.cols; ++c) {
            const double diff = double(out_a(r, c)) - double(out_b(r, c));
            mse += diff * diff;
            max_abs = std::max(max_abs, std::abs(diff));
            if (out_a(r, c) > out_a(r, arg_a)) arg_a = c;
            if (out_b(r, c) > out_b(r, arg_b)) arg_b = c;
        }
        if (arg_a == arg_b) agree++;
    }
    metrics.output_mse = mse / double(out_a.size());
    metrics.max_abs_deviation = max_abs;
    metrics.top1_agreement = out_a.rows == 0 ? 1.0 : double(agree) / double(out_a.rows);
    return metrics;
}

EvalMetrics evaluate(const ModelContainer& original, const CompressedModel& compressed,
                     const Matf& inputs) {
    return evaluate(original, decompress_model(compressed), inputs);
}

namespace {

nlohmann::json footprint_to_json(const FootprintReport& report) {
    nlohmann::json per_layer = nlohmann::json::array();
    for (const LayerFootprint& f : report.per_layer)
        per_layer.push_back({{"layer", f.layer},
                             {"weight_bits", f.weight_bits},
                             {"codeword_bits", f.codeword_bits},
                             {"scale_bits", f.scale_bits},
                             {"index_bits", f.index_bits},
                             {"bias_bits", f.bias_bits}});
    return {{"m_w_bits", report.m_w_bits},
            {"m_a_bits", report.m_a_bits},
            {"m_ref_bits", report.m_ref_bits},
            {"m_total_bits", report.m_total_bits},
            {"alpha_achieved", report.alpha_achieved},
            {"alpha_weights", report.alpha_weights},
            {"per_layer", per_layer}};
}

} // namespace

std::string run_report_json(const RunConfig& cfg, const CompressionOutcome& outcome) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerReport& r : outcome.layers)
        layers.push_back({{"index", r.index},
                          {"n_o", r.n_o},
                          {"n_i", r.n_i},
                          {"mode", plan_mode_name(r.plan.mode)},
                          {"codebook_size", r.plan.codebook_size},
                          {"num_codebooks", r.plan.num_codebooks},
                          {"num_scales", r.plan.num_scales},
                          {"bits_per_index", r.plan.bits_per_index},
                          {"reordered", r.reordered},
                          {"init_weight_mse", r.init_weight_mse},
                          {"final_weight_mse", r.final_weight_mse},
                          {"calib_feature_mse", r.calib_feature_mse}});

    nlohmann::json doc = {
        {"config",
         {{"alpha", cfg.alpha},
          {"mode", mode_choice_name(cfg.mode)},
          {"clustering", clustering::method_name(cfg.method)},
          {"optimize", cfg.optimize},
          {"iterations", cfg.schedule.iterations},
          {"lambda", cfg.schedule.lambda},
          {"seed", cfg.schedule.seed}}},
        {"layers", layers},
        {"footprint", footprint_to_json(outcome.footprint)},
    };
    return doc.dump(2);
}

std::string eval_metrics_json(const EvalMetrics& metrics) {
    nlohmann::json doc = {{"layer_weight_mse", metrics.layer_weight_mse},
                          {"output_mse", metrics.output_mse},
                          {"max_abs_deviation", metrics.max_abs_deviation},
                          {"top1_agreement", metrics.top1_agreement}};
    return doc.dump(2);
}

std::string footprint_json(const FootprintReport& report) {
    return footprint_to_json(report).dump(2);
}

} // namespace jlcm
