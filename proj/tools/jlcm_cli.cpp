#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "jlcm/container_io.hpp"
#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"
#include "jlcm/pipeline.hpp"
#include "jlcm/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A model argument may be a compressed file or a plain container.
struct LoadedModel {
    std::optional<jlcm::CompressedModel> compressed;
    jlcm::ModelContainer container;
};

LoadedModel load_any_model(const std::string& path) {
    LoadedModel m;
    try {
        m.compressed = jlcm::deserialize_compressed(path);
        m.container = jlcm::decompress_model(*m.compressed);
        return m;
    } catch (const jlcm::IoError& e) {
        if (e.kind() != jlcm::IoError::Kind::bad_magic) throw;
    }
    m.container = jlcm::load_container(path);
    return m;
}

jlcm::Matf eval_inputs(const jlcm::ModelContainer& model, const std::string& calib_path,
                       std::uint64_t seed) {
    if (!calib_path.empty()) return jlcm::load_calibration(calib_path).inputs;
    jlcm::Rng rng(jlcm::mix_seed(seed, 0xe7a1));
    jlcm::Matf inputs(64, model.layers.front().n_in());
    for (float& v : inputs.data) v = float(rng.gaussian());
    return inputs;
}

int run_compress(const std::string& model_path, const std::string& calib_path, double alpha,
                 const std::string& mode_name, const std::string& clustering_name, bool optimize,
                 std::size_t iters, std::uint64_t seed, const std::string& out_path,
                 const std::string& report_path, const std::string& traces_dir, bool json) {
    if (!(alpha > 1.0)) throw UsageError("alpha must exceed 1");
    if (alpha > 16.0) throw UsageError("alpha must not exceed 16");
    if (optimize && calib_path.empty())
        throw UsageError("--calib is required when --optimize is true");

    jlcm::RunConfig cfg;
    cfg.alpha = alpha;
    cfg.mode = jlcm::mode_choice_from_name(mode_name);
    cfg.method = jlcm::clustering::method_from_name(clustering_name);
    cfg.optimize = optimize;
    cfg.schedule.iterations = iters;
    cfg.schedule.seed = seed;

    const jlcm::ModelContainer model = jlcm::load_container(model_path);
    std::optional<jlcm::CalibrationSet> calib;
    if (!calib_path.empty()) calib = jlcm::load_calibration(calib_path);

    const jlcm::CompressionOutcome outcome =
        jlcm::compress_model(model, calib ? &*calib : nullptr, cfg);
    jlcm::serialize_compressed(outcome.compressed, out_path);

    const std::string report = jlcm::run_report_json(cfg, outcome);
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw jlcm::IoError(jlcm::IoError::Kind::io_failure,
                                      "cannot open " + report_path + " for writing");
        out << report << '\n';
    }
    if (!traces_dir.empty() && optimize) {
        std::filesystem::create_directories(traces_dir);
        for (std::size_t l = 0; l < outcome.traces.size(); ++l)
            jlcm::write_trace_csv(traces_dir + "/trace_layer_" + std::to_string(l) + ".csv",
                                  outcome.traces[l]);
    }

    if (json) {
        std::cout << report << '\n';
    } else {
        std::printf("compressed %zu layers -> %s\n", outcome.compressed.layers.size(),
                    out_path.c_str());
        std::printf("alpha requested %.4f, achieved %.4f (weights-only %.4f)\n", alpha,
                    outcome.footprint.alpha_achieved, outcome.footprint.alpha_weights);
        for (const jlcm::LayerReport& r : outcome.layers)
            std::printf("layer %zu: %zux%zu %s codebook=%zu groups=%zu init_mse=%.3e final_mse=%.3e\n",
                        r.index, r.n_o, r.n_i, jlcm::plan_mode_name(r.plan.mode),
                        r.plan.codebook_size,
                        r.plan.mode == jlcm::PlanMode::multi_codebook ? r.plan.num_codebooks
                                                                      : r.plan.num_scales,
                        r.init_weight_mse, r.final_weight_mse);
    }
    return kExitOk;
}

int run_eval(const std::string& model_path, const std::string& compressed_path,
             const std::string& calib_path, std::uint64_t seed, bool json) {
    const jlcm::ModelContainer original = jlcm::load_container(model_path);
    const LoadedModel candidate = load_any_model(compressed_path);
    const jlcm::Matf inputs = eval_inputs(original, calib_path, seed);
    const jlcm::EvalMetrics metrics = jlcm::evaluate(original, candidate.container, inputs);

    if (json) {
        std::cout << jlcm::eval_metrics_json(metrics) << '\n';
    } else {
        std::printf("output_mse %.6e\nmax_abs_deviation %.6e\ntop1_agreement %.4f\n",
                    metrics.output_mse, metrics.max_abs_deviation, metrics.top1_agreement);
        for (std::size_t l = 0; l < metrics.layer_weight_mse.size(); ++l)
            std::printf("layer %zu weight_mse %.6e\n", l, metrics.layer_weight_mse[l]);
    }
    return kExitOk;
}

int run_footprint(const std::string& model_path, const std::string& original_path,
                  std::uint64_t capacity_bytes, bool json) {
    const LoadedModel m = load_any_model(model_path);
    jlcm::FootprintReport report;
    if (m.compressed) {
        const jlcm::ModelContainer original =
            original_path.empty() ? m.container : jlcm::load_container(original_path);
        report = jlcm::measure_footprint(*m.compressed, original);
    } else {
        report = jlcm::measure_footprint(m.container);
    }

    if (json) {
        nlohmann::json doc = nlohmann::json::parse(jlcm::footprint_json(report));
        if (capacity_bytes > 0) {
            doc["capacity_bytes"] = capacity_bytes;
            doc["fits"] = report.m_total_bits <= capacity_bytes * 8;
            doc["alpha_required"] = double(report.m_ref_bits) / double(capacity_bytes * 8);
        }
        std::cout << doc.dump(2) << '\n';
    } else {
        std::printf("M_W %llu bits, M_A %llu bits, M %llu bits, M_ref %llu bits\n",
                    (unsigned long long)report.m_w_bits, (unsigned long long)report.m_a_bits,
                    (unsigned long long)report.m_total_bits,
                    (unsigned long long)report.m_ref_bits);
        std::printf("alpha_achieved %.4f (weights-only %.4f)\n", report.alpha_achieved,
                    report.alpha_weights);
        if (capacity_bytes > 0) {
            const bool fits = report.m_total_bits <= capacity_bytes * 8;
            std::printf("capacity %llu bytes -> fits: %s (needs alpha > %.4f)\n",
                        (unsigned long long)capacity_bytes, fits ? "true" : "false",
                        double(report.m_ref_bits) / double(capacity_bytes * 8));
        }
    }
    return kExitOk;
}

// Synthetic demo model: gaussian dense stack with relu between layers.
int run_gen(const std::string& dims_text, const std::string& out_path,
            const std::string& calib_out, std::size_t batch, std::uint64_t seed) {
    std::vector<std::size_t> dims;
    std::stringstream ss(dims_text);
    std::string part;
    while (std::getline(ss, part, ','))
        dims.push_back(std::size_t(std::stoul(part)));
    if (dims.size() < 2) throw UsageError("--dims needs at least two comma-separated widths");

    jlcm::ModelContainer model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        jlcm::LinearLayer layer;
        const std::size_t n_i = dims[l], n_o = dims[l + 1];
        jlcm::Rng rng(jlcm::mix_seed(seed, l));
        layer.weights = jlcm::Matf(n_o, n_i);
        const double scale = 1.0 / std::sqrt(double(n_i));
        for (float& v : layer.weights.data) v = float(rng.gaussian() * scale);
        layer.bias.resize(n_o);
        for (float& b : layer.bias) b = float(rng.gaussian() * 0.1);
        layer.activation =
            l + 2 < dims.size() ? jlcm::Activation::relu : jlcm::Activation::identity;
        model.layers.push_back(std::move(layer));
    }
    jlcm::save_container(model, out_path, jlcm::StorageType::f32);

    if (!calib_out.empty()) {
        jlcm::CalibrationSet calib;
        jlcm::Rng rng(jlcm::mix_seed(seed, 0xca11b));
        calib.inputs = jlcm::Matf(batch, dims.front());
        for (float& v : calib.inputs.data) v = float(rng.gaussian());
        jlcm::save_calibration(calib, calib_out);
    }
    std::printf("wrote %s (%zu layers)%s%s\n", out_path.c_str(), model.layers.size(),
                calib_out.empty() ? "" : " and ", calib_out.c_str());
    return kExitOk;
}

int run_inspect(const std::string& model_path, bool json) {
    const jlcm::CompressedModel model = jlcm::deserialize_compressed(model_path);
    if (json) {
        std::string out = "[";
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            const jlcm::CompressedLayer& cl = model.layers[l];
            out += (l ? ",{" : "{");
            out += "\"layer\":" + std::to_string(l);
            out += ",\"mode\":\"" + std::string(jlcm::plan_mode_name(cl.mode)) + "\"";
            out += ",\"n_o\":" + std::to_string(cl.n_o) + ",\"n_i\":" + std::to_string(cl.n_i);
            out += ",\"codebook_size\":" + std::to_string(cl.codebook_size);
            out += ",\"num_codebooks\":" + std::to_string(cl.num_codebooks);
            out += ",\"num_scales\":" + std::to_string(cl.num_scales) + "}";
        }
        out += "]";
        std::cout << out << '\n';
        return kExitOk;
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const jlcm::CompressedLayer& cl = model.layers[l];
        std::printf("layer %zu: %s %ux%u, codebook_size %u, bits %u, k %u, scales %u\n", l,
                    jlcm::plan_mode_name(cl.mode), cl.n_o, cl.n_i, cl.codebook_size,
                    cl.bits_per_index(), cl.num_codebooks, cl.num_scales);
        for (std::size_t g = 0; g < cl.num_codebooks; ++g) {
            std::vector<float> values;
            for (std::size_t j = 0; j < cl.codebook_size; ++j)
                values.push_back(jlcm::half_bits_to_float(cl.codewords[g * cl.codebook_size + j]));
            std::sort(values.begin(), values.end());
            std::printf("  codebook %zu:", g);
            for (float v : values) std::printf(" %g", v);
            std::printf("\n");
        }
        if (cl.num_scales > 0) {
            std::printf("  scales:");
            for (std::uint16_t s : cl.scales) std::printf(" %g", jlcm::half_bits_to_float(s));
            std::printf("\n");
        }
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"codebook compression of dense weight stacks"};
    app.require_subcommand(1);

    // compress
    std::string model_path, calib_path, out_path, report_path, traces_dir;
    double alpha = 3.9;
    std::string mode_name = "auto";
    std::string clustering_name = "hierarchical";
    bool optimize = true;
    std::size_t iters = 10000;
    std::uint64_t seed = 12345;
    bool json = false;

    CLI::App* compress = app.add_subcommand("compress", "compress a model container");
    compress->add_option("--model", model_path)->required();
    compress->add_option("--calib", calib_path);
    compress->add_option("--alpha", alpha, "target compression ratio (1, 16]");
    compress->add_option("--mode", mode_name)
        ->check(CLI::IsMember({"auto", "multi-scale", "multi-codebook"}));
    compress->add_option("--clustering", clustering_name)
        ->check(CLI::IsMember({"random", "kmeans", "bisecting", "graph", "hierarchical"}));
    compress->add_option("--optimize", optimize, "joint optimization after init (default true)");
    compress->add_option("--iters", iters);
    compress->add_option("--seed", seed);
    compress->add_option("--out", out_path)->required();
    compress->add_option("--report", report_path, "write the JSON run report here");
    compress->add_option("--traces", traces_dir, "write per-layer loss CSVs here");
    compress->add_flag("--json", json, "print the JSON report to stdout");

    // eval
    std::string eval_model, eval_compressed, eval_calib;
    std::uint64_t eval_seed = 12345;
    bool eval_json = false;
    CLI::App* eval = app.add_subcommand("eval", "compare a compressed model to its original");
    eval->add_option("--model", eval_model)->required();
    eval->add_option("--compressed", eval_compressed)->required();
    eval->add_option("--calib", eval_calib, "inputs for the comparison (random if omitted)");
    eval->add_option("--seed", eval_seed);
    eval->add_flag("--json", eval_json);

    // footprint
    std::string fp_model, fp_original;
    std::uint64_t capacity = 0;
    bool fp_json = false;
    CLI::App* footprint = app.add_subcommand("footprint", "report memory footprint and fit");
    footprint->add_option("--model", fp_model)->required();
    footprint->add_option("--original", fp_original, "original container for M_ref");
    footprint->add_option("--capacity", capacity, "device memory in bytes");
    footprint->add_flag("--json", fp_json);

    // inspect
    std::string in_model;
    bool in_json = false;
    CLI::App* inspect = app.add_subcommand("inspect", "dump per-layer plans and codebooks");
    inspect->add_option("--model", in_model)->required();
    inspect->add_flag("--json", in_json);

    // gen
    std::string gen_dims = "16,24,8", gen_out, gen_calib;
    std::size_t gen_batch = 32;
    std::uint64_t gen_seed = 12345;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic demo model");
    gen->add_option("--dims", gen_dims, "comma-separated layer widths, input first");
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--calib-out", gen_calib, "also write a calibration file");
    gen->add_option("--batch", gen_batch, "calibration batch size");
    gen->add_option("--seed", gen_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (compress->parsed())
            return run_compress(model_path, calib_path, alpha, mode_name, clustering_name,
                                optimize, iters, seed, out_path, report_path, traces_dir, json);
        if (eval->parsed()) return run_eval(eval_model, eval_compressed, eval_calib, eval_seed, eval_json);
        if (footprint->parsed()) return run_footprint(fp_model, fp_original, capacity, fp_json);
        if (inspect->parsed()) return run_inspect(in_model, in_json);
        if (gen->parsed()) return run_gen(gen_dims, gen_out, gen_calib, gen_batch, gen_seed);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const jlcm::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const jlcm::IoError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
