#include "jlcm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "jlcm/errors.hpp"

namespace jlcm {

double activate(Activation act, double x) {
    switch (act) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
    }
    throw std::invalid_argument("unknown activation");
}

double activate_derivative(Activation act, double x) {
    switch (act) {
        case Activation::identity: return 1.0;
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::gelu: {
            const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
            const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
            return cdf + x * pdf;
        }
    }
    throw std::invalid_argument("unknown activation");
}

void validate_model(const ModelContainer& model) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const LinearLayer& layer = model.layers[l];
        if (layer.n_out() == 0 || layer.n_in() == 0)
            throw IoError(IoError::Kind::bad_header,
                          "layer " + std::to_string(l) + " has an empty dimension");
        if (layer.has_bias() && layer.bias.size() != layer.n_out())
            throw IoError(IoError::Kind::bad_header,
                          "bias length mismatch at layer " + std::to_string(l));
        for (float v : layer.weights.data)
            if (!std::isfinite(v))
                throw IoError(IoError::Kind::non_finite,
                              "non-finite weight in layer " + std::to_string(l));
        for (float v : layer.bias)
            if (!std::isfinite(v))
                throw IoError(IoError::Kind::non_finite,
                              "non-finite bias in layer " + std::to_string(l));
        if (l + 1 < model.layers.size() && model.layers[l + 1].n_in() != layer.n_out())
            throw IoError(IoError::Kind::dim_incompat,
                          "dimension incompatibility at layer " + std::to_string(l + 1));
    }
}

// Rows of `in` are inputs, rows of the result are activations. Dot
// products accumulate in double.
Matf layer_forward(const LinearLayer& layer, const Matf& in) {
    const std::size_t batch = in.rows;
    const std::size_t n_out = layer.n_out();
    const std::size_t n_in = layer.n_in();
    if (in.cols != n_in) throw std::invalid_argument("input width does not match layer n_in");

    Matf out(batch, n_out);
    for (std::size_t b = 0; b < batch; ++b) {
        const float* x = &in.data[b * n_in];
        for (std::size_t o = 0; o < n_out; ++o) {
            const float* w = &layer.weights.data[o * n_in];
            double acc = layer.has_bias() ? double(layer.bias[o]) : 0.0;
            for (std::size_t i = 0; i < n_in; ++i) acc += double(w[i]) * double(x[i]);
            out(b, o) = float(activate(layer.activation, acc));
        }
    }
    return out;
}

Matf forward(const ModelContainer& model, const Matf& inputs, std::size_t upto_layer,
             Capture capture) {
    if (upto_layer >= model.layers.size())
        throw std::invalid_argument("upto_layer out of range");
    Matf x = inputs;
    for (std::size_t l = 0; l < upto_layer; ++l) x = layer_forward(model.layers[l], x);
    if (capture == Capture::pre_layer_input) {
        if (x.cols != model.layers[upto_layer].n_in())
            throw std::invalid_argument("input width does not match layer n_in");
        return x;
    }
    return layer_forward(model.layers[upto_layer], x);
}

Matf forward_all(const ModelContainer& model, const Matf& inputs) {
    if (model.layers.empty()) throw std::invalid_argument("model has no layers");
    return forward(model, inputs, model.layers.size() - 1, Capture::output);
}

ModelContainer apply_permutation(const ModelContainer& model, std::size_t layer,
                                 const std::vector<std::size_t>& sigma) {
    if (layer + 1 >= model.layers.size())
        throw std::invalid_argument("no successor: cannot re-order the last layer");
    const std::size_t n_out = model.layers[layer].n_out();
    if (sigma.size() != n_out) throw std::invalid_argument("sigma length != n_out");

    std::vector<char> seen(n_out, 0);
    for (std::size_t s : sigma) {
        if (s >= n_out || seen[s]) throw std::invalid_argument("sigma is not a permutation");
        seen[s] = 1;
    }

    ModelContainer out = model;
    const LinearLayer& src = model.layers[layer];
    LinearLayer& dst = out.layers[layer];
    for (std::size_t r = 0; r < n_out; ++r) {
        for (std::size_t c = 0; c < src.n_in(); ++c) dst.weights(sigma[r], c) = src.weights(r, c);
        if (src.has_bias()) dst.bias[sigma[r]] = src.bias[r];
    }
    const LinearLayer& next_src = model.layers[layer + 1];
    LinearLayer& next_dst = out.layers[layer + 1];
    for (std::size_t r = 0; r < next_src.n_out(); ++r)
        for (std::size_t c = 0; c < n_out; ++c) next_dst.weights(r, sigma[c]) = next_src.weights(r, c);
    return out;
}

} // namespace jlcm
