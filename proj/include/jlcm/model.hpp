#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jlcm/matrix.hpp"

namespace jlcm {

enum class Activation : std::uint8_t { identity = 0, relu = 1, gelu = 2 };

double activate(Activation act, double x);
double activate_derivative(Activation act, double x);

// One dense layer: weights are n_out x n_in, bias is optional (empty or
// length n_out). All values finite f32.
struct LinearLayer {
    Matf weights;
    std::vector<float> bias;
    Activation activation = Activation::identity;

    std::size_t n_out() const { return weights.rows; }
    std::size_t n_in() const { return weights.cols; }
    bool has_bias() const { return !bias.empty(); }
};

enum class StorageType : std::uint8_t { f32 = 0, f16 = 1 };

// Sequential stack of dense layers. Immutable after load; operations on
// it return new containers instead of mutating.
struct ModelContainer {
    std::vector<LinearLayer> layers;
    std::string name;
    StorageType dtype_stored = StorageType::f32;

    std::size_t num_layers() const { return layers.size(); }
};

// Inputs for layer-wise calibration: B x n_in of the first layer.
struct CalibrationSet {
    Matf inputs;
    std::size_t batch_size() const { return inputs.rows; }
};

// Throws IoError on empty layers, shape mismatch between adjacent layers,
// or non-finite values.
void validate_model(const ModelContainer& model);

enum class Capture : std::uint8_t { pre_layer_input, output };

// Evaluates x <- act(Wx + b) layer by layer on a batch (rows are inputs).
// capture = pre_layer_input returns the features entering `upto_layer`
// (the raw inputs when upto_layer == 0); capture = output returns the
// post-activation output of `upto_layer`. f32 values, f64 accumulation.
Matf forward(const ModelContainer& model, const Matf& inputs, std::size_t upto_layer,
             Capture capture);

// Output of the last layer.
Matf forward_all(const ModelContainer& model, const Matf& inputs);

// One layer applied to a batch; the building block of forward.
Matf layer_forward(const LinearLayer& layer, const Matf& inputs);

// Re-orders the output neurons of `layer` (rows of its weights plus bias)
// by sigma and the input columns of layer+1 by the same sigma, leaving the
// end-to-end function unchanged. sigma maps old row index -> new position.
// Throws if `layer` has no successor or sigma is not a permutation.
ModelContainer apply_permutation(const ModelContainer& model, std::size_t layer,
                                 const std::vector<std::size_t>& sigma);

} // namespace jlcm
