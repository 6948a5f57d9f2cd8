#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eris/data.hpp"
#include "eris/linalg.hpp"

namespace eris {

struct ArchConfig {
    std::size_t input_channels = 2;               // C_0
    std::size_t kernel = 5;                       // K, odd
    std::vector<std::size_t> conv_channels{16, 16};  // C_1..C_L
    std::size_t encoding_dim = 64;                // b, width of F0
    std::size_t projection_dim = 32;              // d, columns of W_d / W_l
    std::size_t mlp_hidden = 64;
    int num_classes = 4;
    int num_domains = 4;

    std::size_t conv_layers() const { return conv_channels.size(); }
    /// Channel count after the conv stack (C_L, or C_0 when L = 0).
    std::size_t pooled_channels() const;
    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

/// Fully connected layer in row-vector convention: y = x·w + b.
struct Dense {
    Matrix w;  // in × out
    Matrix b;  // 1 × out
    bool operator==(const Dense&) const = default;
};

/// ReLU between layers, linear output.
struct Mlp {
    std::vector<Dense> layers;
    std::size_t input_dim() const { return layers.front().w.rows(); }
    std::size_t output_dim() const { return layers.back().w.cols(); }
    bool operator==(const Mlp&) const = default;
};

struct ModelParams {
    ArchConfig arch;
    std::vector<Matrix> conv_w;  // layer l: C_l × (C_{l-1}·K), tap (i, k) at column i·K + k
    std::vector<Matrix> conv_b;  // layer l: 1 × C_l
    Dense encoder_out;           // pooled C_L -> b
    Matrix w_dom;                // W_d, b × d
    Matrix w_lab;                // W_l, b × d
    Mlp dom_energy;              // d -> h -> h -> N_d
    Mlp lab_energy;              // d -> h -> h -> N_y
    Matrix prototypes;           // N_y × b
    Dense variance;              // d -> N_d, outputs log σ_d²
    Mlp discriminator;           // b -> h -> N_d

    /// Visits every tensor in the fixed serialization order.
    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

    std::size_t parameter_count() const;
    /// Same layout, all entries zero (used as a gradient accumulator).
    ModelParams zeros_like() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> values);
    ModelParams& operator+=(const ModelParams& o);
    bool all_finite() const;
    bool operator==(const ModelParams&) const = default;
};

enum class InitScheme {
    Fixed,  // N(0, 0.05²) for every weight
    FanIn,  // N(0, 1/fan_in), keeps activations O(1) through the stack
};

/// Gaussian weights, zero biases, zero prototypes.
ModelParams init_params(const ArchConfig& arch, Rng& rng, InitScheme scheme = InitScheme::Fixed);

/// Counts multiply-accumulates executed by the forward pass it is passed to.
struct MacCounter {
    std::uint64_t conv = 0;
    std::uint64_t dense = 0;
    std::uint64_t distance = 0;  // prototype distances inside C_y
    std::uint64_t total() const { return conv + dense + distance; }
};

/// Activations retained by a single-sample encoder pass for backprop.
struct EncoderTrace {
    std::vector<Matrix> acts;  // acts[0] = input, acts[l] = post-ReLU output of layer l (C_l × N)
    std::vector<Matrix> pre;   // pre[l-1] = pre-activation of layer l
    Matrix pooled;             // 1 × C_L
    Matrix f0;                 // 1 × b
};

struct MlpTrace {
    std::vector<Matrix> inputs;  // input to each layer (post-ReLU of the previous one)
    std::vector<Matrix> pre;     // pre-activations of the hidden layers
    Matrix output;
};

/// Label-branch quantities for one feature row h.
struct LabelTrace {
    Matrix z;  // h·W_l
    MlpTrace mlp;
    std::vector<double> energies;     // E_y
    std::vector<double> consistency;  // C_y
};

struct DomainTrace {
    Matrix z;  // h·W_d
    MlpTrace mlp;
    std::vector<double> energies;  // E_d
};

struct EnergyScores {
    std::vector<double> domain;       // E_d
    std::vector<double> label;        // E_y
    std::vector<double> consistency;  // C_y
};

struct Prediction {
    int label;
    double confidence;
    std::vector<double> probs;
};

EncoderTrace encode_sample(const ModelParams& params, std::span<const double> sample,
                           std::size_t length, MacCounter* counter = nullptr);
/// F0 for every sample: [B × b].
Matrix encode(const ModelParams& params, const TimeSeriesDataset& batch);

MlpTrace mlp_forward(const Mlp& mlp, std::span<const double> input, MacCounter* counter = nullptr);
DomainTrace domain_forward(const ModelParams& params, std::span<const double> f0,
                           MacCounter* counter = nullptr);
LabelTrace label_forward(const ModelParams& params, std::span<const double> f0,
                         MacCounter* counter = nullptr);

std::vector<double> energy_domain(const ModelParams& params, std::span<const double> f0);
std::vector<double> energy_label(const ModelParams& params, std::span<const double> f0);
std::vector<double> consistency_error(const ModelParams& params, std::span<const double> f0);
EnergyScores energy_scores(const ModelParams& params, std::span<const double> f0);

/// probs = softmax(-C), label = argmin C, confidence = probs[label].
Prediction predict_from_consistency(std::span<const double> consistency);
Prediction predict(const ModelParams& params, std::span<const double> f0);

/// σ_d² = exp(variance(f0·W_d)).
std::vector<double> variance_head(const ModelParams& params, std::span<const double> f0);
std::vector<double> discriminate_domain(const ModelParams& params, std::span<const double> f0);

// Reverse-mode passes. Each adds parameter gradients into `grads` (same
// layout as params) and returns the gradient with respect to its input.
std::vector<double> mlp_backward(const Mlp& mlp, const MlpTrace& trace,
                                 std::span<const double> d_output, Mlp& grads);
/// Backprop of E_y and the prototype distance in C_y through the label
/// branch. Returns dL/dh.
std::vector<double> label_backward(const ModelParams& params, std::span<const double> f0,
                                   const LabelTrace& trace, std::span<const double> d_energy,
                                   std::span<const double> d_consistency, ModelParams& grads);
std::vector<double> domain_backward(const ModelParams& params, std::span<const double> f0,
                                    const DomainTrace& trace, std::span<const double> d_energy,
                                    ModelParams& grads);
void encoder_backward(const ModelParams& params, const EncoderTrace& trace,
                      std::span<const double> d_f0, ModelParams& grads);

/// dL/dh for a loss on C_y(h), without touching parameter gradients.
std::vector<double> consistency_input_gradient(const ModelParams& params,
                                               std::span<const double> h,
                                               const LabelTrace& trace,
                                               std::span<const double> d_consistency);

/// Smallest |pre-activation| seen at a ReLU in the traces; distance to the
/// nearest non-differentiable point.
double relu_margin(const EncoderTrace& trace);
double relu_margin(const MlpTrace& trace);

struct CostEstimate {
    std::uint64_t conv_macs = 0;          // Σ_l N·K·C_{l-1}·C_l
    std::uint64_t time_macs = 0;          // every MAC of one inference pass
    std::uint64_t nominal_time_macs = 0;  // conv_macs + b·h + h² + h·(N_y + N_d)
    std::uint64_t param_count = 0;        // exact size of ModelParams
    std::uint64_t nominal_param_count = 0;  // Σ K·C_{l-1}·C_l + b·h + h² + h·(N_y + N_d)
    std::uint64_t activation_count = 0;   // N·C_0 + b + 2·N_y + 2·N_d
};

/// Closed-form per-sample cost of a forward pass over a length-N input.
/// time_macs covers the inference path measured by MacCounter: encoder,
/// both projections, both energy heads and the prototype distances of C_y.
CostEstimate estimate_cost(const ArchConfig& arch, std::size_t length);

/// Runs the inference path (encode, E_d, E_y, C_y) on one sample with a MAC counter attached.
MacCounter count_inference_macs(const ModelParams& params, std::span<const double> sample,
                                std::size_t length);

void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace eris
