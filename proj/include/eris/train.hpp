#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "eris/data.hpp"
#include "eris/losses.hpp"
#include "eris/model.hpp"

namespace eris {

struct TrainConfig {
    double lambda1 = 0.9;
    double lambda2 = 2.0;
    double lambda_adv = 0.1;
    Margins margins;
    double lr0 = 1e-4;
    double lr_decay = 0.1;
    int lr_step_epochs = 30;
    double weight_decay = 1e-5;
    std::size_t batch_size = 64;
    int epochs = 100;
    double adv_eps_max = 1.0;
    std::size_t adv_power_iters = 1;
    double adv_xi = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Cap on each repelled squared distance in the prototype loss; 0 = off.
    double repulsion_cap = 0.0;
    std::uint64_t seed = 0;
    InitScheme init = InitScheme::Fixed;
    bool enable_dse = true;
    bool enable_lse = true;
    bool enable_ortho = true;
    bool enable_ag = true;

    void validate() const;
};

/// Defaults above with the changes the small synthetic benchmark needs:
/// lr0 = 1e-3 (a few optimizer steps per epoch instead of thousands), a
/// prototype repulsion cap of 0.25 (the verbatim prototype loss is unbounded
/// below and otherwise inflates the features) and fan-in scaled init (the
/// fixed 0.05 init leaves F0 nearly rank one).
TrainConfig synthetic_benchmark_config();

/// Per-component multipliers of the batch objective. Training derives them
/// from TrainConfig; the gradient audit isolates one component at a time.
struct LossWeights {
    double dse = 0.0;
    double cl = 0.0;
    double proto = 0.0;
    double ortho = 0.0;
    double reg = 0.0;
    double disc = 0.0;

    static LossWeights from_config(const TrainConfig& cfg);
};

/// Latent perturbation and the clean predictive distribution it is measured
/// against. The clean distribution is a constant of the objective.
struct AdvSample {
    std::vector<double> r;
    std::vector<double> p_clean;
};

/// Supplies the AdvSample for batch position i given that sample's clean F0.
using AdvSource = std::function<AdvSample(std::size_t, std::span<const double>)>;

struct ObjectiveOptions {
    LossWeights weights;
    Margins margins;
    double repulsion_cap = 0.0;
    /// Negate the discriminator gradient that reaches the encoder.
    bool gradient_reversal = true;
};

struct BatchResult {
    LossBreakdown losses;     // components with zero weight are reported as 0
    std::size_t correct = 0;  // argmin C_y hits on the clean features
    /// Distance from the nearest kink (ReLU at 0, hinge at its margin) over
    /// every term that carries weight.
    double kink_margin = 0.0;
    std::vector<AdvSample> adv_used;  // filled when record_adv is set
};

/// Mean over the batch of every weighted component plus l_ortho. When
/// `grads` is non-null it receives the gradient of l_total.
BatchResult evaluate_batch(const ModelParams& params, const TimeSeriesDataset& batch,
                           const ObjectiveOptions& options, const AdvSource& adv,
                           ModelParams* grads, bool record_adv = false);

/// Power-iteration estimate of the KL-maximising latent direction, scaled
/// to length eps. Returns the zero vector for eps = 0 or a vanishing gradient.
std::vector<double> adv_perturbation(const ModelParams& params, std::span<const double> f0,
                                     double eps, std::size_t iters, Rng& rng, double xi = 1e-6);

/// lr0 · decay^⌊epoch / step⌋.
double lr_at(int epoch, const TrainConfig& cfg);
/// Linear ramp from 0 at the first epoch to adv_eps_max at the last.
double adv_eps_at(int epoch, const TrainConfig& cfg);

struct TrainState {
    ModelParams params;
    ModelParams adam_m;
    ModelParams adam_v;
    std::uint64_t step = 0;
    int epoch = 0;
    Rng rng;

    TrainState(ModelParams p, std::uint64_t seed);
};

/// One Adam step; weight decay is coupled into the gradient and skips the prototypes.
void adam_update(TrainState& state, const ModelParams& grads, double lr, const TrainConfig& cfg);

/// Forward, backward and one Adam step at the state's epoch. `correct`, when
/// given, receives the number of batch samples the pre-update model classifies correctly.
LossBreakdown train_step(TrainState& state, const TimeSeriesDataset& batch,
                         const TrainConfig& cfg, std::size_t* correct = nullptr);

struct EpochRecord {
    int epoch = 0;
    LossBreakdown losses;
    double lr = 0.0;
    double cross_norm = 0.0;  // ‖W_dᵀW_l‖_F after the epoch
    std::vector<double> prototype_norms;
    double train_acc = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct FitResult {
    ModelParams params;
    TrainHistory history;
    double initial_cross_norm = 0.0;  // before the first update
};

/// Sets every prototype to the mean F0 of its class (classes with no
/// samples keep their current prototype).
void init_prototypes(ModelParams& params, const TimeSeriesDataset& ds);

FitResult fit(const TimeSeriesDataset& train, const TrainConfig& cfg, const ArchConfig& arch);

/// CSV: epoch,l_dse,l_cl,l_proto,l_lse,l_ortho,l_reg,l_disc,l_total,lr,cross_norm,train_acc
/// followed by one proto_norm_k column per class.
void save_history(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace eris
