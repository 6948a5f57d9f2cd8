#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eris/linalg.hpp"

namespace eris {

/// Samples of the orthogonality gradient flow. ortho_loss is ‖W_dᵀW_l‖_F².
struct FlowTrajectory {
    std::vector<double> times;
    std::vector<double> ortho_loss;
    std::vector<double> frob_wd;     // ‖W_d‖_F
    std::vector<double> frob_wl;     // ‖W_l‖_F
    std::vector<double> frob_cross;  // ‖W_dᵀW_l‖_F
    std::size_t dt_halvings = 0;
    double final_dt = 0.0;

    std::size_t size() const { return times.size(); }
};

class FlowDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One explicit Euler step of Ẇ_d = −2·W_l·W_lᵀ·W_d, Ẇ_l = −2·W_d·W_dᵀ·W_l,
/// with both right-hand sides evaluated at the pre-step state.
std::pair<Matrix, Matrix> flow_step(const Matrix& w_dom, const Matrix& w_lab, double dt);

/// d/dt ‖W_dᵀW_l‖_F² along the flow: −4‖W_l·W_lᵀ·W_d‖_F² − 4‖W_d·W_dᵀ·W_l‖_F².
double flow_loss_derivative(const Matrix& w_dom, const Matrix& w_lab);

struct FlowOptions {
    double dt = 1e-3;
    std::size_t steps = 200000;
    std::size_t log_every = 100;
    /// A step whose loss exceeds the previous loss by more than this is
    /// rejected and retried with half the step size.
    double increase_tolerance = 0.0;
    std::size_t max_halvings = 20;
};

/// Integrates the flow for `steps` accepted steps, halving dt (permanently)
/// whenever a step would increase the loss. The first and last states are
/// always logged.
FlowTrajectory simulate_flow(const Matrix& w_dom0, const Matrix& w_lab0,
                             const FlowOptions& options = {});

struct CertReport {
    double max_increase = 0.0;  // largest ortho_loss[i+1] − ortho_loss[i], 0 if none
    std::optional<std::size_t> violating_index;  // first i+1 with an increase above tol
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double final_cross_norm = 0.0;
    bool monotone = true;
    bool converged = false;  // final_cross_norm <= tol
    bool certified = false;  // monotone && converged
};

CertReport verify_lemma(const FlowTrajectory& traj, double tol);

/// CSV with header t,ortho_loss,frob_Wd,frob_Wl,frob_cross.
void save_trajectory(const FlowTrajectory& traj, const std::filesystem::path& path);

}  // namespace eris
