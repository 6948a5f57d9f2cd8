#include "eris/orthoflow.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace eris {

namespace {

void log_state(FlowTrajectory& traj, double t, const Matrix& wd, const Matrix& wl, double loss) {
    traj.times.push_back(t);
    traj.ortho_loss.push_back(loss);
    traj.frob_wd.push_back(frob_norm(wd));
    traj.frob_wl.push_back(frob_norm(wl));
    traj.frob_cross.push_back(std::sqrt(loss));
}

}  // namespace

std::pair<Matrix, Matrix> flow_step(const Matrix& w_dom, const Matrix& w_lab, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("flow_step: dt must be positive");
    if (w_dom.rows() != w_lab.rows() || w_dom.cols() != w_lab.cols()) {
        throw DimensionError("flow_step: W_d is " + w_dom.shape_str() + " but W_l is " +
                             w_lab.shape_str());
    }
    const Matrix cross = matmul_tn(w_dom, w_lab);
    Matrix next_d = w_dom - (2.0 * dt) * matmul_nt(w_lab, cross);
    Matrix next_l = w_lab - (2.0 * dt) * matmul(w_dom, cross);
    if (!all_finite(next_d) || !all_finite(next_l)) {
        throw FlowDivergence("flow_step: non-finite update at dt=" + std::to_string(dt));
    }
    return {std::move(next_d), std::move(next_l)};
}

double flow_loss_derivative(const Matrix& w_dom, const Matrix& w_lab) {
    const Matrix cross = matmul_tn(w_dom, w_lab);
    const Matrix a = matmul_nt(w_lab, cross);  // W_l·W_lᵀ·W_d
    const Matrix b = matmul(w_dom, cross);     // W_d·W_dᵀ·W_l
    return -4.0 * frob_norm_sq(a) - 4.0 * frob_norm_sq(b);
}

FlowTrajectory simulate_flow(const Matrix& w_dom0, const Matrix& w_lab0,
                             const FlowOptions& options) {
    if (!(options.dt > 0.0)) throw std::invalid_argument("simulate_flow: dt must be positive");
    if (options.log_every == 0) throw std::invalid_argument("simulate_flow: log_every must be >= 1");
    if (w_dom0.rows() != w_lab0.rows() || w_dom0.cols() != w_lab0.cols()) {
        throw DimensionError("simulate_flow: W_d is " + w_dom0.shape_str() + " but W_l is " +
                             w_lab0.shape_str());
    }

    Matrix wd = w_dom0;
    Matrix wl = w_lab0;
    Matrix cross = matmul_tn(wd, wl);
    double loss = frob_norm_sq(cross);
    double dt = options.dt;
    double t = 0.0;

    FlowTrajectory traj;
    log_state(traj, t, wd, wl, loss);

    for (std::size_t step = 1; step <= options.steps; ++step) {
        const Matrix grad_d = matmul_nt(wl, cross);
        const Matrix grad_l = matmul(wd, cross);
        while (true) {
            Matrix next_d = wd - (2.0 * dt) * grad_d;
            Matrix next_l = wl - (2.0 * dt) * grad_l;
            Matrix next_cross = matmul_tn(next_d, next_l);
            const double next_loss = frob_norm_sq(next_cross);
            if (std::isfinite(next_loss) && next_loss <= loss + options.increase_tolerance) {
                wd = std::move(next_d);
                wl = std::move(next_l);
                cross = std::move(next_cross);
                loss = next_loss;
                break;
            }
            if (++traj.dt_halvings > options.max_halvings) {
                throw FlowDivergence("simulate_flow: loss still increasing after " +
                                     std::to_string(options.max_halvings) +
                                     " dt halvings at step " + std::to_string(step));
            }
            dt *= 0.5;
        }
        t += dt;
        if (step % options.log_every == 0 || step == options.steps) log_state(traj, t, wd, wl, loss);
    }
    traj.final_dt = dt;
    return traj;
}

CertReport verify_lemma(const FlowTrajectory& traj, double tol) {
    CertReport r;
    if (traj.size() == 0) return r;
    r.initial_loss = traj.ortho_loss.front();
    r.final_loss = traj.ortho_loss.back();
    r.final_cross_norm = traj.frob_cross.back();
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const double inc = traj.ortho_loss[i] - traj.ortho_loss[i - 1];
        if (inc > r.max_increase) r.max_increase = inc;
        if (inc > tol && !r.violating_index) r.violating_index = i;
    }
    r.monotone = !r.violating_index.has_value();
    r.converged = r.final_cross_norm <= tol;
    r.certified = r.monotone && r.converged;
    return r;
}

void save_trajectory(const FlowTrajectory& traj, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_trajectory: cannot open " + path.string());
    out << "t,ortho_loss,frob_Wd,frob_Wl,frob_cross\n";
    char buf[160];
    for (std::size_t i = 0; i < traj.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", traj.times[i],
                      traj.ortho_loss[i], traj.frob_wd[i], traj.frob_wl[i], traj.frob_cross[i]);
        out << buf;
    }
    if (!out) throw std::runtime_error("save_trajectory: write failed for " + path.string());
}

}  // namespace eris
