#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "eris/linalg.hpp"

namespace eris {

struct Margins {
    double domain = 1.0;       // m_D
    double label = 1.0;        // m_L1
    double repulsion = 1.0;    // m_L2

    void validate() const;
};

struct LossBreakdown {
    double l_dse = 0.0;
    double l_cl = 0.0;
    double l_proto = 0.0;
    double l_lse = 0.0;
    double l_ortho = 0.0;
    double l_reg = 0.0;
    double l_disc = 0.0;
    double l_total = 0.0;
};

/// Component values fed into loss_total.
struct LossParts {
    double l_dse = 0.0;
    double l_cl = 0.0;
    double l_proto = 0.0;
    double l_ortho = 0.0;
    double l_reg = 0.0;
    double l_disc = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Energy contrast: E[target] + Σ_{j≠target} max(0, margin − E[j]).
/// When `grad` is non-empty it receives ∂/∂E (hinges at exactly zero
/// contribute no gradient).
double contrastive_energy_loss(std::span<const double> energies, int target, double margin,
                               std::span<double> grad = {});

/// Domain energy contrast over E_d with margin m_D.
double loss_dse(std::span<const double> domain_energies, int true_domain, double margin,
                std::span<double> grad = {});
/// Label energy contrast over E_y with margin m_L1.
double loss_cl(std::span<const double> label_energies, int true_label, double margin,
               std::span<double> grad = {});

struct ProtoGrad {
    std::vector<double> d_feature;  // ∂/∂F0
    Matrix d_prototypes;            // ∂/∂P, N_C × b
};

/// ‖F0 − P_y‖² − (1/(N_C−1))·Σ_{y'≠y}(‖F0 − P_y'‖² + m_L2). Unbounded
/// below. With `repulsion_cap` > 0 each repelled squared distance is clamped
/// to at most that value (the clamp is off by default).
double loss_proto(std::span<const double> feature, const Matrix& prototypes, int true_label,
                  double margin, ProtoGrad* grad = nullptr, double repulsion_cap = 0.0);

/// loss_cl + loss_proto.
double loss_lse(std::span<const double> label_energies, std::span<const double> feature,
                const Matrix& prototypes, int true_label, const Margins& margins);

struct OrthoLoss {
    double value;
    Matrix grad_wd;  // 2·W_l·W_lᵀ·W_d
    Matrix grad_wl;  // 2·W_d·W_dᵀ·W_l
};

/// ‖W_dᵀW_l‖_F² and its gradients.
OrthoLoss loss_ortho(const Matrix& w_dom, const Matrix& w_lab);

/// KL(p_clean ‖ p_adv) with 0·ln(0/q) = 0. Both inputs must be probability
/// vectors (non-negative, summing to 1 within 1e-9).
double loss_reg(std::span<const double> p_clean, std::span<const double> p_adv);

/// KL(p_clean ‖ softmax(logits)) evaluated through log-softmax, so it stays
/// finite when the adversarial distribution underflows.
double loss_reg_logits(std::span<const double> p_clean, std::span<const double> logits);

/// Gradient of KL(p ‖ softmax(logits)) with respect to the logits: softmax(logits) − p.
std::vector<double> kl_logit_grad(std::span<const double> p_clean, std::span<const double> logits);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Softmax cross-entropy; `grad` receives softmax(logits) − onehot(target).
double loss_disc(std::span<const double> logits, int true_domain, std::span<double> grad = {});

/// l_total = λ1·l_dse + λ2·l_lse + l_ortho + l_reg + λ_adv·l_disc.
LossBreakdown loss_total(const LossParts& parts, double lambda1, double lambda2,
                         double lambda_adv);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central finite differences (f(x+eps) − f(x−eps)) / (2·eps) per coordinate
/// against `analytic`; relative error uses denominator
/// max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params, std::span<const double> analytic,
                           double eps);

}  // namespace eris
