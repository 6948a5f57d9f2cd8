#include "eris/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eris {

namespace {

void require_index(int index, std::size_t n, const char* what) {
    if (index < 0 || static_cast<std::size_t>(index) >= n) {
        throw std::out_of_range(std::string(what) + " " + std::to_string(index) +
                                " outside [0, " + std::to_string(n) + ")");
    }
}

void require_distribution(std::span<const double> p, const char* name) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string("loss_reg: ") + name +
                                        " has a negative or non-finite entry");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument(std::string("loss_reg: ") + name + " sums to " +
                                    std::to_string(sum) + ", not 1");
    }
}

}  // namespace

void Margins::validate() const {
    if (!(domain >= 0.0) || !(label >= 0.0) || !(repulsion >= 0.0)) {
        throw std::invalid_argument("Margins: all margins must be non-negative");
    }
}

double contrastive_energy_loss(std::span<const double> energies, int target, double margin,
                               std::span<double> grad) {
    require_index(target, energies.size(), "target index");
    const auto t = static_cast<std::size_t>(target);
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    double loss = energies[t];
    if (!grad.empty()) grad[t] = 1.0;
    for (std::size_t j = 0; j < energies.size(); ++j) {
        if (j == t) continue;
        const double slack = margin - energies[j];
        if (slack > 0.0) {
            loss += slack;
            if (!grad.empty()) grad[j] = -1.0;
        }
    }
    return loss;
}

double loss_dse(std::span<const double> domain_energies, int true_domain, double margin,
                std::span<double> grad) {
    return contrastive_energy_loss(domain_energies, true_domain, margin, grad);
}

double loss_cl(std::span<const double> label_energies, int true_label, double margin,
               std::span<double> grad) {
    return contrastive_energy_loss(label_energies, true_label, margin, grad);
}

double loss_proto(std::span<const double> feature, const Matrix& prototypes, int true_label,
                  double margin, ProtoGrad* grad, double repulsion_cap) {
    const std::size_t nc = prototypes.rows();
    if (nc < 2) throw std::invalid_argument("prototype loss undefined for single class");
    require_index(true_label, nc, "true label");
    if (feature.size() != prototypes.cols()) {
        throw DimensionError("loss_proto: feature width " + std::to_string(feature.size()) +
                             " vs prototype width " + std::to_string(prototypes.cols()));
    }
    const auto y = static_cast<std::size_t>(true_label);
    const double inv = 1.0 / static_cast<double>(nc - 1);
    const std::size_t b = feature.size();

    if (grad) {
        grad->d_feature.assign(b, 0.0);
        grad->d_prototypes = Matrix(nc, b);
    }

    double attract = squared_distance(feature, prototypes.row(y));
    double repel = 0.0;
    for (std::size_t k = 0; k < nc; ++k) {
        if (k == y) continue;
        double dist = squared_distance(feature, prototypes.row(k));
        bool clamped = false;
        if (repulsion_cap > 0.0 && dist > repulsion_cap) {
            dist = repulsion_cap;
            clamped = true;
        }
        repel += dist + margin;
        if (grad && !clamped) {
            auto pk = prototypes.row(k);
            auto gk = grad->d_prototypes.row(k);
            for (std::size_t j = 0; j < b; ++j) {
                const double g = -inv * 2.0 * (feature[j] - pk[j]);
                grad->d_feature[j] += g;
                gk[j] -= g;
            }
        }
    }
    if (grad) {
        auto py = prototypes.row(y);
        auto gy = grad->d_prototypes.row(y);
        for (std::size_t j = 0; j < b; ++j) {
            const double g = 2.0 * (feature[j] - py[j]);
            grad->d_feature[j] += g;
            gy[j] -= g;
        }
    }
    return attract - inv * repel;
}

double loss_lse(std::span<const double> label_energies, std::span<const double> feature,
                const Matrix& prototypes, int true_label, const Margins& margins) {
    return loss_cl(label_energies, true_label, margins.label) +
           loss_proto(feature, prototypes, true_label, margins.repulsion);
}

OrthoLoss loss_ortho(const Matrix& w_dom, const Matrix& w_lab) {
    if (w_dom.rows() != w_lab.rows() || w_dom.cols() != w_lab.cols()) {
        throw DimensionError("loss_ortho: W_d is " + w_dom.shape_str() + " but W_l is " +
                             w_lab.shape_str());
    }
    const Matrix cross = matmul_tn(w_dom, w_lab);  // W_dᵀW_l, d × d
    OrthoLoss out;
    out.value = frob_norm_sq(cross);
    // ∂/∂W_d = 2·W_l·(W_dᵀW_l)ᵀ = 2·W_l·W_lᵀ·W_d, and symmetrically for W_l.
    out.grad_wd = 2.0 * matmul_nt(w_lab, cross);
    out.grad_wl = 2.0 * matmul(w_dom, cross);
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

double loss_reg(std::span<const double> p_clean, std::span<const double> p_adv) {
    if (p_clean.size() != p_adv.size()) {
        throw DimensionError("loss_reg: distributions have lengths " +
                             std::to_string(p_clean.size()) + " and " +
                             std::to_string(p_adv.size()));
    }
    require_distribution(p_clean, "p_clean");
    require_distribution(p_adv, "p_adv");
    double kl = 0.0;
    for (std::size_t i = 0; i < p_clean.size(); ++i) {
        if (p_clean[i] == 0.0) continue;
        kl += p_clean[i] * std::log(p_clean[i] / p_adv[i]);
    }
    // Rounding can push a true zero slightly negative.
    return std::max(kl, 0.0);
}

double loss_reg_logits(std::span<const double> p_clean, std::span<const double> logits) {
    if (p_clean.size() != logits.size()) {
        throw DimensionError("loss_reg_logits: distribution has length " +
                             std::to_string(p_clean.size()) + ", logits " +
                             std::to_string(logits.size()));
    }
    require_distribution(p_clean, "p_clean");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    double kl = 0.0;
    for (std::size_t i = 0; i < p_clean.size(); ++i) {
        if (p_clean[i] == 0.0) continue;
        kl += p_clean[i] * (std::log(p_clean[i]) - (logits[i] - log_z));
    }
    return std::max(kl, 0.0);
}

std::vector<double> kl_logit_grad(std::span<const double> p_clean,
                                  std::span<const double> logits) {
    auto q = softmax(logits);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] -= p_clean[i];
    return q;
}

double loss_disc(std::span<const double> logits, int true_domain, std::span<double> grad) {
    require_index(true_domain, logits.size(), "true domain");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    if (!grad.empty()) {
        for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - log_z);
        grad[static_cast<std::size_t>(true_domain)] -= 1.0;
    }
    return log_z - logits[static_cast<std::size_t>(true_domain)];
}

LossBreakdown loss_total(const LossParts& parts, double lambda1, double lambda2,
                         double lambda_adv) {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(lambda_adv >= 0.0)) {
        throw std::invalid_argument("loss_total: loss weights must be non-negative");
    }
    LossBreakdown b;
    b.l_dse = parts.l_dse;
    b.l_cl = parts.l_cl;
    b.l_proto = parts.l_proto;
    b.l_lse = parts.l_cl + parts.l_proto;
    b.l_ortho = parts.l_ortho;
    b.l_reg = parts.l_reg;
    b.l_disc = parts.l_disc;
    b.l_total = lambda1 * b.l_dse + lambda2 * b.l_lse + b.l_ortho + b.l_reg;
    if (lambda_adv != 0.0) b.l_total += lambda_adv * b.l_disc;
    return b;
}

GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params, std::span<const double> analytic,
                           double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
    if (analytic.size() != params.size()) {
        throw DimensionError("grad_check: gradient length does not match parameter count");
    }
    std::vector<double> x(params.begin(), params.end());
    if (!std::isfinite(loss_fn(x))) throw NonFiniteLoss("grad_check: non-finite loss at base point");
    GradCheckResult res;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double fp = loss_fn(x);
        x[i] = orig - eps;
        const double fm = loss_fn(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NonFiniteLoss("grad_check: non-finite loss at coordinate " + std::to_string(i));
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (i == 0 || rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
            res.worst_analytic = analytic[i];
            res.worst_numeric = numeric;
        }
    }
    return res;
}

}  // namespace eris
