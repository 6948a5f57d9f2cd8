#pragma once

// Finite-difference audit of evaluate_batch gradients, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eris/data.hpp"
#include "eris/losses.hpp"
#include "eris/train.hpp"

namespace audit {

inline eris::ArchConfig tiny_arch() {
    eris::ArchConfig a;
    a.input_channels = 2;
    a.kernel = 3;
    a.conv_channels = {3};
    a.encoding_dim = 4;
    a.projection_dim = 3;
    a.mlp_hidden = 4;
    a.num_classes = 3;
    a.num_domains = 3;
    return a;
}

struct Component {
    std::string name;
    eris::LossWeights weights;
};

inline std::vector<Component> components() {
    const auto full = eris::LossWeights::from_config(eris::TrainConfig{});
    std::vector<Component> out;
    eris::LossWeights w;
    w = {};
    w.dse = 1.0;
    out.push_back({"l_dse", w});
    w = {};
    w.cl = 1.0;
    out.push_back({"l_cl", w});
    w = {};
    w.proto = 1.0;
    out.push_back({"l_proto", w});
    w = {};
    w.ortho = 1.0;
    out.push_back({"l_ortho", w});
    w = {};
    w.reg = 1.0;
    out.push_back({"l_reg", w});
    w = {};
    w.disc = 1.0;
    out.push_back({"l_disc", w});
    out.push_back({"l_total", full});
    return out;
}

/// One random (params, batch, perturbation) draw.
struct Draw {
    eris::ModelParams params;
    eris::TimeSeriesDataset batch;
    std::vector<eris::AdvSample> adv;
    double repulsion_cap = 0.0;
};

inline Draw make_draw(eris::Rng rng) {
    const auto arch = tiny_arch();
    Draw d;
    eris::Rng init = rng.split(0);
    d.params = eris::init_params(arch, init, eris::InitScheme::FanIn);
    eris::Rng extra = rng.split(1);
    d.params.prototypes = eris::sample_normal(extra, d.params.prototypes.rows(),
                                              d.params.prototypes.cols(), 1.0);
    d.repulsion_cap = extra.uniform() < 0.5 ? 0.0 : 0.5;

    eris::SyntheticConfig sc;
    sc.num_classes = arch.num_classes;
    sc.num_domains = arch.num_domains;
    sc.channels = arch.input_channels;
    sc.length = 8;
    sc.samples_per_domain_class = 1;
    sc.seed = rng.split(2).next_u64();
    const auto all = eris::gen_synthetic(sc);
    std::vector<std::size_t> idx;
    eris::Rng pick = rng.split(3);
    for (int i = 0; i < 5; ++i) idx.push_back(static_cast<std::size_t>(pick.below(all.size())));
    d.batch = all.subset(idx);

    // Perturbations and clean distributions are drawn once and held fixed.
    eris::Rng adv_rng = rng.split(4);
    for (std::size_t i = 0; i < d.batch.size(); ++i) {
        const auto enc = eris::encode_sample(d.params, d.batch.sample(i), d.batch.length());
        const auto f0 = enc.f0.row(0);
        eris::AdvSample a;
        const auto c = eris::consistency_error(d.params, f0);
        std::vector<double> logits(c.size());
        for (std::size_t k = 0; k < c.size(); ++k) logits[k] = -c[k];
        a.p_clean = eris::softmax(logits);
        a.r = eris::adv_perturbation(d.params, f0, 0.5, 1, adv_rng);
        d.adv.push_back(std::move(a));
    }
    return d;
}

struct Result {
    double max_rel_error = 0.0;
    double kink_margin = 0.0;
};

/// Step sizes tried per coordinate. One step cannot serve every coordinate:
/// gradients near the 1e-8 denominator floor drown in rounding noise at small
/// steps, while large gradients pick up truncation error at large ones.
inline const std::vector<double>& step_ladder() {
    static const std::vector<double> steps{1e-6, 1e-5, 1e-4, 1e-3};
    return steps;
}

/// Relative error of the analytic gradient of one weighted component, using
/// central differences with the grad_check denominator. Each coordinate takes
/// the best step from step_ladder(). grad_scale corrupts the analytic
/// gradient for negative controls.
inline Result check(const Draw& d, const eris::LossWeights& weights, double grad_scale = 1.0) {
    eris::ObjectiveOptions opt;
    opt.weights = weights;
    opt.repulsion_cap = d.repulsion_cap;
    opt.gradient_reversal = false;
    const eris::AdvSource adv = [&](std::size_t i, std::span<const double>) { return d.adv[i]; };

    eris::ModelParams grads = d.params.zeros_like();
    const auto res = eris::evaluate_batch(d.params, d.batch, opt, adv, &grads);
    auto g = grads.flatten();
    for (auto& v : g) v *= grad_scale;
    std::vector<double> x = d.params.flatten();
    eris::ModelParams probe = d.params;
    const auto loss = [&](const std::vector<double>& v) {
        probe.unflatten(v);
        return eris::evaluate_batch(probe, d.batch, opt, adv, nullptr).losses.l_total;
    };

    Result out;
    out.kink_margin = res.kink_margin;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        double best = std::numeric_limits<double>::infinity();
        for (double eps : step_ladder()) {
            x[i] = x0 + eps;
            const double fp = loss(x);
            x[i] = x0 - eps;
            const double fm = loss(x);
            const double num = (fp - fm) / (2.0 * eps);
            const double denom = std::max({std::abs(g[i]), std::abs(num), 1e-8});
            best = std::min(best, std::abs(g[i] - num) / denom);
        }
        x[i] = x0;
        out.max_rel_error = std::max(out.max_rel_error, best);
    }
    return out;
}

}  // namespace audit
