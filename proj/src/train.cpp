#include "eris/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "eris/parallel.hpp"

namespace eris {

namespace {

// Samples per reduction chunk. Fixed so gradient sums never depend on the
// number of worker threads.
constexpr std::size_t kChunk = 8;

// Rng::split stream ids used by fit().
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAdvStream = 3;

struct ChunkResult {
    LossParts sums;
    std::size_t correct = 0;
    double kink = std::numeric_limits<double>::infinity();
    std::vector<AdvSample> adv;
    ModelParams grads;
};

double hinge_margin(std::span<const double> energies, int target, double margin) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < energies.size(); ++j)
        if (static_cast<int>(j) != target) m = std::min(m, std::abs(margin - energies[j]));
    return m;
}

void scale_into(std::vector<double>& acc, std::span<const double> v, double s) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s * v[i];
}

void process_sample(const ModelParams& params, const TimeSeriesDataset& batch, std::size_t i,
                    const ObjectiveOptions& opt, const AdvSource& adv, double inv_batch,
                    bool want_grads, bool record_adv, ChunkResult& out) {
    const auto& w = opt.weights;
    const int y = batch.class_label(i);
    const int dom = batch.domain_label(i);
    const bool per_sample_terms =
        w.dse > 0.0 || w.cl > 0.0 || w.proto > 0.0 || w.reg > 0.0 || w.disc > 0.0;

    const EncoderTrace enc = encode_sample(params, batch.sample(i), batch.length());
    const auto f0 = enc.f0.row(0);
    const std::size_t b = f0.size();
    std::vector<double> d_f0(b, 0.0);
    ModelParams& g = out.grads;

    if (per_sample_terms) out.kink = std::min(out.kink, relu_margin(enc));

    const LabelTrace lab = label_forward(params, f0);
    const auto pred = predict_from_consistency(lab.consistency);
    if (pred.label == y) ++out.correct;

    if (w.dse > 0.0) {
        const DomainTrace dt = domain_forward(params, f0);
        std::vector<double> d_e(dt.energies.size());
        out.sums.l_dse += loss_dse(dt.energies, dom, opt.margins.domain, d_e);
        out.kink = std::min({out.kink, hinge_margin(dt.energies, dom, opt.margins.domain),
                             relu_margin(dt.mlp)});
        if (want_grads) {
            for (auto& v : d_e) v *= w.dse * inv_batch;
            scale_into(d_f0, domain_backward(params, f0, dt, d_e, g), 1.0);
        }
    }

    if (w.cl > 0.0 || w.proto > 0.0) {
        const std::size_t ny = lab.energies.size();
        std::vector<double> d_e(ny, 0.0);
        const std::vector<double> d_c(ny, 0.0);
        if (w.cl > 0.0) {
            out.sums.l_cl += loss_cl(lab.energies, y, opt.margins.label, d_e);
            out.kink = std::min({out.kink, hinge_margin(lab.energies, y, opt.margins.label),
                                 relu_margin(lab.mlp)});
            for (auto& v : d_e) v *= w.cl * inv_batch;
        }
        if (w.proto > 0.0) {
            ProtoGrad pg;
            out.sums.l_proto += loss_proto(f0, params.prototypes, y, opt.margins.repulsion,
                                           want_grads ? &pg : nullptr, opt.repulsion_cap);
            if (opt.repulsion_cap > 0.0) {
                for (std::size_t k = 0; k < params.prototypes.rows(); ++k) {
                    if (static_cast<int>(k) == y) continue;
                    const double dist = squared_distance(f0, params.prototypes.row(k));
                    out.kink = std::min(out.kink, std::abs(dist - opt.repulsion_cap));
                }
            }
            if (want_grads) {
                const double s = w.proto * inv_batch;
                scale_into(d_f0, pg.d_feature, s);
                auto gp = g.prototypes.data();
                auto src = pg.d_prototypes.data();
                for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += s * src[j];
            }
        }
        if (want_grads && w.cl > 0.0) scale_into(d_f0, label_backward(params, f0, lab, d_e, d_c, g), 1.0);
    }

    if (w.reg > 0.0) {
        AdvSample a = adv(i, f0);
        std::vector<double> h(b);
        for (std::size_t j = 0; j < b; ++j) h[j] = f0[j] + a.r[j];
        const LabelTrace lab_adv = label_forward(params, h);
        std::vector<double> logits(lab_adv.consistency.size());
        for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = -lab_adv.consistency[k];
        const auto q = softmax(logits);
        out.sums.l_reg += loss_reg_logits(a.p_clean, logits);
        out.kink = std::min(out.kink, relu_margin(lab_adv.mlp));
        if (want_grads) {
            // ∂KL/∂logit = q − p and logit = −C, so ∂KL/∂C = p − q.
            std::vector<double> d_c(q.size());
            for (std::size_t k = 0; k < q.size(); ++k)
                d_c[k] = w.reg * inv_batch * (a.p_clean[k] - q[k]);
            const std::vector<double> d_e(q.size(), 0.0);
            // r is held fixed, so ∂/∂F0 equals ∂/∂h.
            scale_into(d_f0, label_backward(params, h, lab_adv, d_e, d_c, g), 1.0);
        }
        if (record_adv) out.adv.push_back(std::move(a));
    }

    if (w.disc > 0.0) {
        const MlpTrace disc = mlp_forward(params.discriminator, f0);
        std::vector<double> d_logits(disc.output.size());
        out.sums.l_disc += loss_disc(disc.output.data(), dom, d_logits);
        out.kink = std::min(out.kink, relu_margin(disc));
        if (want_grads) {
            for (auto& v : d_logits) v *= w.disc * inv_batch;
            const auto d_in = mlp_backward(params.discriminator, disc, d_logits, g.discriminator);
            scale_into(d_f0, d_in, opt.gradient_reversal ? -1.0 : 1.0);
        }
    }

    if (want_grads && per_sample_terms) encoder_backward(params, enc, d_f0, g);
}

const char* first_non_finite(const LossBreakdown& l) {
    if (!std::isfinite(l.l_dse)) return "l_dse";
    if (!std::isfinite(l.l_cl)) return "l_cl";
    if (!std::isfinite(l.l_proto)) return "l_proto";
    if (!std::isfinite(l.l_ortho)) return "l_ortho";
    if (!std::isfinite(l.l_reg)) return "l_reg";
    if (!std::isfinite(l.l_disc)) return "l_disc";
    if (!std::isfinite(l.l_total)) return "l_total";
    return nullptr;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !(lr_decay > 0.0) || lr_step_epochs < 1) {
        throw std::invalid_argument("TrainConfig: learning-rate settings must be positive");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(lambda_adv >= 0.0)) {
        throw std::invalid_argument("TrainConfig: loss weights must be non-negative");
    }
    if (!(adv_eps_max >= 0.0) || !(adv_xi > 0.0)) {
        throw std::invalid_argument("TrainConfig: adversarial strength must be >= 0 and xi > 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
        !(adam_eps > 0.0)) {
        throw std::invalid_argument("TrainConfig: invalid Adam hyper-parameters");
    }
    margins.validate();
}

TrainConfig synthetic_benchmark_config() {
    TrainConfig cfg;
    cfg.lr0 = 1e-3;
    cfg.repulsion_cap = 0.25;
    cfg.init = InitScheme::FanIn;
    return cfg;
}

LossWeights LossWeights::from_config(const TrainConfig& cfg) {
    LossWeights w;
    if (cfg.enable_dse) w.dse = cfg.lambda1;
    if (cfg.enable_lse) w.cl = w.proto = cfg.lambda2;
    if (cfg.enable_ortho) w.ortho = 1.0;
    if (cfg.enable_ag) {
        w.reg = 1.0;
        w.disc = cfg.lambda_adv;
    }
    return w;
}

BatchResult evaluate_batch(const ModelParams& params, const TimeSeriesDataset& batch,
                           const ObjectiveOptions& options, const AdvSource& adv,
                           ModelParams* grads, bool record_adv) {
    if (batch.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
    const auto& w = options.weights;
    const std::size_t n = batch.size();
    const double inv_batch = 1.0 / static_cast<double>(n);
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    const bool want_grads = grads != nullptr;

    std::vector<ChunkResult> results(chunks);
    parallel_for(chunks, [&](std::size_t c) {
        ChunkResult& r = results[c];
        if (want_grads) r.grads = params.zeros_like();
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i)
            process_sample(params, batch, i, options, adv, inv_batch, want_grads, record_adv, r);
    });

    BatchResult out;
    out.kink_margin = std::numeric_limits<double>::infinity();
    LossParts parts;
    for (auto& r : results) {
        parts.l_dse += r.sums.l_dse;
        parts.l_cl += r.sums.l_cl;
        parts.l_proto += r.sums.l_proto;
        parts.l_reg += r.sums.l_reg;
        parts.l_disc += r.sums.l_disc;
        out.correct += r.correct;
        out.kink_margin = std::min(out.kink_margin, r.kink);
        if (want_grads) *grads += r.grads;
        if (record_adv)
            for (auto& a : r.adv) out.adv_used.push_back(std::move(a));
    }
    parts.l_dse *= inv_batch;
    parts.l_cl *= inv_batch;
    parts.l_proto *= inv_batch;
    parts.l_reg *= inv_batch;
    parts.l_disc *= inv_batch;

    if (w.ortho > 0.0) {
        const OrthoLoss ortho = loss_ortho(params.w_dom, params.w_lab);
        parts.l_ortho = ortho.value;
        if (want_grads) {
            grads->w_dom += w.ortho * ortho.grad_wd;
            grads->w_lab += w.ortho * ortho.grad_wl;
        }
    }

    // Weighted total; l_lse shares one weight when both halves are active.
    LossBreakdown& l = out.losses;
    l.l_dse = parts.l_dse;
    l.l_cl = parts.l_cl;
    l.l_proto = parts.l_proto;
    l.l_lse = parts.l_cl + parts.l_proto;
    l.l_ortho = parts.l_ortho;
    l.l_reg = parts.l_reg;
    l.l_disc = parts.l_disc;
    l.l_total = w.dse * l.l_dse + w.cl * l.l_cl + w.proto * l.l_proto + w.ortho * l.l_ortho +
                w.reg * l.l_reg + w.disc * l.l_disc;
    return out;
}

std::vector<double> adv_perturbation(const ModelParams& params, std::span<const double> f0,
                                     double eps, std::size_t iters, Rng& rng, double xi) {
    if (!(eps >= 0.0)) throw std::invalid_argument("adv_perturbation: eps must be >= 0");
    const std::size_t b = f0.size();
    std::vector<double> zero(b, 0.0);
    if (eps == 0.0) return zero;

    const auto clean = label_forward(params, f0);
    std::vector<double> logits(clean.consistency.size());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = -clean.consistency[k];
    const auto p = softmax(logits);

    std::vector<double> u(b);
    for (auto& v : u) v = rng.normal();
    double norm = std::sqrt(dot(u, u));
    if (!(norm > 0.0)) return zero;
    for (auto& v : u) v /= norm;

    std::vector<double> h(b);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t j = 0; j < b; ++j) h[j] = f0[j] + xi * u[j];
        const auto tr = label_forward(params, h);
        std::vector<double> d_c(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) logits[k] = -tr.consistency[k];
        const auto q = softmax(logits);
        for (std::size_t k = 0; k < p.size(); ++k) d_c[k] = p[k] - q[k];
        auto grad = consistency_input_gradient(params, h, tr, d_c);
        norm = std::sqrt(dot(grad, grad));
        if (!(norm > 0.0) || !std::isfinite(norm)) return zero;
        for (std::size_t j = 0; j < b; ++j) u[j] = grad[j] / norm;
    }
    for (auto& v : u) v *= eps;
    return u;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

double adv_eps_at(int epoch, const TrainConfig& cfg) {
    if (cfg.epochs <= 1) return cfg.adv_eps_max;
    const double frac = static_cast<double>(std::clamp(epoch, 0, cfg.epochs - 1)) /
                        static_cast<double>(cfg.epochs - 1);
    return cfg.adv_eps_max * frac;
}

TrainState::TrainState(ModelParams p, std::uint64_t seed)
    : params(std::move(p)), rng(Rng(seed).split(kAdvStream)) {
    adam_m = params.zeros_like();
    adam_v = params.zeros_like();
}

void adam_update(TrainState& state, const ModelParams& grads, double lr, const TrainConfig& cfg) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2_sqrt = std::sqrt(1.0 - std::pow(cfg.adam_beta2, t));
    const double step_size = lr / bc1;

    std::vector<Matrix*> m_list, v_list;
    std::vector<const Matrix*> g_list;
    state.adam_m.for_each_tensor([&](const std::string&, Matrix& m) { m_list.push_back(&m); });
    state.adam_v.for_each_tensor([&](const std::string&, Matrix& m) { v_list.push_back(&m); });
    grads.for_each_tensor([&](const std::string&, const Matrix& m) { g_list.push_back(&m); });

    std::size_t idx = 0;
    state.params.for_each_tensor([&](const std::string& name, Matrix& theta) {
        const double decay = name == "prototypes" ? 0.0 : cfg.weight_decay;
        auto th = theta.data();
        auto m = m_list[idx]->data();
        auto v = v_list[idx]->data();
        auto g = g_list[idx]->data();
        for (std::size_t j = 0; j < th.size(); ++j) {
            const double gj = g[j] + decay * th[j];
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * gj;
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * gj * gj;
            const double denom = std::sqrt(v[j]) / bc2_sqrt + cfg.adam_eps;
            th[j] -= step_size * m[j] / denom;
        }
        ++idx;
    });
}

LossBreakdown train_step(TrainState& state, const TimeSeriesDataset& batch,
                         const TrainConfig& cfg, std::size_t* correct) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (batch.channels() != state.params.arch.input_channels) {
        throw DimensionError("train_step: batch has " + std::to_string(batch.channels()) +
                             " channels, model expects " +
                             std::to_string(state.params.arch.input_channels));
    }
    ObjectiveOptions opt;
    opt.weights = LossWeights::from_config(cfg);
    opt.margins = cfg.margins;
    opt.repulsion_cap = cfg.repulsion_cap;
    opt.gradient_reversal = true;

    const double eps = adv_eps_at(state.epoch, cfg);
    const Rng step_rng = state.rng.split(state.step);
    const ModelParams& params = state.params;
    AdvSource adv = [&](std::size_t i, std::span<const double> f0) {
        Rng rng = step_rng.split(i);
        AdvSample a;
        const auto clean = consistency_error(params, f0);
        std::vector<double> logits(clean.size());
        for (std::size_t k = 0; k < clean.size(); ++k) logits[k] = -clean[k];
        a.p_clean = softmax(logits);
        a.r = adv_perturbation(params, f0, eps, cfg.adv_power_iters, rng, cfg.adv_xi);
        return a;
    };

    ModelParams grads = state.params.zeros_like();
    const BatchResult res = evaluate_batch(state.params, batch, opt, adv, &grads);
    if (const char* bad = first_non_finite(res.losses)) {
        throw NonFiniteLoss(std::string("train_step: non-finite loss component ") + bad);
    }
    adam_update(state, grads, lr_at(state.epoch, cfg), cfg);
    if (correct) *correct = res.correct;
    return res.losses;
}

void init_prototypes(ModelParams& params, const TimeSeriesDataset& ds) {
    const std::size_t ny = params.prototypes.rows();
    const std::size_t b = params.prototypes.cols();
    Matrix sums(ny, b);
    std::vector<std::size_t> counts(ny, 0);
    const Matrix f0 = encode(params, ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto k = static_cast<std::size_t>(ds.class_label(i));
        auto row = sums.row(k);
        auto f = f0.row(i);
        for (std::size_t j = 0; j < b; ++j) row[j] += f[j];
        ++counts[k];
    }
    for (std::size_t k = 0; k < ny; ++k) {
        if (counts[k] == 0) continue;
        auto p = params.prototypes.row(k);
        auto s = sums.row(k);
        for (std::size_t j = 0; j < b; ++j) p[j] = s[j] / static_cast<double>(counts[k]);
    }
}

FitResult fit(const TimeSeriesDataset& train, const TrainConfig& cfg, const ArchConfig& arch) {
    cfg.validate();
    arch.validate();
    if (train.empty()) throw std::invalid_argument("fit: empty training set");
    if (train.channels() != arch.input_channels) {
        throw DimensionError("fit: dataset has " + std::to_string(train.channels()) +
                             " channels, architecture expects " +
                             std::to_string(arch.input_channels));
    }
    if (train.num_classes() != arch.num_classes || train.num_domains() != arch.num_domains) {
        throw std::invalid_argument("fit: dataset class/domain counts do not match architecture");
    }

    const Rng root(cfg.seed);
    Rng init_rng = root.split(kInitStream);
    TrainState state(init_params(arch, init_rng, cfg.init), cfg.seed);

    // Warm-up: anchor prototypes at class means of the initial features.
    init_prototypes(state.params, train);

    FitResult result;
    result.initial_cross_norm = frob_norm(matmul_tn(state.params.w_dom, state.params.w_lab));

    std::vector<std::size_t> order(train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = root.split(kShuffleStream).split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(shuffle.below(i));
            std::swap(order[i - 1], order[j]);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at(epoch, cfg);
        std::size_t seen = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const TimeSeriesDataset batch = train.subset(idx);

            std::size_t batch_correct = 0;
            const LossBreakdown l = train_step(state, batch, cfg, &batch_correct);
            correct += batch_correct;
            const double wgt = static_cast<double>(batch.size());
            rec.losses.l_dse += wgt * l.l_dse;
            rec.losses.l_cl += wgt * l.l_cl;
            rec.losses.l_proto += wgt * l.l_proto;
            rec.losses.l_lse += wgt * l.l_lse;
            rec.losses.l_ortho += wgt * l.l_ortho;
            rec.losses.l_reg += wgt * l.l_reg;
            rec.losses.l_disc += wgt * l.l_disc;
            rec.losses.l_total += wgt * l.l_total;
            seen += batch.size();
        }
        const double inv = 1.0 / static_cast<double>(seen);
        rec.losses.l_dse *= inv;
        rec.losses.l_cl *= inv;
        rec.losses.l_proto *= inv;
        rec.losses.l_lse *= inv;
        rec.losses.l_ortho *= inv;
        rec.losses.l_reg *= inv;
        rec.losses.l_disc *= inv;
        rec.losses.l_total *= inv;
        rec.train_acc = static_cast<double>(correct) * inv;
        rec.cross_norm = frob_norm(matmul_tn(state.params.w_dom, state.params.w_lab));
        for (std::size_t k = 0; k < state.params.prototypes.rows(); ++k)
            rec.prototype_norms.push_back(std::sqrt(dot(state.params.prototypes.row(k),
                                                        state.params.prototypes.row(k))));
        result.history.push_back(std::move(rec));
    }
    result.params = std::move(state.params);
    return result;
}

void save_history(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_history: cannot open " + path.string());
    out << "epoch,l_dse,l_cl,l_proto,l_lse,l_ortho,l_reg,l_disc,l_total,lr,cross_norm,train_acc";
    const std::size_t protos = history.empty() ? 0 : history.front().prototype_norms.size();
    for (std::size_t k = 0; k < protos; ++k) out << ",proto_norm_" << k;
    out << '\n';
    char buf[512];
    for (const auto& r : history) {
        const auto& l = r.losses;
        std::snprintf(buf, sizeof buf,
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                      r.epoch, l.l_dse, l.l_cl, l.l_proto, l.l_lse, l.l_ortho, l.l_reg, l.l_disc,
                      l.l_total, r.lr, r.cross_norm, r.train_acc);
        out << buf;
        for (double v : r.prototype_norms) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("save_history: write failed for " + path.string());
}

}  // namespace eris
