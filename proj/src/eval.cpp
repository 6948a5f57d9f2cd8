#include "eris/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace eris {

namespace {

std::vector<std::size_t> bin_column(const Matrix& x, std::size_t col, std::size_t bins,
                                    bool& degenerate) {
    const std::size_t n = x.rows();
    double lo = x(0, col);
    double hi = x(0, col);
    for (std::size_t i = 1; i < n; ++i) {
        lo = std::min(lo, x(i, col));
        hi = std::max(hi, x(i, col));
    }
    std::vector<std::size_t> idx(n, 0);
    degenerate = !(hi > lo);
    if (degenerate) return idx;
    const double scale = static_cast<double>(bins) / (hi - lo);
    std::vector<bool> used(bins, false);
    for (std::size_t i = 0; i < n; ++i) {
        auto b = static_cast<std::size_t>((x(i, col) - lo) * scale);
        idx[i] = std::min(b, bins - 1);
        used[idx[i]] = true;
    }
    degenerate = std::count(used.begin(), used.end(), true) < 2;
    return idx;
}

}  // namespace

ClassificationMetrics classification_metrics(std::span<const int> preds,
                                             std::span<const int> labels, int num_classes) {
    if (preds.empty()) throw std::invalid_argument("classification_metrics: empty input");
    if (preds.size() != labels.size()) {
        throw std::invalid_argument("classification_metrics: predictions and labels differ in length");
    }
    if (num_classes < 1) throw std::invalid_argument("classification_metrics: num_classes < 1");
    const auto nc = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> tp(nc, 0), fp(nc, 0), fn(nc, 0);
    std::vector<bool> seen(nc, false);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i];
        const int y = labels[i];
        if (p < 0 || p >= num_classes || y < 0 || y >= num_classes) {
            throw std::out_of_range("classification_metrics: label outside [0, num_classes)");
        }
        const auto pu = static_cast<std::size_t>(p);
        const auto yu = static_cast<std::size_t>(y);
        seen[pu] = seen[yu] = true;
        if (p == y) {
            ++hits;
            ++tp[yu];
        } else {
            ++fp[pu];
            ++fn[yu];
        }
    }
    ClassificationMetrics m;
    m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
    for (std::size_t k = 0; k < nc; ++k) {
        if (!seen[k]) {
            m.absent_classes.push_back(static_cast<int>(k));
            continue;
        }
        const double prec = tp[k] + fp[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fp[k]) : 0.0;
        const double rec = tp[k] + fn[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fn[k]) : 0.0;
        const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        m.macro_precision += prec;
        m.macro_recall += rec;
        m.macro_f1 += f1;
    }
    const double inv = 1.0 / static_cast<double>(nc);
    m.macro_precision *= inv;
    m.macro_recall *= inv;
    m.macro_f1 *= inv;
    return m;
}

double ece(std::span<const double> confidences, std::span<const bool> correct, std::size_t bins) {
    if (confidences.size() != correct.size()) {
        throw std::invalid_argument("ece: confidences and correctness differ in length");
    }
    if (confidences.empty()) throw std::invalid_argument("ece: empty input");
    if (bins < 1) throw std::invalid_argument("ece: bins must be >= 1");
    std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0)) {
            throw std::out_of_range("ece: confidence " + std::to_string(c) + " outside [0, 1]");
        }
        const auto b = std::min(static_cast<std::size_t>(c * static_cast<double>(bins)), bins - 1);
        conf_sum[b] += c;
        hit_sum[b] += correct[i] ? 1.0 : 0.0;
        ++count[b];
    }
    const double n = static_cast<double>(confidences.size());
    double total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double nb = static_cast<double>(count[b]);
        total += (nb / n) * std::abs(hit_sum[b] / nb - conf_sum[b] / nb);
    }
    return total;
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("spearman: inputs differ in length");
    if (a.size() < 2) throw std::invalid_argument("spearman: need at least two entries");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    RankCorrelation r;
    if (saa == 0.0 || sbb == 0.0) {
        r.degenerate = true;
        return r;
    }
    r.value = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
    return r;
}

RankCorrelation dse_rank_correlation(std::span<const double> inv_sigma_norms,
                                     std::span<const double> neg_domain_energy) {
    return spearman(inv_sigma_norms, neg_domain_energy);
}

MatrixWithFlags feature_correlation_matrix(const Matrix& features) {
    const std::size_t n = features.rows();
    const std::size_t b = features.cols();
    if (n < 2) throw std::invalid_argument("feature_correlation_matrix: need at least two samples");
    std::vector<double> mean(b, 0.0), sd(b, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b; ++j) mean[j] += features(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    Matrix centered(n, b);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b; ++j) centered(i, j) = features(i, j) - mean[j];
    const Matrix cov = matmul_tn(centered, centered);

    MatrixWithFlags out{Matrix(b, b), std::vector<bool>(b, false)};
    for (std::size_t j = 0; j < b; ++j) {
        sd[j] = std::sqrt(cov(j, j));
        out.degenerate[j] = !(sd[j] > 0.0);
    }
    for (std::size_t i = 0; i < b; ++i) {
        out.matrix(i, i) = 1.0;
        for (std::size_t j = i + 1; j < b; ++j) {
            double c = 0.0;
            if (!out.degenerate[i] && !out.degenerate[j])
                c = std::clamp(cov(i, j) / (sd[i] * sd[j]), -1.0, 1.0);
            out.matrix(i, j) = out.matrix(j, i) = c;
        }
    }
    return out;
}

MatrixWithFlags mutual_information_matrix(const Matrix& features, std::size_t bins) {
    const std::size_t n = features.rows();
    const std::size_t b = features.cols();
    if (n < 2) throw std::invalid_argument("mutual_information_matrix: need at least two samples");
    if (bins < 2) throw std::invalid_argument("mutual_information_matrix: bins must be >= 2");

    MatrixWithFlags out{Matrix(b, b), std::vector<bool>(b, false)};
    std::vector<std::vector<std::size_t>> idx(b);
    std::vector<std::vector<double>> marginal(b, std::vector<double>(bins, 0.0));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < b; ++j) {
        bool deg = false;
        idx[j] = bin_column(features, j, bins, deg);
        out.degenerate[j] = deg;
        for (auto v : idx[j]) marginal[j][v] += inv_n;
        double h = 0.0;
        for (double p : marginal[j])
            if (p > 0.0) h -= p * std::log(p);
        out.matrix(j, j) = h;
    }
    std::vector<double> joint(bins * bins);
    for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t c = a + 1; c < b; ++c) {
            double mi = 0.0;
            if (!out.degenerate[a] && !out.degenerate[c]) {
                std::fill(joint.begin(), joint.end(), 0.0);
                for (std::size_t i = 0; i < n; ++i) joint[idx[a][i] * bins + idx[c][i]] += inv_n;
                for (std::size_t u = 0; u < bins; ++u) {
                    for (std::size_t v = 0; v < bins; ++v) {
                        const double p = joint[u * bins + v];
                        if (p > 0.0) mi += p * std::log(p / (marginal[a][u] * marginal[c][v]));
                    }
                }
                mi = std::max(mi, 0.0);
            }
            out.matrix(a, c) = out.matrix(c, a) = mi;
        }
    }
    return out;
}

double mean_abs_off_diagonal(const Matrix& m) {
    const std::size_t b = m.rows();
    if (b < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
            if (i != j) s += std::abs(m(i, j));
    return s / static_cast<double>(b * (b - 1));
}

DisentanglementSummary disentanglement_summary(const Matrix& features, std::size_t mi_bins) {
    return {mean_abs_off_diagonal(feature_correlation_matrix(features).matrix),
            mean_abs_off_diagonal(mutual_information_matrix(features, mi_bins).matrix)};
}

DisentanglementSummary disentanglement_summary(const ModelParams& params,
                                               const TimeSeriesDataset& ds,
                                               std::size_t mi_bins) {
    if (ds.empty()) throw std::invalid_argument("disentanglement_summary: empty dataset");
    return disentanglement_summary(encode(params, ds), mi_bins);
}

MetricsReport evaluate_model(const ModelParams& params, const TimeSeriesDataset& ds,
                             std::size_t ece_bins, std::size_t mi_bins) {
    if (ds.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
    const Matrix f0 = encode(params, ds);
    const std::size_t n = ds.size();
    const auto nd = static_cast<std::size_t>(params.arch.num_domains);

    std::vector<int> preds(n);
    std::vector<double> conf(n);
    std::unique_ptr<bool[]> hit(new bool[n]);
    std::vector<double> sigma_sq_norm(nd, 0.0), mean_energy(nd, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = predict(params, f0.row(i));
        preds[i] = p.label;
        conf[i] = p.confidence;
        hit[i] = p.label == ds.class_label(i);
        const auto e = energy_domain(params, f0.row(i));
        const auto s = variance_head(params, f0.row(i));
        for (std::size_t j = 0; j < nd; ++j) {
            mean_energy[j] += e[j] / static_cast<double>(n);
            sigma_sq_norm[j] += s[j] * s[j];
        }
    }

    MetricsReport r;
    r.samples = n;
    const auto cm = classification_metrics(preds, ds.class_labels(), params.arch.num_classes);
    r.accuracy = cm.accuracy;
    r.macro_f1 = cm.macro_f1;
    r.macro_precision = cm.macro_precision;
    r.macro_recall = cm.macro_recall;
    r.absent_classes = cm.absent_classes;
    r.ece = ece(conf, std::span<const bool>(hit.get(), n), ece_bins);

    if (nd >= 2) {
        std::vector<double> inv_norm(nd), neg_e(nd);
        for (std::size_t j = 0; j < nd; ++j) {
            inv_norm[j] = 1.0 / std::sqrt(sigma_sq_norm[j]);
            neg_e[j] = -mean_energy[j];
        }
        const auto rc = dse_rank_correlation(inv_norm, neg_e);
        r.dse_rank_corr = rc.value;
        r.dse_rank_degenerate = rc.degenerate;
    } else {
        r.dse_rank_degenerate = true;
    }
    if (n >= 2) {
        const auto ds_summary = disentanglement_summary(f0, mi_bins);
        r.mean_abs_corr = ds_summary.mean_abs_corr;
        r.mean_mi = ds_summary.mean_mi;
    }
    return r;
}

void save_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_matrix_csv: cannot open " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("save_matrix_csv: write failed for " + path.string());
}

void export_embeddings(const ModelParams& params, const TimeSeriesDataset& ds,
                       const std::filesystem::path& path) {
    const Matrix f0 = encode(params, ds);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("export_embeddings: cannot open " + path.string());
    out << "class,domain";
    for (std::size_t j = 0; j < f0.cols(); ++j) out << ",f_" << j;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.class_label(i) << ',' << ds.domain_label(i);
        for (double v : f0.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("export_embeddings: write failed for " + path.string());
}

}  // namespace eris
