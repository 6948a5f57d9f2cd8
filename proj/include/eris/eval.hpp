#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eris/data.hpp"
#include "eris/linalg.hpp"
#include "eris/model.hpp"

namespace eris {

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    /// Classes that appear in neither predictions nor labels (they count as 0
    /// in the macro averages).
    std::vector<int> absent_classes;
};

/// Accuracy plus macro-averaged F1, precision and recall over num_classes.
ClassificationMetrics classification_metrics(std::span<const int> preds,
                                             std::span<const int> labels, int num_classes);

/// Expected calibration error over `bins` equal-width confidence bins
/// (the last bin is closed on the right). Empty bins are skipped.
double ece(std::span<const double> confidences, std::span<const bool> correct,
           std::size_t bins = 15);

struct RankCorrelation {
    double value = 0.0;
    bool degenerate = false;  // an input was constant
};

/// Fractional ranks (1-based) with ties assigned their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman correlation between the rankings of a and b.
RankCorrelation spearman(std::span<const double> a, std::span<const double> b);

/// Spearman agreement between per-domain confidence (the caller passes
/// ‖σ_d²‖₂⁻¹) and −E_d. Needs at least two domains.
RankCorrelation dse_rank_correlation(std::span<const double> inv_sigma_norms,
                                     std::span<const double> neg_domain_energy);

struct MatrixWithFlags {
    Matrix matrix;
    std::vector<bool> degenerate;  // per feature
};

/// Pearson correlation between feature columns of an [n × b] matrix.
/// Zero-variance features get 1 on the diagonal and 0 elsewhere.
MatrixWithFlags feature_correlation_matrix(const Matrix& features);

/// Plug-in histogram mutual information (nats) between feature columns,
/// `bins` equal-width bins per feature spanning its observed range. The
/// diagonal holds each feature's entropy estimate. Features occupying a
/// single bin get MI 0 and are flagged.
MatrixWithFlags mutual_information_matrix(const Matrix& features, std::size_t bins = 16);

double mean_abs_off_diagonal(const Matrix& m);

struct DisentanglementSummary {
    double mean_abs_corr = 0.0;
    double mean_mi = 0.0;
};

DisentanglementSummary disentanglement_summary(const Matrix& features, std::size_t mi_bins = 16);
DisentanglementSummary disentanglement_summary(const ModelParams& params,
                                               const TimeSeriesDataset& ds,
                                               std::size_t mi_bins = 16);

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double ece = 0.0;
    double dse_rank_corr = 0.0;
    bool dse_rank_degenerate = false;
    double mean_abs_corr = 0.0;
    double mean_mi = 0.0;
    std::size_t samples = 0;
    std::vector<int> absent_classes;  // classes never seen in labels or predictions
};

/// Runs the model over the dataset and computes every diagnostic.
MetricsReport evaluate_model(const ModelParams& params, const TimeSeriesDataset& ds,
                             std::size_t ece_bins = 15, std::size_t mi_bins = 16);

/// CSV `class,domain,f_0,...,f_{b-1}` of F0 rows.
void export_embeddings(const ModelParams& params, const TimeSeriesDataset& ds,
                       const std::filesystem::path& path);
void save_matrix_csv(const Matrix& m, const std::filesystem::path& path);

}  // namespace eris
