// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "eris/cli.hpp"
#include "eris/eval.hpp"
#include "eris/orthoflow.hpp"
#include "eris/train.hpp"
#include "grad_audit.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
    std::printf("%s  %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void lemma() {
    const auto t0 = Clock::now();
    const eris::Rng root(0);
    eris::Rng rd = root.split(0);
    eris::Rng rl = root.split(1);
    const auto wd = eris::sample_normal(rd, 16, 8, 1.0);
    const auto wl = eris::sample_normal(rl, 16, 8, 1.0);
    eris::FlowOptions opt;
    opt.dt = 1e-3;
    opt.steps = 200000;
    const auto traj = eris::simulate_flow(wd, wl, opt);
    const double secs = seconds_since(t0);
    const auto rep = eris::verify_lemma(traj, std::sqrt(1e-8 * traj.ortho_loss.front()));
    const double ratio = rep.final_loss / rep.initial_loss;
    const bool ok = rep.max_increase <= 1e-12 && ratio <= 1e-8 && secs <= 10.0;
    report(ok, "lemma reproduction",
           fmt("max increase %.3g, final/initial loss %.3g, %.2f s, dt halvings %.0f",
               rep.max_increase, ratio, secs, static_cast<double>(traj.dt_halvings)));
}

void closed_form() {
    eris::FlowOptions opt;
    opt.dt = 1e-4;
    opt.steps = 10000;
    const auto traj = eris::simulate_flow(eris::Matrix{{1}}, eris::Matrix{{1}}, opt);
    const double err = std::abs(traj.ortho_loss.back() - 0.04);
    report(err <= 1e-3 && std::abs(traj.times.back() - 1.0) < 1e-9, "closed-form flow",
           fmt("L(1) = %.6f, |L(1) - 0.04| = %.3g", traj.ortho_loss.back(), err));
}

void gradient_audit() {
    const auto comps = audit::components();
    const auto full = comps.back().weights;
    std::vector<double> worst(comps.size(), 0.0);
    int accepted = 0, resampled = 0;
    for (std::uint64_t s = 0; accepted < 100; ++s) {
        const auto d = audit::make_draw(eris::Rng(90000 + s));
        // Kink margin of the full objective covers every term.
        eris::ObjectiveOptions opt;
        opt.weights = full;
        opt.repulsion_cap = d.repulsion_cap;
        const eris::AdvSource adv = [&](std::size_t i, std::span<const double>) { return d.adv[i]; };
        if (eris::evaluate_batch(d.params, d.batch, opt, adv, nullptr).kink_margin < 1e-4) {
            ++resampled;
            continue;
        }
        for (std::size_t c = 0; c < comps.size(); ++c)
            worst[c] = std::max(worst[c], audit::check(d, comps[c].weights).max_rel_error);
        ++accepted;
    }
    std::string detail;
    bool ok = true;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        detail += comps[c].name + " " + fmt("%.2g", worst[c]) + ", ";
        ok = ok && worst[c] <= 1e-4;
    }
    detail += fmt("%.0f draws (%.0f resampled near kinks)", accepted, resampled);
    report(ok, "gradient audit", detail);
}

struct RowStats {
    std::vector<double> accuracy;
    std::vector<double> corr;
    std::vector<double> cross_ratio;  // epoch 100 over epoch 1
    double mean(const std::vector<double>& v) const {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    }
};

void ablation() {
    const auto t0 = Clock::now();
    const auto ds = eris::gen_synthetic(eris::SyntheticConfig{});
    const eris::ArchConfig arch;
    struct Row {
        const char* id;
        bool dse, ag, ortho;
        RowStats stats;
    };
    Row rows[] = {{"B", false, false, false, {}}, {"F", true, true, false, {}}, {"G", true, true, true, {}}};
    for (auto& row : rows) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            for (int target = 0; target < ds.num_domains(); ++target) {
                auto cfg = eris::synthetic_benchmark_config();
                cfg.seed = seed;
                cfg.enable_dse = row.dse;
                cfg.enable_ag = row.ag;
                cfg.enable_ortho = row.ortho;
                const auto [train, test] = eris::lodo_split(ds, target);
                const auto fr = eris::fit(train, cfg, arch);
                const auto m = eris::evaluate_model(fr.params, test);
                row.stats.accuracy.push_back(m.accuracy);
                row.stats.corr.push_back(m.mean_abs_corr);
                row.stats.cross_ratio.push_back(fr.history.at(99).cross_norm /
                                                fr.history.at(0).cross_norm);
            }
        }
    }
    const double secs = seconds_since(t0);
    const auto& b = rows[0].stats;
    const auto& f = rows[1].stats;
    const auto& g = rows[2].stats;
    const double acc_b = b.mean(b.accuracy), acc_f = f.mean(f.accuracy), acc_g = g.mean(g.accuracy);
    report(acc_g >= acc_f && acc_f >= acc_b && secs <= 300.0, "ablation direction G >= F >= B",
           fmt("accuracy G %.4f, F %.4f, B %.4f over 20 runs each; %.0f s for 60 fits", acc_g,
               acc_f, acc_b, secs));

    const double g_worst = *std::max_element(g.cross_ratio.begin(), g.cross_ratio.end());
    const double f_worst = *std::min_element(f.cross_ratio.begin(), f.cross_ratio.end());
    report(g_worst <= 0.1 && f_worst >= 0.5, "orthogonality dynamics",
           fmt("cross-norm epoch 100 / epoch 1: with ortho max %.4f, without ortho min %.4f",
               g_worst, f_worst));

    const double corr_g = g.mean(g.corr), corr_f = f.mean(f.corr);
    report(corr_g < corr_f, "disentanglement diagnostic",
           fmt("mean |off-diagonal corr| G %.4f < F %.4f", corr_g, corr_f));
}

void calibration() {
    eris::Rng rng(4242);
    const std::size_t n = 10000;
    std::vector<double> conf(n);
    std::unique_ptr<bool[]> hit(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) {
        conf[i] = rng.uniform();
        hit[i] = rng.uniform() < conf[i];
    }
    const double mc = eris::ece(conf, std::span<const bool>(hit.get(), n));

    std::vector<double> flat(n, 0.8);
    for (std::size_t i = 0; i < n; ++i) hit[i] = i % 10 < 6;
    const double constructed = eris::ece(flat, std::span<const bool>(hit.get(), n));
    report(mc < 0.02 && std::abs(constructed - 0.2) <= 0.01, "ECE correctness",
           fmt("calibrated simulator %.4f, constructed predictor %.4f", mc, constructed));
}

void cost() {
    eris::Rng rng(777);
    int matched = 0;
    std::string detail;
    for (int trial = 0; trial < 5; ++trial) {
        eris::ArchConfig a;
        a.input_channels = 1 + rng.below(4);
        a.kernel = 1 + 2 * rng.below(3);
        a.conv_channels.clear();
        const auto layers = rng.below(4);
        for (std::uint64_t l = 0; l < layers; ++l) a.conv_channels.push_back(1 + rng.below(8));
        a.encoding_dim = 2 + rng.below(8);
        a.projection_dim = 1 + rng.below(a.encoding_dim);
        a.mlp_hidden = 1 + rng.below(8);
        a.num_classes = 2 + static_cast<int>(rng.below(4));
        a.num_domains = 2 + static_cast<int>(rng.below(4));
        const std::size_t n = 4 + rng.below(16);
        auto p = eris::init_params(a, rng);
        std::vector<double> x(a.input_channels * n);
        for (auto& v : x) v = rng.normal();
        const auto counted = eris::count_inference_macs(p, x, n);
        const auto est = eris::estimate_cost(a, n);
        if (est.time_macs == counted.total() && est.conv_macs == counted.conv) ++matched;
        detail += std::to_string(est.time_macs) + "/" + std::to_string(counted.total()) + " ";
    }
    report(matched == 5, "cost estimator", "estimated/counted MACs " + detail);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism() {
    const fs::path dir = fs::temp_directory_path() / "eris_acceptance_determinism";
    fs::remove_all(dir);
    const std::string config = std::string(ERIS_SOURCE_DIR) + "/configs/benchmark.json";
    const int rc1 = eris::cli::run({"train", "--config", config, "--target-domain", "0", "--out",
                                    (dir / "a").string()});
    const int rc2 = eris::cli::run({"train", "--config", (dir / "a" / "manifest.json").string(),
                                    "--out", (dir / "b").string()});
    const int rc3 = eris::cli::run({"train", "--config", (dir / "a" / "manifest.json").string(),
                                    "--out", (dir / "c").string()});
    const auto hist = slurp(dir / "b" / "history.csv");
    const auto params = slurp(dir / "b" / "params.bin");
    const bool ok = rc1 == 0 && rc2 == 0 && rc3 == 0 && !hist.empty() && !params.empty() &&
                    hist == slurp(dir / "c" / "history.csv") &&
                    params == slurp(dir / "c" / "params.bin") &&
                    hist == slurp(dir / "a" / "history.csv") &&
                    params == slurp(dir / "a" / "params.bin");
    report(ok, "determinism",
           ok ? "history.csv and params.bin byte-identical across three runs"
              : "outputs differ or a run failed");
    fs::remove_all(dir);
}

}  // namespace

int main() {
    lemma();
    closed_form();
    gradient_audit();
    ablation();
    calibration();
    cost();
    determinism();
    std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASSED" : "FAILURES", failures);
    return failures == 0 ? 0 : 1;
}
