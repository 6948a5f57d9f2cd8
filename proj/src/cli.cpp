#include "eris/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "eris/data.hpp"
#include "eris/eval.hpp"
#include "eris/model.hpp"
#include "eris/orthoflow.hpp"
#include "eris/train.hpp"

namespace eris::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FlowConfig {
    std::size_t h = 16;
    std::size_t d = 8;
    double dt = 1e-3;
    std::size_t steps = 200000;
    std::size_t log_every = 100;
    std::uint64_t seed = 0;
};

struct RunConfig {
    SyntheticConfig synthetic;
    ArchConfig arch;
    TrainConfig train;
    FlowConfig flow;
    std::string data;  // dataset CSV; empty means generate from `synthetic`
    std::string params;
    int target_domain = -1;  // -1: no held-out domain (train) or every domain (sweep, ablate)
    int seeds = 1;           // consecutive seeds per configuration in sweep and ablate
};

json to_json(const RunConfig& c) {
    const auto& s = c.synthetic;
    const auto& a = c.arch;
    const auto& t = c.train;
    const auto& f = c.flow;
    json j;
    j["data"] = c.data;
    j["params"] = c.params;
    j["target_domain"] = c.target_domain;
    j["seeds"] = c.seeds;
    j["synthetic"] = {{"num_classes", s.num_classes},
                      {"num_domains", s.num_domains},
                      {"channels", s.channels},
                      {"length", s.length},
                      {"samples_per_domain_class", s.samples_per_domain_class},
                      {"domain_scale_range", {s.domain_scale_range.first, s.domain_scale_range.second}},
                      {"domain_offset_range", {s.domain_offset_range.first, s.domain_offset_range.second}},
                      {"noise_stddev", s.noise_stddev},
                      {"seed", s.seed}};
    j["arch"] = {{"input_channels", a.input_channels},
                 {"kernel", a.kernel},
                 {"conv_channels", a.conv_channels},
                 {"encoding_dim", a.encoding_dim},
                 {"projection_dim", a.projection_dim},
                 {"mlp_hidden", a.mlp_hidden},
                 {"num_classes", a.num_classes},
                 {"num_domains", a.num_domains}};
    j["train"] = {{"lambda1", t.lambda1},
                  {"lambda2", t.lambda2},
                  {"lambda_adv", t.lambda_adv},
                  {"margin_domain", t.margins.domain},
                  {"margin_label", t.margins.label},
                  {"margin_repulsion", t.margins.repulsion},
                  {"lr0", t.lr0},
                  {"lr_decay", t.lr_decay},
                  {"lr_step_epochs", t.lr_step_epochs},
                  {"weight_decay", t.weight_decay},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"adv_eps_max", t.adv_eps_max},
                  {"adv_power_iters", t.adv_power_iters},
                  {"adv_xi", t.adv_xi},
                  {"adam_beta1", t.adam_beta1},
                  {"adam_beta2", t.adam_beta2},
                  {"adam_eps", t.adam_eps},
                  {"repulsion_cap", t.repulsion_cap},
                  {"seed", t.seed},
                  {"init", t.init == InitScheme::FanIn ? "fan_in" : "fixed"},
                  {"enable_dse", t.enable_dse},
                  {"enable_lse", t.enable_lse},
                  {"enable_ortho", t.enable_ortho},
                  {"enable_ag", t.enable_ag}};
    j["flow"] = {{"h", f.h}, {"d", f.d}, {"dt", f.dt}, {"steps", f.steps},
                 {"log_every", f.log_every}, {"seed", f.seed}};
    return j;
}

RunConfig from_json(const json& j) {
    RunConfig c;
    j.at("data").get_to(c.data);
    j.at("params").get_to(c.params);
    j.at("target_domain").get_to(c.target_domain);
    j.at("seeds").get_to(c.seeds);

    const auto& s = j.at("synthetic");
    s.at("num_classes").get_to(c.synthetic.num_classes);
    s.at("num_domains").get_to(c.synthetic.num_domains);
    s.at("channels").get_to(c.synthetic.channels);
    s.at("length").get_to(c.synthetic.length);
    s.at("samples_per_domain_class").get_to(c.synthetic.samples_per_domain_class);
    c.synthetic.domain_scale_range = {s.at("domain_scale_range").at(0).get<double>(),
                                      s.at("domain_scale_range").at(1).get<double>()};
    c.synthetic.domain_offset_range = {s.at("domain_offset_range").at(0).get<double>(),
                                       s.at("domain_offset_range").at(1).get<double>()};
    s.at("noise_stddev").get_to(c.synthetic.noise_stddev);
    s.at("seed").get_to(c.synthetic.seed);

    const auto& a = j.at("arch");
    a.at("input_channels").get_to(c.arch.input_channels);
    a.at("kernel").get_to(c.arch.kernel);
    a.at("conv_channels").get_to(c.arch.conv_channels);
    a.at("encoding_dim").get_to(c.arch.encoding_dim);
    a.at("projection_dim").get_to(c.arch.projection_dim);
    a.at("mlp_hidden").get_to(c.arch.mlp_hidden);
    a.at("num_classes").get_to(c.arch.num_classes);
    a.at("num_domains").get_to(c.arch.num_domains);

    const auto& t = j.at("train");
    auto& tc = c.train;
    t.at("lambda1").get_to(tc.lambda1);
    t.at("lambda2").get_to(tc.lambda2);
    t.at("lambda_adv").get_to(tc.lambda_adv);
    t.at("margin_domain").get_to(tc.margins.domain);
    t.at("margin_label").get_to(tc.margins.label);
    t.at("margin_repulsion").get_to(tc.margins.repulsion);
    t.at("lr0").get_to(tc.lr0);
    t.at("lr_decay").get_to(tc.lr_decay);
    t.at("lr_step_epochs").get_to(tc.lr_step_epochs);
    t.at("weight_decay").get_to(tc.weight_decay);
    t.at("batch_size").get_to(tc.batch_size);
    t.at("epochs").get_to(tc.epochs);
    t.at("adv_eps_max").get_to(tc.adv_eps_max);
    t.at("adv_power_iters").get_to(tc.adv_power_iters);
    t.at("adv_xi").get_to(tc.adv_xi);
    t.at("adam_beta1").get_to(tc.adam_beta1);
    t.at("adam_beta2").get_to(tc.adam_beta2);
    t.at("adam_eps").get_to(tc.adam_eps);
    t.at("repulsion_cap").get_to(tc.repulsion_cap);
    t.at("seed").get_to(tc.seed);
    const auto init = t.at("init").get<std::string>();
    if (init != "fixed" && init != "fan_in")
        throw UsageError("train.init must be \"fixed\" or \"fan_in\", got \"" + init + "\"");
    tc.init = init == "fan_in" ? InitScheme::FanIn : InitScheme::Fixed;
    t.at("enable_dse").get_to(tc.enable_dse);
    t.at("enable_lse").get_to(tc.enable_lse);
    t.at("enable_ortho").get_to(tc.enable_ortho);
    t.at("enable_ag").get_to(tc.enable_ag);

    const auto& f = j.at("flow");
    f.at("h").get_to(c.flow.h);
    f.at("d").get_to(c.flow.d);
    f.at("dt").get_to(c.flow.dt);
    f.at("steps").get_to(c.flow.steps);
    f.at("log_every").get_to(c.flow.log_every);
    f.at("seed").get_to(c.flow.seed);
    return c;
}

// Every key in `patch` must exist in `base`, so typos fail loudly.
void check_keys(const json& base, const json& patch, const std::string& where) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (!base.contains(it.key()))
            throw UsageError("unknown config key '" + where + it.key() + "'");
        if (it.value().is_object() && base.at(it.key()).is_object())
            check_keys(base.at(it.key()), it.value(), where + it.key() + ".");
    }
}

RunConfig load_config(const std::string& path) {
    RunConfig defaults;
    json merged = to_json(defaults);
    if (path.empty()) return defaults;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    json user;
    try {
        user = json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    // A manifest nests the resolved config under "config".
    if (user.contains("config") && user.contains("command")) user = user.at("config");
    if (!user.is_object()) throw UsageError("config " + path + " must be a JSON object");
    check_keys(merged, user, "");
    merged.merge_patch(user);
    try {
        return from_json(merged);
    } catch (const json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
}

struct Flags {
    std::string config;
    std::string out;
    std::string data;
    std::string params;
    std::optional<std::uint64_t> seed;
    std::optional<int> target_domain;
    std::optional<double> lambda1;
    std::optional<double> lambda2;
    std::optional<double> lambda_adv;
    std::optional<int> epochs;
    bool no_dse = false;
    bool no_lse = false;
    bool no_ortho = false;
    bool no_ag = false;
    std::string param;
    std::string values;
    std::optional<std::size_t> h;
    std::optional<std::size_t> d;
    std::optional<double> dt;
    std::optional<std::size_t> steps;
    std::vector<std::string> inputs;
};

void apply_train_flags(const Flags& f, RunConfig& c) {
    if (!f.data.empty()) c.data = f.data;
    if (!f.params.empty()) c.params = f.params;
    if (f.seed) c.train.seed = *f.seed;
    if (f.target_domain) c.target_domain = *f.target_domain;
    if (f.lambda1) c.train.lambda1 = *f.lambda1;
    if (f.lambda2) c.train.lambda2 = *f.lambda2;
    if (f.lambda_adv) c.train.lambda_adv = *f.lambda_adv;
    if (f.epochs) c.train.epochs = *f.epochs;
    if (f.no_dse) c.train.enable_dse = false;
    if (f.no_lse) c.train.enable_lse = false;
    if (f.no_ortho) c.train.enable_ortho = false;
    if (f.no_ag) c.train.enable_ag = false;
}

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config, "JSON config or manifest; flags override it");
    sub->add_option("--out", f.out, "Output file or directory")->required();
}

void add_train_options(CLI::App* sub, Flags& f) {
    sub->add_option("--data", f.data, "Dataset CSV (default: synthetic benchmark from config)");
    sub->add_option("--seed", f.seed, "Training seed");
    sub->add_option("--target-domain", f.target_domain, "Held-out domain");
    sub->add_option("--lambda1", f.lambda1, "Weight of the domain-specific energy loss");
    sub->add_option("--lambda2", f.lambda2, "Weight of the label-specific energy loss");
    sub->add_option("--lambda-adv", f.lambda_adv, "Weight of the discriminator loss");
    sub->add_option("--epochs", f.epochs, "Training epochs");
    sub->add_flag("--no-dse", f.no_dse, "Disable the domain-specific energy loss");
    sub->add_flag("--no-lse", f.no_lse, "Disable the label-specific energy losses");
    sub->add_flag("--no-ortho", f.no_ortho, "Disable the orthogonality penalty");
    sub->add_flag("--no-ag", f.no_ag, "Disable adversarial regularization and the discriminator");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_manifest(const std::string& command, const RunConfig& c, const fs::path& path,
                    json extra = json::object()) {
    json m;
    m["command"] = command;
    m["config"] = to_json(c);
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_json(m, path);
}

// Manifest path for commands whose --out is a single file.
fs::path sibling_manifest(const fs::path& out) {
    fs::path p = out;
    p.replace_extension(".manifest.json");
    return p;
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

// Loads or generates the dataset and aligns the architecture with it.
TimeSeriesDataset resolve_dataset(RunConfig& c) {
    TimeSeriesDataset ds = c.data.empty() ? gen_synthetic(c.synthetic) : load_dataset(c.data);
    c.arch.input_channels = ds.channels();
    c.arch.num_classes = ds.num_classes();
    c.arch.num_domains = ds.num_domains();
    if (c.target_domain >= ds.num_domains()) {
        throw UsageError("--target-domain " + std::to_string(c.target_domain) +
                         " out of range for " + std::to_string(ds.num_domains()) + " domains");
    }
    return ds;
}

json metrics_json(const MetricsReport& m) {
    return {{"accuracy", m.accuracy},
            {"macro_f1", m.macro_f1},
            {"macro_precision", m.macro_precision},
            {"macro_recall", m.macro_recall},
            {"ece", m.ece},
            {"dse_rank_corr", m.dse_rank_corr},
            {"dse_rank_degenerate", m.dse_rank_degenerate},
            {"mean_abs_corr", m.mean_abs_corr},
            {"mean_mi", m.mean_mi},
            {"samples", m.samples}};
}

void warn_absent(const MetricsReport& m) {
    if (m.absent_classes.empty()) return;
    std::cerr << "warning: classes absent from evaluation (scored 0 in macro averages):";
    for (int k : m.absent_classes) std::cerr << ' ' << k;
    std::cerr << '\n';
}

struct FitOutcome {
    MetricsReport metrics;
    TrainHistory history;
};

FitOutcome fit_and_evaluate(const TimeSeriesDataset& ds, int target, const TrainConfig& tc,
                            const ArchConfig& arch) {
    auto [train, test] = lodo_split(ds, target);
    FitResult fr = fit(train, tc, arch);
    return {evaluate_model(fr.params, test), std::move(fr.history)};
}

std::vector<int> targets_of(const RunConfig& c, const TimeSeriesDataset& ds) {
    if (c.target_domain >= 0) return {c.target_domain};
    std::vector<int> all(static_cast<std::size_t>(ds.num_domains()));
    for (int d = 0; d < ds.num_domains(); ++d) all[static_cast<std::size_t>(d)] = d;
    return all;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// ---- subcommands ----

void cmd_gen_data(const Flags& f) {
    RunConfig c = load_config(f.config);
    if (f.seed) c.synthetic.seed = *f.seed;
    const TimeSeriesDataset ds = gen_synthetic(c.synthetic);
    const fs::path out = f.out;
    ensure_parent(out);
    save_dataset(ds, out);
    write_manifest("gen-data", c, sibling_manifest(out));
    std::cout << "wrote " << ds.size() << " samples to " << out.string() << '\n';
}

void cmd_train(const Flags& f) {
    RunConfig c = load_config(f.config);
    apply_train_flags(f, c);
    const TimeSeriesDataset ds = resolve_dataset(c);
    const fs::path out = f.out;
    fs::create_directories(out);
    write_manifest("train", c, out / "manifest.json");

    TimeSeriesDataset train = ds;
    std::optional<TimeSeriesDataset> test;
    if (c.target_domain >= 0) {
        auto split = lodo_split(ds, c.target_domain);
        train = std::move(split.first);
        test = std::move(split.second);
    }
    const FitResult fr = fit(train, c.train, c.arch);
    save_history(fr.history, out / "history.csv");
    save_params(fr.params, out / "params.bin");
    const auto& last = fr.history.back();
    std::cout << "epochs " << fr.history.size() << "  l_total " << last.losses.l_total
              << "  train_acc " << last.train_acc << "  cross_norm " << last.cross_norm << '\n';
    if (test) {
        const MetricsReport m = evaluate_model(fr.params, *test);
        warn_absent(m);
        json mj = metrics_json(m);
        mj["config"] = to_json(c);
        write_json(mj, out / "metrics.json");
        std::cout << "held-out domain " << c.target_domain << "  accuracy " << m.accuracy
                  << "  ece " << m.ece << '\n';
    }
}

void cmd_eval(const Flags& f) {
    RunConfig c = load_config(f.config);
    apply_train_flags(f, c);
    if (c.params.empty()) throw UsageError("eval needs --params");
    const TimeSeriesDataset ds = resolve_dataset(c);
    const ModelParams params = load_params(c.params);
    if (params.arch.input_channels != ds.channels() ||
        params.arch.num_classes != ds.num_classes() ||
        params.arch.num_domains != ds.num_domains()) {
        throw std::runtime_error("eval: parameter file does not match the dataset shape");
    }
    c.arch = params.arch;
    const TimeSeriesDataset eval_set =
        c.target_domain >= 0 ? lodo_split(ds, c.target_domain).second : ds;

    const fs::path out = f.out;
    fs::create_directories(out);
    write_manifest("eval", c, out / "manifest.json");
    const MetricsReport m = evaluate_model(params, eval_set);
    warn_absent(m);
    json mj = metrics_json(m);
    mj["config"] = to_json(c);
    write_json(mj, out / "metrics.json");

    const Matrix f0 = encode(params, eval_set);
    save_matrix_csv(feature_correlation_matrix(f0).matrix, out / "correlation.csv");
    save_matrix_csv(mutual_information_matrix(f0).matrix, out / "mutual_information.csv");
    export_embeddings(params, eval_set, out / "embeddings.csv");
    std::cout << "accuracy " << m.accuracy << "  macro_f1 " << m.macro_f1 << "  ece " << m.ece
              << "  mean_abs_corr " << m.mean_abs_corr << '\n';
}

void cmd_ortho_sim(const Flags& f) {
    RunConfig c = load_config(f.config);
    if (f.h) c.flow.h = *f.h;
    if (f.d) c.flow.d = *f.d;
    if (f.dt) c.flow.dt = *f.dt;
    if (f.steps) c.flow.steps = *f.steps;
    if (f.seed) c.flow.seed = *f.seed;
    if (c.flow.h == 0 || c.flow.d == 0) throw UsageError("--h and --d must be positive");

    const Rng root(c.flow.seed);
    Rng rd = root.split(0);
    Rng rl = root.split(1);
    const Matrix wd = sample_normal(rd, c.flow.h, c.flow.d, 1.0);
    const Matrix wl = sample_normal(rl, c.flow.h, c.flow.d, 1.0);
    FlowOptions opt;
    opt.dt = c.flow.dt;
    opt.steps = c.flow.steps;
    opt.log_every = c.flow.log_every;
    const FlowTrajectory traj = simulate_flow(wd, wl, opt);

    // Convergence target: squared cross norm down by 1e-8 from its start.
    const double tol = std::sqrt(1e-8 * traj.ortho_loss.front());
    const CertReport rep = verify_lemma(traj, tol);
    const fs::path out = f.out;
    ensure_parent(out);
    save_trajectory(traj, out);
    write_manifest("ortho-sim", c, sibling_manifest(out),
                   {{"report",
                     {{"initial_loss", rep.initial_loss},
                      {"final_loss", rep.final_loss},
                      {"final_cross_norm", rep.final_cross_norm},
                      {"max_increase", rep.max_increase},
                      {"monotone", rep.monotone},
                      {"converged", rep.converged},
                      {"certified", rep.certified},
                      {"dt_halvings", traj.dt_halvings}}}});
    std::cout << (rep.certified ? "certified" : "NOT certified") << ": loss "
              << rep.initial_loss << " -> " << rep.final_loss << ", max increase "
              << rep.max_increase << ", dt halvings " << traj.dt_halvings << '\n';
}

void cmd_sweep(const Flags& f) {
    RunConfig c = load_config(f.config);
    apply_train_flags(f, c);
    if (f.param.empty() || f.values.empty()) throw UsageError("sweep needs --param and --values");
    const json base_train = to_json(c).at("train");
    if (!base_train.contains(f.param) || !base_train.at(f.param).is_number())
        throw UsageError("--param must name a numeric training setting, got '" + f.param + "'");
    std::vector<double> values;
    for (const auto& v : split_list(f.values)) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(v, &used));
            if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::exception&) {
            throw UsageError("--values: '" + v + "' is not a number");
        }
    }
    if (values.empty()) throw UsageError("--values is empty");

    const TimeSeriesDataset ds = resolve_dataset(c);
    const auto targets = targets_of(c, ds);
    const fs::path out = f.out;
    ensure_parent(out);
    write_manifest("sweep", c, sibling_manifest(out),
                   {{"param", f.param}, {"values", values}});

    std::ofstream csv(out, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + out.string());
    csv << "param,value,runs,accuracy,macro_f1,ece,dse_rank_corr,mean_abs_corr,mean_mi,final_cross_norm\n";
    for (double v : values) {
        json patched = to_json(c);
        patched["train"][f.param] = v;
        RunConfig rc = from_json(patched);
        double acc = 0, f1 = 0, e = 0, rank = 0, corr = 0, mi = 0, cross = 0;
        int runs = 0;
        for (int s = 0; s < c.seeds; ++s) {
            rc.train.seed = c.train.seed + static_cast<std::uint64_t>(s);
            for (int t : targets) {
                const FitOutcome o = fit_and_evaluate(ds, t, rc.train, rc.arch);
                acc += o.metrics.accuracy;
                f1 += o.metrics.macro_f1;
                e += o.metrics.ece;
                rank += o.metrics.dse_rank_corr;
                corr += o.metrics.mean_abs_corr;
                mi += o.metrics.mean_mi;
                cross += o.history.back().cross_norm;
                ++runs;
            }
        }
        const double inv = 1.0 / runs;
        csv << f.param << ',' << fmt(v) << ',' << runs << ',' << fmt(acc * inv) << ','
            << fmt(f1 * inv) << ',' << fmt(e * inv) << ',' << fmt(rank * inv) << ','
            << fmt(corr * inv) << ',' << fmt(mi * inv) << ',' << fmt(cross * inv) << '\n';
        std::cout << f.param << '=' << v << "  accuracy " << acc * inv << '\n';
    }
}

struct AblationRow {
    char id;
    bool dse, lse, ag, ortho;
};

constexpr AblationRow kAblationRows[] = {
    {'A', true, false, false, false}, {'B', false, true, false, false},
    {'C', true, true, false, false},  {'D', true, true, false, true},
    {'E', false, true, true, false},  {'F', true, true, true, false},
    {'G', true, true, true, true},
};

void cmd_ablate(const Flags& f) {
    RunConfig c = load_config(f.config);
    apply_train_flags(f, c);
    std::vector<AblationRow> rows;
    if (f.values.empty()) {
        rows.assign(std::begin(kAblationRows), std::end(kAblationRows));
    } else {
        for (const auto& v : split_list(f.values)) {
            auto it = std::find_if(std::begin(kAblationRows), std::end(kAblationRows),
                                   [&](const AblationRow& r) { return v.size() == 1 && r.id == v[0]; });
            if (it == std::end(kAblationRows)) throw UsageError("unknown ablation row '" + v + "'");
            rows.push_back(*it);
        }
    }
    const TimeSeriesDataset ds = resolve_dataset(c);
    const auto targets = targets_of(c, ds);
    const fs::path out = f.out;
    fs::create_directories(out);
    write_manifest("ablate", c, out / "manifest.json");

    std::ofstream runs_csv(out / "runs.csv", std::ios::binary);
    std::ofstream summary(out / "summary.csv", std::ios::binary);
    if (!runs_csv || !summary) throw std::runtime_error("cannot write under " + out.string());
    runs_csv << "row,target_domain,seed,accuracy,macro_f1,ece,mean_abs_corr,cross_norm_first,cross_norm_last\n";
    summary << "row,dse,lse,ag,ortho,runs,accuracy,macro_f1,ece,mean_abs_corr\n";
    for (const auto& row : rows) {
        TrainConfig tc = c.train;
        tc.enable_dse = row.dse;
        tc.enable_lse = row.lse;
        tc.enable_ag = row.ag;
        tc.enable_ortho = row.ortho;
        const fs::path dir = out / std::string(1, row.id);
        fs::create_directories(dir);
        double acc = 0, f1 = 0, e = 0, corr = 0;
        int n = 0;
        for (int s = 0; s < c.seeds; ++s) {
            tc.seed = c.train.seed + static_cast<std::uint64_t>(s);
            for (int t : targets) {
                const FitOutcome o = fit_and_evaluate(ds, t, tc, c.arch);
                save_history(o.history, dir / ("history_t" + std::to_string(t) + "_s" +
                                               std::to_string(tc.seed) + ".csv"));
                runs_csv << row.id << ',' << t << ',' << tc.seed << ',' << fmt(o.metrics.accuracy)
                         << ',' << fmt(o.metrics.macro_f1) << ',' << fmt(o.metrics.ece) << ','
                         << fmt(o.metrics.mean_abs_corr) << ','
                         << fmt(o.history.front().cross_norm) << ','
                         << fmt(o.history.back().cross_norm) << '\n';
                acc += o.metrics.accuracy;
                f1 += o.metrics.macro_f1;
                e += o.metrics.ece;
                corr += o.metrics.mean_abs_corr;
                ++n;
            }
        }
        const double inv = 1.0 / n;
        summary << row.id << ',' << row.dse << ',' << row.lse << ',' << row.ag << ',' << row.ortho
                << ',' << n << ',' << fmt(acc * inv) << ',' << fmt(f1 * inv) << ','
                << fmt(e * inv) << ',' << fmt(corr * inv) << '\n';
        std::cout << row.id << "  accuracy " << acc * inv << "  mean_abs_corr " << corr * inv
                  << '\n';
    }
}

void cmd_report(const Flags& f) {
    std::vector<fs::path> files;
    for (const auto& in : f.inputs) {
        const fs::path p = in;
        if (fs::is_directory(p)) {
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().filename() == "metrics.json")
                    files.push_back(e.path());
        } else if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else {
            throw UsageError("report: no such file or directory: " + in);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("report: no metrics.json found");

    static const char* kFields[] = {"accuracy", "macro_f1", "macro_precision", "macro_recall",
                                    "ece", "dse_rank_corr", "mean_abs_corr", "mean_mi",
                                    "samples"};
    const fs::path out = f.out;
    ensure_parent(out);
    std::ofstream csv(out, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + out.string());
    csv << "source";
    for (const char* k : kFields) csv << ',' << k;
    csv << '\n';
    for (const auto& p : files) {
        std::ifstream in(p);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("report: " + p.string() + ": " + e.what());
        }
        csv << p.string();
        for (const char* k : kFields) {
            if (!j.contains(k)) throw std::runtime_error("report: " + p.string() + " lacks " + k);
            csv << ',' << (j.at(k).is_number_unsigned() ? std::to_string(j.at(k).get<std::size_t>())
                                                         : fmt(j.at(k).get<double>()));
        }
        csv << '\n';
    }
    RunConfig c = load_config(f.config);
    write_manifest("report", c, sibling_manifest(out), {{"inputs", f.inputs}});
    std::cout << "aggregated " << files.size() << " reports into " << out.string() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Energy-guided disentanglement for domain-generalized time-series classification"};
    app.name("eris");
    app.require_subcommand(1, 1);
    // ortho-sim takes --h, so help answers to --help only.
    app.set_help_flag("--help", "Print this help message and exit");
    Flags f;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic domain-shift dataset");
    add_common(gen, f);
    gen->add_option("--seed", f.seed, "Dataset seed");

    auto* train = app.add_subcommand("train", "Train one model");
    add_common(train, f);
    add_train_options(train, f);

    auto* eval = app.add_subcommand("eval", "Evaluate a parameter file");
    add_common(eval, f);
    add_train_options(eval, f);
    eval->add_option("--params", f.params, "Parameter file written by train");

    auto* sim = app.add_subcommand("ortho-sim", "Simulate the orthogonality gradient flow");
    add_common(sim, f);
    sim->add_option("--h", f.h, "Rows of W_d and W_l");
    sim->add_option("--d", f.d, "Columns of W_d and W_l");
    sim->add_option("--dt", f.dt, "Euler step size");
    sim->add_option("--steps", f.steps, "Number of Euler steps");
    sim->add_option("--seed", f.seed, "Seed for the Gaussian initial matrices");

    auto* sweep = app.add_subcommand("sweep", "Fit and evaluate across values of one setting");
    add_common(sweep, f);
    add_train_options(sweep, f);
    sweep->add_option("--param", f.param, "Training setting to vary, e.g. lambda2")->required();
    sweep->add_option("--values", f.values, "Comma-separated values")->required();

    auto* ablate = app.add_subcommand("ablate", "Run the ablation configurations A-G");
    add_common(ablate, f);
    add_train_options(ablate, f);
    ablate->add_option("--values", f.values, "Subset of rows, e.g. B,F,G");

    auto* report = app.add_subcommand("report", "Aggregate metrics.json files into one CSV");
    add_common(report, f);
    report->add_option("inputs", f.inputs, "metrics.json files or directories")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen) cmd_gen_data(f);
        else if (*train) cmd_train(f);
        else if (*eval) cmd_eval(f);
        else if (*sim) cmd_ortho_sim(f);
        else if (*sweep) cmd_sweep(f);
        else if (*ablate) cmd_ablate(f);
        else if (*report) cmd_report(f);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace eris::cli
