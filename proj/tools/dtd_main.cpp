// dtd: train a single-step diffusion noise predictor on normal multivariate
// data, score new samples against the learned noise distribution and label
// anomalies with a POT/EVT adaptive threshold.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtd/checkpoint.hpp"
#include "dtd/data.hpp"
#include "dtd/detector.hpp"
#include "dtd/metrics.hpp"
#include "dtd/trainer.hpp"

namespace {

using dtd::Branch;

// Flat key=value run configuration; flags > file > defaults.
struct RunConfig {
    std::map<std::string, std::string> kv;

    RunConfig() {
        kv = {
            {"seed", "0"},
            {"branch", "kde"},
            {"data.history", "16"},
            {"data.stride", "1"},
            {"data.train_frac", "0.70"},
            {"data.val_frac", "0.15"},
            {"schedule.T", "1000"},
            {"schedule.beta_start", "1e-4"},
            {"schedule.beta_end", "0.02"},
            {"predictor.hidden", "64"},
            {"predictor.embed_dim", "16"},
            {"predictor.cheb_order", "2"},
            {"predictor.heads", "2"},
            {"predictor.layers", "2"},
            {"train.lambda", "0.5"},
            {"train.epochs", "5"},
            {"train.batch", "64"},
            {"train.lr", "1e-3"},
            {"train.bank_capacity", "2048"},
            {"train.knn_k", "5"},
            {"train.iforest_trees", "100"},
            {"train.iforest_psi", "256"},
            {"train.margin", "1.0"},
            {"train.bank_warmup_epochs", "1"},
            {"train.ebm_hidden", "64"},
            {"train.ebm_alpha", "0.1"},
            {"train.langevin_delta", "0.1"},
            {"train.langevin_steps", "20"},
            {"train.val_fraction", "0.1"},
            {"train.early_stop_patience", "0"},
            {"pot.t_quantile", "0.98"},
            {"pot.q", "1e-3"},
            {"pot.min_excesses", "20"},
            {"score.n_draws", "1"},
        };
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        std::string line;
        long lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
            if (eq == std::string::npos) {
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": expected key=value");
            }
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r\n");
                const auto e = s.find_last_not_of(" \t\r\n");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            set(key, value);
        }
    }

    void set(const std::string& key, const std::string& value) {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error("unknown config key: " + key);
        it->second = value;
    }

    const std::string& str(const std::string& key) const { return kv.at(key); }
    double num(const std::string& key) const { return std::stod(kv.at(key)); }
    int integer(const std::string& key) const { return std::stoi(kv.at(key)); }
    std::uint64_t u64(const std::string& key) const { return std::stoull(kv.at(key)); }
};

dtd::TrainConfig make_train_config(const RunConfig& rc, const dtd::TimeSeriesDataset& ds) {
    dtd::TrainConfig tc;
    tc.branch = dtd::branch_from_string(rc.str("branch"));
    tc.lambda = rc.num("train.lambda");
    tc.epochs = rc.integer("train.epochs");
    tc.batch = rc.integer("train.batch");
    tc.lr = rc.num("train.lr");
    tc.seed = rc.u64("seed");
    tc.T = rc.integer("schedule.T");
    tc.beta_start = rc.num("schedule.beta_start");
    tc.beta_end = rc.num("schedule.beta_end");
    tc.bank_capacity = rc.integer("train.bank_capacity");
    tc.knn_k = rc.integer("train.knn_k");
    tc.iforest_trees = rc.integer("train.iforest_trees");
    tc.iforest_psi = rc.integer("train.iforest_psi");
    tc.margin = rc.num("train.margin");
    tc.bank_warmup_epochs = rc.integer("train.bank_warmup_epochs");
    tc.ebm_hidden = rc.integer("train.ebm_hidden");
    tc.ebm_alpha = rc.num("train.ebm_alpha");
    tc.langevin_delta = rc.num("train.langevin_delta");
    tc.langevin_steps = rc.integer("train.langevin_steps");
    tc.val_fraction = rc.num("train.val_fraction");
    tc.early_stop_patience = rc.integer("train.early_stop_patience");

    dtd::PredictorConfig& pc = tc.predictor;
    if (ds.grouping) {
        pc.variant = dtd::PredictorVariant::spatiotemporal;
        pc.n_nodes = ds.grouping->n_nodes();
        pc.d = ds.grouping->features_per_node();
    } else {
        pc.variant = dtd::PredictorVariant::mlp;
        pc.n_nodes = 1;
        pc.d = ds.channels;
    }
    pc.history = rc.integer("data.history");
    pc.hidden = rc.integer("predictor.hidden");
    pc.embed_dim = rc.integer("predictor.embed_dim");
    pc.cheb_order = rc.integer("predictor.cheb_order");
    pc.heads = rc.integer("predictor.heads");
    pc.layers = rc.integer("predictor.layers");
    pc.T = tc.T;
    return tc;
}

// ---------------------------------------------------------------------------
// synth spec JSON

dtd::SyntheticSpec parse_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synth spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("synth spec: invalid JSON: " + std::string(e.what()));
    }
    const std::set<std::string> allowed = {"channels", "length", "seed",      "ar_coeff",
                                           "mixing",   "faults", "innovations"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw std::runtime_error("synth spec: unknown key '" + it.key() + "'");
        }
    }
    dtd::SyntheticSpec spec;
    auto require = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key)) {
            throw std::runtime_error("synth spec: missing key '" + std::string(key) + "'");
        }
        return j.at(key);
    };
    try {
        spec.channels = require("channels").get<int>();
        spec.length = require("length").get<long>();
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("synth spec: 'channels'/'length' must be integers");
    }
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("innovations")) {
        const std::string law = j.at("innovations").get<std::string>();
        if (law == "uniform") spec.uniform_innovations = true;
        else if (law != "gaussian") {
            throw std::runtime_error("synth spec: 'innovations' must be gaussian or uniform");
        }
    }
    if (j.contains("ar_coeff")) {
        const auto& a = j.at("ar_coeff");
        if (a.is_number()) {
            spec.ar_coeff.assign(spec.channels, a.get<double>());
        } else if (a.is_array()) {
            spec.ar_coeff = a.get<std::vector<double>>();
        } else {
            throw std::runtime_error("synth spec: 'ar_coeff' must be a number or array");
        }
    } else {
        spec.ar_coeff.assign(spec.channels, 0.0);
    }
    if (j.contains("mixing")) {
        for (const auto& row : j.at("mixing")) {
            for (const auto& v : row) spec.mixing.push_back(v.get<double>());
        }
    }
    if (j.contains("faults")) {
        const std::set<std::string> fault_keys = {"onset", "duration", "type", "magnitude",
                                                  "channels"};
        for (const auto& fj : j.at("faults")) {
            for (auto it = fj.begin(); it != fj.end(); ++it) {
                if (!fault_keys.count(it.key())) {
                    throw std::runtime_error("synth spec: unknown fault key '" + it.key() + "'");
                }
            }
            dtd::FaultSpec f;
            if (!fj.contains("onset") || !fj.contains("duration") || !fj.contains("type")) {
                throw std::runtime_error("synth spec: fault needs 'onset', 'duration', 'type'");
            }
            f.onset = fj.at("onset").get<long>();
            f.duration = fj.at("duration").get<long>();
            const std::string type = fj.at("type").get<std::string>();
            if (type == "mean-shift") f.type = dtd::FaultType::mean_shift;
            else if (type == "variance-burst") f.type = dtd::FaultType::variance_burst;
            else if (type == "correlation-break") f.type = dtd::FaultType::correlation_break;
            else throw std::runtime_error("synth spec: unknown fault type '" + type + "'");
            if (fj.contains("magnitude")) f.magnitude = fj.at("magnitude").get<double>();
            if (fj.contains("channels")) f.channels = fj.at("channels").get<std::vector<int>>();
            spec.faults.push_back(std::move(f));
        }
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// subcommand bodies

std::vector<dtd::WindowPair> windows_for_split(const dtd::TimeSeriesDataset& ds,
                                               const dtd::DataMeta& meta,
                                               const std::string& split) {
    if (split == "test") return dtd::test_windows(ds, meta.history, meta.stride);
    if (split == "val") return dtd::val_windows(ds, meta.history, meta.stride);
    if (split == "train") return dtd::train_windows(ds, meta.history, meta.stride);
    if (split == "all") return dtd::make_windows(ds, 0, ds.length, meta.history, meta.stride);
    throw std::runtime_error("unknown split '" + split + "' (train, val, test, all)");
}

int cmd_synth(const std::string& spec_path, const std::string& out,
              std::optional<std::uint64_t> seed_override) {
    dtd::SyntheticSpec spec = parse_synth_spec(spec_path);
    if (seed_override) spec.seed = *seed_override;
    dtd::TimeSeriesDataset ds = dtd::synth_generate(spec);
    dtd::write_csv(ds, out);
    std::cout << "wrote " << ds.length << " rows x " << ds.channels << " channels to " << out
              << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_path, const std::string& grouping_path,
              const std::string& out_dir) {
    dtd::DatasetSchema schema;
    schema.train_frac = rc.num("data.train_frac");
    schema.val_frac = rc.num("data.val_frac");
    dtd::TimeSeriesDataset ds = dtd::load_csv(data_path, schema);
    if (!grouping_path.empty()) ds.grouping = dtd::load_grouping(grouping_path, ds);

    const dtd::TrainConfig tc = make_train_config(rc, ds);
    const int history = rc.integer("data.history");
    const int stride = rc.integer("data.stride");
    auto windows = dtd::train_windows(ds, history, stride);
    std::cout << "training on " << windows.size() << " windows ("
              << dtd::branch_to_string(tc.branch) << " branch)\n";
    dtd::Pipeline pipeline = dtd::train(windows, tc);

    std::filesystem::create_directories(out_dir);
    const dtd::DataMeta meta =
        dtd::data_meta_from(ds, history, stride, schema.train_frac, schema.val_frac);
    dtd::save_checkpoint(pipeline, meta, out_dir + "/checkpoint.json");
    dtd::write_train_log_csv(pipeline.log, out_dir + "/train_log.csv");
    if (!pipeline.epoch_stats.empty()) {
        const auto& last = pipeline.epoch_stats.back();
        std::cout << "final val diffusion loss " << last.val_dm << ", mean ||eps_hat(x1,1)||^2 "
                  << last.val_eps_norm2 << "\n";
    }
    std::cout << "wrote " << out_dir << "/checkpoint.json and " << out_dir << "/train_log.csv\n";
    return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& data_path,
              const std::string& split, const std::string& out, std::uint64_t seed, int n_draws) {
    dtd::LoadedCheckpoint lc = dtd::load_checkpoint(ckpt_path);
    dtd::DatasetSchema raw;
    raw.normalize = false;
    dtd::TimeSeriesDataset ds = dtd::load_csv(data_path, raw);
    dtd::apply_data_meta(ds, lc.meta);
    auto windows = windows_for_split(ds, lc.meta, split);
    auto scorer = dtd::make_scorer(lc.pipeline);
    dtd::ScoreTrace trace =
        dtd::score_windows(lc.pipeline.predictor, *scorer, lc.pipeline.schedule, windows,
                           dtd::Rng(seed).split("score"), n_draws);
    dtd::write_trace_csv(trace, out);
    std::cout << "wrote " << trace.size() << " scores to " << out << "\n";
    return 0;
}

int cmd_label(const std::string& trace_path, const std::string& calib_path, double q,
              double t_quantile, long min_excesses, const std::string& out,
              const std::string& fit_out) {
    dtd::ScoreTrace trace = dtd::read_trace_csv(trace_path);
    dtd::ScoreTrace calib = dtd::read_trace_csv(calib_path);
    std::vector<double> calib_scores;
    calib_scores.reserve(calib.size());
    for (const auto& p : calib) calib_scores.push_back(p.score);
    dtd::PotConfig pot;
    pot.q = q;
    pot.t_quantile = t_quantile;
    pot.min_excesses = min_excesses;
    dtd::GpdFit fit = dtd::fit_pot(calib_scores, pot);
    dtd::label_trace(trace, fit);
    dtd::write_trace_csv(trace, out);
    dtd::write_gpd_json(fit, fit_out);
    long flagged = 0;
    for (const auto& p : trace) flagged += p.pred == 1;
    std::cout << "z_q = " << fit.z_q << " (gamma " << fit.gamma << ", sigma " << fit.sigma
              << "); flagged " << flagged << "/" << trace.size() << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path, long tau,
             const std::string& out) {
    dtd::ScoreTrace pred_trace = dtd::read_trace_csv(pred_path);
    dtd::ScoreTrace truth_trace = dtd::read_trace_csv(
        truth_path.empty() ? pred_path : truth_path);
    if (pred_trace.size() != truth_trace.size()) {
        throw std::runtime_error("eval: prediction and truth traces have different lengths");
    }
    std::vector<int> pred, truth;
    for (const auto& p : pred_trace) {
        if (p.pred < 0) throw std::runtime_error("eval: trace has no pred column: " + pred_path);
        pred.push_back(p.pred);
    }
    for (const auto& p : truth_trace) {
        if (p.truth < 0) {
            throw std::runtime_error("eval: truth trace has no truth column");
        }
        truth.push_back(p.truth);
    }
    const dtd::PointwiseMetrics pw = dtd::pointwise_metrics(pred, truth);
    const dtd::EventMetrics ev = dtd::event_metrics(pred, truth, tau);
    const std::string report = dtd::metrics_report_json(pw, ev);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw std::runtime_error("cannot write metrics report: " + out);
        f << report << "\n";
    }
    std::cout << report << "\n";
    return 0;
}

int cmd_export_graph(const std::string& ckpt_path, const std::string& out) {
    dtd::LoadedCheckpoint lc = dtd::load_checkpoint(ckpt_path);
    const dtd::Tensor adj = lc.pipeline.predictor.adjacency();
    std::FILE* f = std::fopen(out.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write adjacency: " + out);
    for (int r = 0; r < adj.rows(); ++r) {
        for (int c = 0; c < adj.cols(); ++c) {
            std::fprintf(f, "%s%.17g", c ? "," : "", adj.at(r, c));
        }
        std::fprintf(f, "\n");
    }
    std::fclose(f);
    std::cout << "wrote " << adj.rows() << "x" << adj.cols() << " adjacency to " << out << "\n";
    return 0;
}

int cmd_export_surface(const std::string& ckpt_path, const std::string& data_path,
                       const std::string& split, int k_steps, int samples, std::uint64_t seed,
                       const std::string& out) {
    dtd::LoadedCheckpoint lc = dtd::load_checkpoint(ckpt_path);
    dtd::DatasetSchema raw;
    raw.normalize = false;
    dtd::TimeSeriesDataset ds = dtd::load_csv(data_path, raw);
    dtd::apply_data_meta(ds, lc.meta);
    auto windows = windows_for_split(ds, lc.meta, split);
    if (windows.empty()) throw std::runtime_error("export-surface: no windows in split");
    samples = std::min<long>(samples, static_cast<long>(windows.size()));
    auto scorer = dtd::make_scorer(lc.pipeline);
    const int T = lc.pipeline.schedule.T;
    if (k_steps < 2) throw std::runtime_error("export-surface: k_steps >= 2");

    std::FILE* f = std::fopen(out.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write surface: " + out);
    std::fprintf(f, "k,diffusion_level,sample,noise_norm,score\n");
    dtd::Rng rng = dtd::Rng(seed).split("surface");
    for (int ki = 0; ki < k_steps; ++ki) {
        const int k = static_cast<int>(std::llround(
            static_cast<double>(ki) * static_cast<double>(T - 1) / (k_steps - 1)));
        for (int s = 0; s < samples; ++s) {
            const auto& w = windows[s];
            dtd::Rng draw = rng.split(static_cast<std::uint64_t>(ki) * 1000003u + s);
            dtd::Tensor eps(w.x0.shape());
            for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = draw.normal();
            const dtd::Tensor xk = dtd::forward_diffuse(w.x0, k, eps, lc.pipeline.schedule);
            const dtd::Tensor eps_hat = lc.pipeline.predictor.predict(xk, k, w.x_hist);
            double n2 = 0.0;
            for (std::size_t i = 0; i < eps_hat.size(); ++i) n2 += eps_hat[i] * eps_hat[i];
            std::fprintf(f, "%d,%.17g,%d,%.17g,%.17g\n", k,
                         static_cast<double>(k) / static_cast<double>(T - 1), s, std::sqrt(n2),
                         scorer->score(eps_hat));
        }
    }
    std::fclose(f);
    std::cout << "wrote " << k_steps << "x" << samples << " surface grid to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-based anomaly detection for multivariate time series"};
    app.require_subcommand(1);

    std::string config_path, data_path, grouping_path, spec_path, out_path, ckpt_path;
    std::string trace_path, calib_path, truth_path;
    std::string split = "test";
    std::string branch;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double q = 1e-3, t_quantile = 0.98;
    long min_excesses = 20, tau = 50;
    int n_draws = 0, k_steps = 16, samples = 64;

    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
    synth->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
    synth->add_option("--out", out_path, "Output CSV path")->required();
    synth->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });

    auto* train = app.add_subcommand("train", "Train a pipeline on normal data");
    train->add_option("--data", data_path, "Training CSV")->required();
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--nodes", grouping_path, "Node grouping JSON (spatiotemporal variant)");
    train->add_option("--branch", branch, "kde | knn | iforest | ebm");
    train->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    train->add_option("--out", out_path, "Output directory")->required();

    auto* score = app.add_subcommand("score", "Score windows with a trained checkpoint");
    score->add_option("--checkpoint", ckpt_path)->required();
    score->add_option("--data", data_path)->required();
    score->add_option("--split", split, "train | val | test | all (default test)");
    score->add_option("--n-draws", n_draws, "noise draws averaged per score");
    score->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    score->add_option("--out", out_path)->required();

    auto* label = app.add_subcommand("label", "POT-threshold a score trace");
    label->add_option("--trace", trace_path, "Trace CSV to label")->required();
    label->add_option("--calib", calib_path, "Calibration (normal) trace CSV")->required();
    label->add_option("--config", config_path, "key=value config file (pot.* keys)");
    auto* q_opt = label->add_option("--q", q, "risk parameter (default 1e-3)");
    auto* tq_opt = label->add_option("--t-quantile", t_quantile);
    auto* me_opt = label->add_option("--min-excesses", min_excesses);
    label->add_option("--out", out_path, "Labeled CSV")->required();
    label->add_option("--fit-out", truth_path, "GPD fit JSON (default <out>.gpd.json)");

    auto* eval = app.add_subcommand("eval", "Point-wise and event metrics for a labeled trace");
    eval->add_option("--pred", trace_path, "Labeled trace CSV")->required();
    eval->add_option("--truth", calib_path, "Truth trace CSV (default: the pred file)");
    eval->add_option("--tau", tau, "event tolerance in samples");
    eval->add_option("--out", out_path, "Metrics JSON (also printed)");

    auto* exg = app.add_subcommand("export-graph", "Write the learned adjacency as CSV");
    exg->add_option("--checkpoint", ckpt_path)->required();
    exg->add_option("--out", out_path)->required();

    auto* exs = app.add_subcommand("export-surface",
                                   "Diffusion-level x sample grid of noise norms and scores");
    exs->add_option("--checkpoint", ckpt_path)->required();
    exs->add_option("--data", data_path)->required();
    exs->add_option("--split", split);
    exs->add_option("--k-steps", k_steps);
    exs->add_option("--samples", samples);
    exs->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    exs->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(spec_path, out_path,
                             seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
        }
        if (train->parsed()) {
            RunConfig rc;
            if (!config_path.empty()) rc.load_file(config_path);
            if (!branch.empty()) rc.set("branch", branch);
            if (seed_given) rc.set("seed", std::to_string(seed));
            return cmd_train(rc, data_path, grouping_path, out_path);
        }
        if (score->parsed()) {
            RunConfig rc;
            if (n_draws <= 0) n_draws = rc.integer("score.n_draws");
            return cmd_score(ckpt_path, data_path, split, out_path, seed, n_draws);
        }
        if (label->parsed()) {
            RunConfig rc;
            if (!config_path.empty()) rc.load_file(config_path);
            if (q_opt->count() == 0) q = rc.num("pot.q");
            if (tq_opt->count() == 0) t_quantile = rc.num("pot.t_quantile");
            if (me_opt->count() == 0) min_excesses = rc.integer("pot.min_excesses");
            const std::string fit_out = truth_path.empty() ? out_path + ".gpd.json" : truth_path;
            return cmd_label(trace_path, calib_path, q, t_quantile, min_excesses, out_path,
                             fit_out);
        }
        if (eval->parsed()) {
            return cmd_eval(trace_path, calib_path, tau, out_path);
        }
        if (exg->parsed()) {
            return cmd_export_graph(ckpt_path, out_path);
        }
        if (exs->parsed()) {
            return cmd_export_surface(ckpt_path, data_path, split, k_steps, samples, seed,
                                      out_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
