#include "dtd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "dtd/detector.hpp"

namespace dtd {

Branch branch_from_string(const std::string& s) {
    if (s == "kde") return Branch::kde;
    if (s == "knn") return Branch::knn;
    if (s == "iforest") return Branch::iforest;
    if (s == "ebm") return Branch::ebm;
    throw std::invalid_argument("unknown branch '" + s + "' (kde, knn, iforest, ebm)");
}

std::string branch_to_string(Branch b) {
    switch (b) {
        case Branch::kde: return "kde";
        case Branch::knn: return "knn";
        case Branch::iforest: return "iforest";
        case Branch::ebm: return "ebm";
    }
    return "?";
}

bool branch_is_nonparametric(Branch b) { return b != Branch::ebm; }

void TrainConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("train config: lambda >= 0");
    if (epochs < 1 || batch < 1) throw std::invalid_argument("train config: epochs, batch >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr > 0");
    if (bank_capacity < 1) throw std::invalid_argument("train config: bank capacity >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("train config: val_fraction in [0, 1)");
    }
    predictor.validate();
}

namespace {

NpMethod np_method(const TrainConfig& config) {
    switch (config.branch) {
        case Branch::kde:
            return config.np_knn_surrogate ? NpMethod::knn : NpMethod::kde;
        case Branch::knn: return NpMethod::knn;
        default: return NpMethod::iforest;
    }
}

struct BatchTensors {
    Tensor x0;       // B x flat
    Tensor x_k;      // B x flat
    Tensor hist;     // B x (H*flat)
    Tensor eps;      // B x flat
    std::vector<int> ks;
    std::vector<int> zeros;
};

// Flattened batch of windows with per-sample diffusion draws.
BatchTensors assemble_batch(const std::vector<WindowPair>& windows,
                            const std::vector<std::size_t>& order, std::size_t begin,
                            std::size_t count, const NoiseSchedule& schedule, Rng& rng) {
    const int flat = static_cast<int>(windows[0].x0.size());
    const int histlen = static_cast<int>(windows[0].x_hist.size());
    const int b = static_cast<int>(count);
    BatchTensors bt;
    bt.x0 = Tensor({b, flat});
    bt.x_k = Tensor({b, flat});
    bt.hist = Tensor({b, histlen});
    bt.eps = Tensor({b, flat});
    bt.ks.resize(count);
    bt.zeros.assign(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        const WindowPair& w = windows[order[begin + i]];
        const int k = rng.uniform_int(schedule.T);
        bt.ks[i] = k;
        const double sa = schedule.sqrt_alpha_bar(k);
        const double sb = schedule.sqrt_one_minus_alpha_bar(k);
        for (int j = 0; j < flat; ++j) {
            const double e = rng.normal();
            const double x = w.x0[j];
            bt.x0.at(static_cast<int>(i), j) = x;
            bt.eps.at(static_cast<int>(i), j) = e;
            bt.x_k.at(static_cast<int>(i), j) = sa * x + sb * e;
        }
        for (int j = 0; j < histlen; ++j) bt.hist.at(static_cast<int>(i), j) = w.x_hist[j];
    }
    return bt;
}

}  // namespace

Pipeline train(const std::vector<WindowPair>& windows, const TrainConfig& config_in) {
    TrainConfig config = config_in;
    config.predictor.T = config.T;
    config.validate();
    if (windows.empty()) throw std::invalid_argument("train: empty dataset");

    const int flat = static_cast<int>(windows[0].x0.size());
    const bool spatiotemporal = config.predictor.variant == PredictorVariant::spatiotemporal;
    if (config.predictor.flat_dim() != flat) {
        throw std::invalid_argument("train: window width " + std::to_string(flat) +
                                    " does not match predictor config " +
                                    std::to_string(config.predictor.flat_dim()));
    }

    // Hold out the tail for the monitors (windows are in time order).
    std::size_t n_val = static_cast<std::size_t>(config.val_fraction *
                                                 static_cast<double>(windows.size()));
    if (config.val_fraction > 0.0 && n_val == 0 && windows.size() > 1) n_val = 1;
    const std::size_t n_train = windows.size() - n_val;
    if (n_train == 0) throw std::invalid_argument("train: no training windows after validation split");
    const std::vector<WindowPair> val(windows.end() - n_val, windows.end());

    Pipeline p;
    p.branch = config.branch;
    p.config = config;
    p.knn_k = config.knn_k;
    p.schedule = build_schedule(config.T, config.beta_start, config.beta_end);
    p.params = std::make_unique<ad::ParamStore>();

    Rng seed_root(config.seed);
    Rng init_rng = seed_root.split("init");
    p.predictor = Predictor(config.predictor, *p.params, init_rng);
    if (config.branch == Branch::ebm) {
        p.ebm = std::make_unique<EnergyModel>(flat, config.ebm_hidden, *p.params, init_rng);
    } else {
        p.bank = MemoryBank(static_cast<std::size_t>(config.bank_capacity), flat);
    }

    const ad::AdamConfig adam{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
    const int warmup = std::min(config.bank_warmup_epochs, config.epochs - 1);
    Rng train_rng = seed_root.split("train");
    Rng monitor_rng = seed_root.split("monitor");

    long iteration = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order = train_rng.permutation(n_train);
        for (std::size_t begin = 0; begin < n_train; begin += config.batch) {
            const std::size_t count = std::min<std::size_t>(config.batch, n_train - begin);
            BatchTensors bt =
                assemble_batch(windows, order, begin, count, p.schedule, train_rng);

            ad::Tape tape(p.params.get());
            ad::NodeId l_dm = -1;
            std::vector<ad::NodeId> plus_rows, minus_rows;

            if (!spatiotemporal) {
                ad::NodeId xk = tape.constant(bt.x_k);
                ad::NodeId hist = tape.constant(bt.hist);
                ad::NodeId out = p.predictor.forward_batch(tape, xk, bt.ks, hist);
                l_dm = tape.scale(tape.squared_l2(tape.sub(out, tape.constant(bt.eps))),
                                  1.0 / static_cast<double>(count));
                if (config.lambda > 0.0 || branch_is_nonparametric(config.branch)) {
                    ad::NodeId x0 = tape.constant(bt.x0);
                    ad::NodeId plus = p.predictor.forward_batch(tape, x0, bt.zeros, hist);
                    ad::NodeId minus = p.predictor.forward_batch(tape, xk, bt.zeros, hist);
                    for (std::size_t i = 0; i < count; ++i) {
                        plus_rows.push_back(tape.slice(plus, 0, static_cast<int>(i), 1));
                        minus_rows.push_back(tape.slice(minus, 0, static_cast<int>(i), 1));
                    }
                }
            } else {
                const int n = config.predictor.n_nodes, d = config.predictor.d;
                const int h = config.predictor.history;
                const ad::NodeId xk_all = tape.constant(bt.x_k);
                const ad::NodeId x0_all = tape.constant(bt.x0);
                const ad::NodeId hist_all = tape.constant(bt.hist);
                const ad::NodeId eps_all = tape.constant(bt.eps);
                ad::NodeId acc = -1;
                for (std::size_t i = 0; i < count; ++i) {
                    const int bi = static_cast<int>(i);
                    ad::NodeId xk = tape.reshape(tape.slice(xk_all, 0, bi, 1), {n, d});
                    ad::NodeId hist = tape.reshape(tape.slice(hist_all, 0, bi, 1), {h, flat});
                    ad::NodeId out = p.predictor.forward(tape, xk, bt.ks[i], hist);
                    ad::NodeId sq = tape.squared_l2(
                        tape.sub(out, tape.reshape(tape.slice(eps_all, 0, bi, 1), {n, d})));
                    acc = acc < 0 ? sq : tape.add(acc, sq);
                    if (config.lambda > 0.0 || branch_is_nonparametric(config.branch)) {
                        ad::NodeId x0 = tape.reshape(tape.slice(x0_all, 0, bi, 1), {n, d});
                        plus_rows.push_back(tape.reshape(
                            p.predictor.forward(tape, x0, 0, hist), {1, flat}));
                        minus_rows.push_back(tape.reshape(
                            p.predictor.forward(tape, xk, 0, hist), {1, flat}));
                    }
                }
                l_dm = tape.scale(acc, 1.0 / static_cast<double>(count));
            }

            // Branch loss per Algorithm 1; lambda = 0 skips the evaluation but
            // the bank still fills (scoring needs it).
            ad::NodeId l_branch = tape.constant(Tensor::scalar(0.0));
            if (config.lambda > 0.0 && !plus_rows.empty()) {
                if (branch_is_nonparametric(config.branch)) {
                    ad::NodeId acc = -1;
                    for (std::size_t i = 0; i < count; ++i) {
                        ad::NodeId li =
                            np_training_loss(tape, plus_rows[i], minus_rows[i], p.bank,
                                             np_method(config), config.margin, config.knn_k);
                        acc = acc < 0 ? li : tape.add(acc, li);
                    }
                    l_branch = tape.scale(acc, 1.0 / static_cast<double>(count));
                } else {
                    // Both sample sets are detached: the energy model fits the
                    // static prediction clouds. Backprop through the Langevin
                    // chain would need second derivatives, and feeding energy
                    // gradients into the predictor lets the positives chase
                    // the energy minimum (the landscape never settles).
                    std::vector<ad::NodeId> e_plus, e_minus;
                    for (std::size_t i = 0; i < count; ++i) {
                        e_plus.push_back(tape.scale(tape.reshape(
                            p.ebm->f_node(tape, tape.constant(tape.value(plus_rows[i]))), {}),
                            -1.0));
                        Tensor init = tape.value(minus_rows[i]);
                        Tensor refined = langevin_refine(*p.ebm, init, config.langevin_steps,
                                                         config.langevin_delta, train_rng);
                        e_minus.push_back(tape.scale(tape.reshape(
                            p.ebm->f_node(tape, tape.constant(refined)), {}), -1.0));
                    }
                    l_branch = ebm_loss_node(tape, e_plus, e_minus, config.ebm_alpha);
                }
            }

            ad::NodeId l_total = tape.add(l_dm, tape.scale(l_branch, config.lambda));
            const double l_dm_v = tape.scalar(l_dm);
            const double l_branch_v = tape.scalar(l_branch);
            const double l_total_v = tape.scalar(l_total);
            if (!std::isfinite(l_total_v)) {
                throw std::runtime_error("train: non-finite loss at iteration " +
                                         std::to_string(iteration));
            }
            p.log.push_back({iteration, l_dm_v, l_branch_v, l_total_v});

            p.params->zero_grad();
            tape.backward(l_total);
            p.params->adam_step(adam);

            // FIFO bank update with the batch's positive predictions.
            if (branch_is_nonparametric(config.branch)) {
                for (const ad::NodeId row : plus_rows) {
                    p.bank.push(tape.value(row).reshaped({flat}));
                }
            }
            ++iteration;
        }

        if (branch_is_nonparametric(config.branch) && epoch + 1 == warmup) p.bank.clear();

        if (!val.empty()) {
            EpochStats es;
            es.epoch = epoch;
            if (spatiotemporal) {
                const Tensor adj = p.predictor.adjacency();
                for (int r = 0; r < adj.rows(); ++r) {
                    double sum = 0.0;
                    for (int c = 0; c < adj.cols(); ++c) sum += adj.at(r, c);
                    es.adj_row_sum_err = std::max(es.adj_row_sum_err, std::abs(sum - 1.0));
                }
            }
            double dm_acc = 0.0, norm_acc = 0.0;
            for (const auto& w : val) {
                const int k = monitor_rng.uniform_int(p.schedule.T);
                Tensor eps(w.x0.shape());
                for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = monitor_rng.normal();
                dm_acc += diffusion_loss(eps.reshaped({1, flat}),
                                         p.predictor.predict(forward_diffuse(w.x0, k, eps,
                                                                             p.schedule),
                                                             k, w.x_hist)
                                             .reshaped({1, flat}));
                Tensor eps1(w.x0.shape());
                for (std::size_t j = 0; j < eps1.size(); ++j) eps1[j] = monitor_rng.normal();
                const Tensor pred1 = p.predictor.predict(
                    forward_diffuse(w.x0, 1, eps1, p.schedule), 1, w.x_hist);
                double n2 = 0.0;
                for (std::size_t j = 0; j < pred1.size(); ++j) n2 += pred1[j] * pred1[j];
                norm_acc += n2;
            }
            es.val_dm = dm_acc / static_cast<double>(val.size());
            es.val_eps_norm2 = norm_acc / static_cast<double>(val.size());
            p.epoch_stats.push_back(es);

            if (config.early_stop_patience > 0) {
                if (es.val_dm < best_val - 1e-12) {
                    best_val = es.val_dm;
                    since_best = 0;
                } else if (++since_best >= config.early_stop_patience) {
                    break;
                }
            }
        }
    }

    if (config.branch == Branch::kde && p.bank.size() >= 2) {
        p.kde_bandwidth = silverman_bandwidth(p.bank);
    }
    if (config.branch == Branch::iforest) {
        if (static_cast<int>(p.bank.size()) < config.iforest_psi) {
            throw std::runtime_error("train: bank too small for iforest subsample " +
                                     std::to_string(config.iforest_psi));
        }
        p.iforest = iforest_fit(p.bank, config.iforest_trees, config.iforest_psi,
                                seed_root.split("iforest").stream_seed());
    }
    return p;
}

std::unique_ptr<NoiseScorer> make_scorer(const Pipeline& p) {
    switch (p.branch) {
        case Branch::kde: {
            if (p.bank.size() < 1 || !(p.kde_bandwidth > 0.0)) {
                throw std::runtime_error("pipeline has no usable bank/bandwidth for kde scoring");
            }
            return std::make_unique<KdeScorer>(p.bank, p.kde_bandwidth);
        }
        case Branch::knn:
            if (p.bank.size() < static_cast<std::size_t>(p.knn_k)) {
                throw std::runtime_error("pipeline bank smaller than knn k");
            }
            return std::make_unique<KnnScorer>(p.bank, p.knn_k);
        case Branch::iforest:
            if (!p.iforest.fitted()) throw std::runtime_error("pipeline has no fitted iforest");
            return std::make_unique<IforestScorer>(p.iforest);
        case Branch::ebm:
            if (!p.ebm) throw std::runtime_error("pipeline has no energy model");
            return std::make_unique<EnergyScorer>(*p.ebm);
    }
    throw std::runtime_error("unknown branch");
}

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write training log: " + path);
    std::fprintf(f, "iteration,l_dm,l_branch,l_total\n");
    for (const auto& row : log) {
        std::fprintf(f, "%ld,%.17g,%.17g,%.17g\n", row.iteration, row.l_dm, row.l_branch,
                     row.l_total);
    }
    std::fclose(f);
}

}  // namespace dtd
