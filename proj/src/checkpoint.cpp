#include "dtd/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dtd {

using nlohmann::json;

DataMeta data_meta_from(const TimeSeriesDataset& ds, int history, int stride, double train_frac,
                        double val_frac) {
    DataMeta meta;
    meta.channel_names = ds.channel_names;
    meta.channel_mean = ds.channel_mean;
    meta.channel_std = ds.channel_std;
    meta.history = history;
    meta.stride = stride;
    meta.train_frac = train_frac;
    meta.val_frac = val_frac;
    meta.grouping = ds.grouping;
    return meta;
}

void apply_data_meta(TimeSeriesDataset& ds, const DataMeta& meta) {
    if (ds.channel_names != meta.channel_names) {
        throw std::runtime_error(
            "checkpoint: data channels do not match the training channels");
    }
    ds.channel_mean = meta.channel_mean;
    ds.channel_std = meta.channel_std;
    ds.grouping = meta.grouping;
    DatasetSchema schema;
    schema.train_frac = meta.train_frac;
    schema.val_frac = meta.val_frac;
    // reuse stored statistics verbatim; only the split indices move
    ds.train_end = static_cast<long>(schema.train_frac * static_cast<double>(ds.length));
    ds.val_end = static_cast<long>((schema.train_frac + schema.val_frac) *
                                   static_cast<double>(ds.length));
}

namespace {

json params_to_json(const ad::ParamStore& store) {
    json out = json::object();
    for (const auto& name : store.names()) {
        const Tensor& v = store.value(name);
        out[name] = {{"shape", v.shape()},
                     {"data", std::vector<double>(v.data(), v.data() + v.size())}};
    }
    return out;
}

void params_from_json(const json& j, ad::ParamStore& store) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::vector<int> shape = it.value().at("shape").get<std::vector<int>>();
        std::vector<double> data = it.value().at("data").get<std::vector<double>>();
        store.create(it.key(), Tensor(shape, std::move(data)));
    }
}

json variant_to_json(PredictorVariant v) {
    return v == PredictorVariant::mlp ? "mlp" : "spatiotemporal";
}

PredictorVariant variant_from_json(const std::string& s) {
    if (s == "mlp") return PredictorVariant::mlp;
    if (s == "spatiotemporal") return PredictorVariant::spatiotemporal;
    throw std::runtime_error("checkpoint: unknown predictor variant '" + s + "'");
}

}  // namespace

void save_checkpoint(const Pipeline& p, const DataMeta& meta, const std::string& path) {
    json j;
    j["version"] = kCheckpointVersion;
    j["branch"] = branch_to_string(p.branch);
    j["schedule"] = {{"T", p.schedule.T},
                     {"beta_start", p.schedule.beta_start},
                     {"beta_end", p.schedule.beta_end}};
    const auto& pc = p.predictor.config();
    j["predictor"] = {{"variant", variant_to_json(pc.variant)},
                      {"d", pc.d},
                      {"n_nodes", pc.n_nodes},
                      {"history", pc.history},
                      {"hidden", pc.hidden},
                      {"embed_dim", pc.embed_dim},
                      {"cheb_order", pc.cheb_order},
                      {"heads", pc.heads},
                      {"layers", pc.layers}};
    if (branch_is_nonparametric(p.branch)) {
        json entries = json::array();
        for (std::size_t i = 0; i < p.bank.size(); ++i) {
            entries.push_back(std::vector<double>(p.bank.entry(i), p.bank.entry(i) + p.bank.dim()));
        }
        j["bank"] = {{"capacity", p.bank.capacity()}, {"dim", p.bank.dim()}, {"entries", entries}};
        j["np"] = {{"knn_k", p.knn_k}, {"kde_bandwidth", p.kde_bandwidth}};
        if (p.branch == Branch::iforest) {
            json trees = json::array();
            for (const auto& tree : p.iforest.trees) {
                json nodes = json::array();
                for (const auto& n : tree.nodes) {
                    nodes.push_back({n.split_dim, n.split_value, n.left, n.right, n.count});
                }
                trees.push_back(std::move(nodes));
            }
            j["iforest"] = {{"n_trees", p.iforest.n_trees},
                            {"subsample", p.iforest.subsample},
                            {"dim", p.iforest.dim},
                            {"seed", p.iforest.seed},
                            {"trees", std::move(trees)}};
        }
    } else {
        j["ebm"] = {{"hidden", p.ebm->hidden()}, {"dim", p.ebm->dim()}};
    }
    j["params"] = params_to_json(*p.params);
    json data = {{"channels", meta.channel_names},
                 {"mean", meta.channel_mean},
                 {"std", meta.channel_std},
                 {"history", meta.history},
                 {"stride", meta.stride},
                 {"train_frac", meta.train_frac},
                 {"val_frac", meta.val_frac}};
    if (meta.grouping) {
        json g = json::object();
        for (std::size_t i = 0; i < meta.grouping->node_names.size(); ++i) {
            json chans = json::array();
            for (int c : meta.grouping->node_channels[i]) chans.push_back(meta.channel_names[c]);
            g[meta.grouping->node_names[i]] = std::move(chans);
        }
        data["grouping"] = std::move(g);
    }
    j["data"] = std::move(data);

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(1) << "\n";
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }

    LoadedCheckpoint lc;
    Pipeline& p = lc.pipeline;
    p.branch = branch_from_string(j.at("branch").get<std::string>());
    const auto& sj = j.at("schedule");
    p.schedule = build_schedule(sj.at("T").get<int>(), sj.at("beta_start").get<double>(),
                                sj.at("beta_end").get<double>());

    PredictorConfig pc;
    const auto& pj = j.at("predictor");
    pc.variant = variant_from_json(pj.at("variant").get<std::string>());
    pc.d = pj.at("d").get<int>();
    pc.n_nodes = pj.at("n_nodes").get<int>();
    pc.history = pj.at("history").get<int>();
    pc.hidden = pj.at("hidden").get<int>();
    pc.embed_dim = pj.at("embed_dim").get<int>();
    pc.cheb_order = pj.at("cheb_order").get<int>();
    pc.heads = pj.at("heads").get<int>();
    pc.layers = pj.at("layers").get<int>();
    pc.T = p.schedule.T;

    p.params = std::make_unique<ad::ParamStore>();
    params_from_json(j.at("params"), *p.params);
    p.predictor = Predictor::attach(pc, *p.params);

    if (branch_is_nonparametric(p.branch)) {
        const auto& bj = j.at("bank");
        p.bank = MemoryBank(bj.at("capacity").get<std::size_t>(), bj.at("dim").get<int>());
        for (const auto& e : bj.at("entries")) {
            p.bank.push(e.get<std::vector<double>>());
        }
        p.knn_k = j.at("np").at("knn_k").get<int>();
        p.kde_bandwidth = j.at("np").at("kde_bandwidth").get<double>();
        if (p.branch == Branch::iforest) {
            const auto& fj = j.at("iforest");
            p.iforest.n_trees = fj.at("n_trees").get<int>();
            p.iforest.subsample = fj.at("subsample").get<int>();
            p.iforest.dim = fj.at("dim").get<int>();
            p.iforest.seed = fj.at("seed").get<std::uint64_t>();
            for (const auto& tj : fj.at("trees")) {
                IsolationTree tree;
                for (const auto& nj : tj) {
                    IsolationTreeNode n;
                    n.split_dim = nj.at(0).get<int>();
                    n.split_value = nj.at(1).get<double>();
                    n.left = nj.at(2).get<std::int32_t>();
                    n.right = nj.at(3).get<std::int32_t>();
                    n.count = nj.at(4).get<std::int32_t>();
                    tree.nodes.push_back(n);
                }
                p.iforest.trees.push_back(std::move(tree));
            }
        }
    } else {
        const auto& ej = j.at("ebm");
        p.ebm = std::make_unique<EnergyModel>(EnergyModel::attach(
            ej.at("dim").get<int>(), ej.at("hidden").get<int>(), *p.params));
    }

    DataMeta& meta = lc.meta;
    const auto& dj = j.at("data");
    meta.channel_names = dj.at("channels").get<std::vector<std::string>>();
    meta.channel_mean = dj.at("mean").get<std::vector<double>>();
    meta.channel_std = dj.at("std").get<std::vector<double>>();
    meta.history = dj.at("history").get<int>();
    meta.stride = dj.at("stride").get<int>();
    meta.train_frac = dj.at("train_frac").get<double>();
    meta.val_frac = dj.at("val_frac").get<double>();
    if (dj.contains("grouping")) {
        NodeGrouping g;
        for (auto it = dj.at("grouping").begin(); it != dj.at("grouping").end(); ++it) {
            g.node_names.push_back(it.key());
            std::vector<int> idx;
            for (const auto& ch : it.value()) {
                const std::string name = ch.get<std::string>();
                auto pos =
                    std::find(meta.channel_names.begin(), meta.channel_names.end(), name);
                if (pos == meta.channel_names.end()) {
                    throw std::runtime_error("checkpoint: grouping channel '" + name +
                                             "' missing from channel list");
                }
                idx.push_back(static_cast<int>(pos - meta.channel_names.begin()));
            }
            g.node_channels.push_back(std::move(idx));
        }
        meta.grouping = std::move(g);
    }

    // Restore the fields of the train config that scoring relies on.
    p.config.branch = p.branch;
    p.config.T = p.schedule.T;
    p.config.beta_start = p.schedule.beta_start;
    p.config.beta_end = p.schedule.beta_end;
    p.config.predictor = pc;
    p.config.knn_k = p.knn_k;
    return lc;
}

}  // namespace dtd
