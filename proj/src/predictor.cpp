#include "dtd/predictor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dtd {

void PredictorConfig::validate() const {
    if (d < 1 || n_nodes < 1 || history < 1 || hidden < 1 || T < 2) {
        throw std::invalid_argument("predictor config: d, N, H, hidden >= 1 and T >= 2");
    }
    if (embed_dim < 1) throw std::invalid_argument("predictor config: embed_dim >= 1");
    if (cheb_order < 1) throw std::invalid_argument("predictor config: cheb_order >= 1");
    if (heads < 1 || hidden % heads != 0) {
        throw std::invalid_argument("predictor config: hidden must be divisible by heads");
    }
    if (layers < 1) throw std::invalid_argument("predictor config: layers >= 1");
}

ad::NodeId adaptive_adjacency_node(ad::Tape& tape, ad::NodeId node_embeddings) {
    ad::NodeId sim = tape.matmul(node_embeddings, tape.transpose(node_embeddings));
    return tape.softmax(tape.relu(sim));
}

Tensor adaptive_adjacency(const Tensor& node_embeddings) {
    ad::Tape tape;
    return tape.value(adaptive_adjacency_node(tape, tape.constant(node_embeddings)));
}

ad::NodeId chebyshev_conv(ad::Tape& tape, ad::NodeId x, ad::NodeId adjacency,
                          ad::NodeId node_embeddings, ad::NodeId weights_pool, int cheb_order,
                          int d_in, int d_out) {
    const int n = tape.value(adjacency).rows();
    const int e = tape.value(node_embeddings).cols();
    // A is row-stochastic, so A + I row-normalizes by exactly 1/2.
    ad::NodeId a_hat = tape.scale(tape.add(adjacency, tape.constant(Tensor::identity(n))), 0.5);

    std::vector<ad::NodeId> supports;  // T_j(A_hat) * X
    supports.push_back(x);
    if (cheb_order > 1) supports.push_back(tape.matmul(a_hat, x));
    for (int j = 2; j < cheb_order; ++j) {
        supports.push_back(tape.sub(tape.scale(tape.matmul(a_hat, supports[j - 1]), 2.0),
                                    supports[j - 2]));
    }

    ad::NodeId out = -1;
    for (int j = 0; j < cheb_order; ++j) {
        for (int r = 0; r < e; ++r) {
            ad::NodeId block = tape.slice(weights_pool, 0, (j * e + r) * d_in, d_in);
            ad::NodeId mixed = tape.matmul(supports[j], block);
            ad::NodeId scaled = tape.mul(tape.slice(node_embeddings, 1, r, 1), mixed);
            out = out < 0 ? scaled : tape.add(out, scaled);
        }
    }
    return out;
}

Predictor::Predictor(PredictorConfig config, ad::ParamStore& store, Rng& init_rng,
                     std::string prefix)
    : config_(config), prefix_(std::move(prefix)), store_(&store) {
    config_.validate();
    init_params(init_rng);
}

Predictor Predictor::attach(PredictorConfig config, ad::ParamStore& store, std::string prefix) {
    config.validate();
    Predictor p;
    p.config_ = config;
    p.prefix_ = std::move(prefix);
    p.store_ = &store;
    return p;
}

namespace {
double fan_in_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

void Predictor::init_params(Rng& rng) {
    auto lin = [&](const std::string& name, int in, int out) {
        store_->create(prefix_ + name + ".w", rng.normal_tensor({in, out}, fan_in_std(in)));
        store_->create(prefix_ + name + ".b", Tensor::zeros({1, out}));
    };
    const int hidden = config_.hidden;
    store_->create(prefix_ + "emb", rng.normal_tensor({config_.T, hidden}, 0.1));

    if (config_.variant == PredictorVariant::mlp) {
        const int flat = config_.flat_dim();
        const int in = flat + config_.history * flat + hidden;
        lin("l1", in, hidden);
        lin("l2", hidden, hidden);
        lin("l3", hidden, flat);
        return;
    }

    store_->create(prefix_ + "node_emb", rng.normal_tensor({config_.n_nodes, config_.embed_dim}, 1.0));
    lin("in", config_.d, hidden);
    for (const char* gate : {"z", "r", "c"}) {
        lin(std::string("enc.") + gate + ".x", hidden, hidden);
        lin(std::string("enc.") + gate + ".s", hidden, hidden);
    }
    lin("attn.q", hidden, hidden);
    lin("attn.k", hidden, hidden);
    lin("attn.v", hidden, hidden);
    lin("attn.o", hidden, hidden);
    const int pool_rows = config_.cheb_order * config_.embed_dim * 2 * hidden;
    for (int l = 0; l < config_.layers; ++l) {
        const std::string base = "gconv" + std::to_string(l) + ".";
        for (const char* gate : {"z", "r", "c"}) {
            store_->create(prefix_ + base + gate + ".pool",
                           rng.normal_tensor({pool_rows, hidden},
                                             fan_in_std(2 * hidden) /
                                                 std::sqrt(static_cast<double>(config_.embed_dim))));
            store_->create(prefix_ + base + gate + ".b", Tensor::zeros({1, hidden}));
        }
    }
    lin("res1", hidden, hidden);
    lin("res2", hidden, hidden);
    lin("proj1", 2 * hidden, hidden);
    lin("proj2", hidden, config_.d);
}

void Predictor::check_k(int k) const {
    if (k < 0 || k >= config_.T) {
        throw std::invalid_argument("diffusion step " + std::to_string(k) + " outside [0, " +
                                    std::to_string(config_.T) + ")");
    }
}

// Plain GRU cell; x and state are N x hidden, weights shared across nodes.
ad::NodeId Predictor::gru_step(ad::Tape& tape, ad::NodeId x, ad::NodeId state,
                               const std::string& cell) const {
    auto gate = [&](const char* g, ad::NodeId xin, ad::NodeId sin) {
        ad::NodeId pre = tape.add(tape.matmul(xin, tape.param(prefix_ + cell + "." + g + ".x.w")),
                                  tape.param(prefix_ + cell + "." + g + ".x.b"));
        pre = tape.add(pre, tape.matmul(sin, tape.param(prefix_ + cell + "." + g + ".s.w")));
        pre = tape.add(pre, tape.param(prefix_ + cell + "." + g + ".s.b"));
        return pre;
    };
    ad::NodeId z = tape.sigmoid(gate("z", x, state));
    ad::NodeId r = tape.sigmoid(gate("r", x, state));
    ad::NodeId c = tape.tanh(gate("c", x, tape.mul(r, state)));
    // h' = (1 - z) * h + z * c
    return tape.add(tape.sub(state, tape.mul(z, state)), tape.mul(z, c));
}

ad::NodeId Predictor::forward_mlp_features(ad::Tape& tape, ad::NodeId features) const {
    ad::NodeId h1 = tape.tanh(tape.add(tape.matmul(features, tape.param(prefix_ + "l1.w")),
                                       tape.param(prefix_ + "l1.b")));
    ad::NodeId h2 = tape.tanh(tape.add(tape.matmul(h1, tape.param(prefix_ + "l2.w")),
                                       tape.param(prefix_ + "l2.b")));
    return tape.add(tape.matmul(h2, tape.param(prefix_ + "l3.w")), tape.param(prefix_ + "l3.b"));
}

ad::NodeId Predictor::forward(ad::Tape& tape, ad::NodeId x_k, int k, ad::NodeId x_hist) const {
    check_k(k);
    const int flat = config_.flat_dim();
    if (static_cast<int>(tape.value(x_k).size()) != flat) {
        throw std::invalid_argument("predictor: sample size " +
                                    std::to_string(tape.value(x_k).size()) + " != " +
                                    std::to_string(flat));
    }
    if (static_cast<int>(tape.value(x_hist).size()) != config_.history * flat) {
        throw std::invalid_argument("predictor: history size " +
                                    std::to_string(tape.value(x_hist).size()) + " != " +
                                    std::to_string(config_.history * flat));
    }
    if (config_.variant == PredictorVariant::mlp) {
        ad::NodeId emb_k = tape.slice(tape.param(prefix_ + "emb"), 0, k, 1);
        ad::NodeId features = tape.concat(
            {tape.reshape(x_k, {1, flat}), tape.reshape(x_hist, {1, config_.history * flat}),
             emb_k},
            1);
        return tape.reshape(forward_mlp_features(tape, features), tape.value(x_k).shape());
    }
    return forward_spatiotemporal(tape, x_k, k, x_hist);
}

ad::NodeId Predictor::forward_batch(ad::Tape& tape, ad::NodeId x_k, const std::vector<int>& ks,
                                    ad::NodeId x_hist) const {
    if (config_.variant != PredictorVariant::mlp) {
        throw std::invalid_argument("batched forward is only available for the mlp variant");
    }
    const int b = tape.value(x_k).rows();
    if (static_cast<int>(ks.size()) != b || tape.value(x_hist).rows() != b) {
        throw std::invalid_argument("forward_batch: batch sizes disagree");
    }
    ad::NodeId emb = tape.param(prefix_ + "emb");
    std::vector<ad::NodeId> emb_rows;
    emb_rows.reserve(ks.size());
    for (int k : ks) {
        check_k(k);
        emb_rows.push_back(tape.slice(emb, 0, k, 1));
    }
    ad::NodeId features = tape.concat({x_k, x_hist, tape.concat(emb_rows, 0)}, 1);
    return forward_mlp_features(tape, features);
}

ad::NodeId Predictor::forward_spatiotemporal(ad::Tape& tape, ad::NodeId x_k, int k,
                                             ad::NodeId x_hist) const {
    const int n = config_.n_nodes;
    const int d = config_.d;
    const int hidden = config_.hidden;
    const int heads = config_.heads;
    const int dh = hidden / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    auto embed = [&](ad::NodeId rows_nd) {
        return tape.tanh(tape.add(tape.matmul(rows_nd, tape.param(prefix_ + "in.w")),
                                  tape.param(prefix_ + "in.b")));
    };

    // History encoder: shared GRU over time, per-node states.
    std::vector<ad::NodeId> enc_states;
    enc_states.reserve(config_.history);
    ad::NodeId state = tape.constant(Tensor::zeros({n, hidden}));
    for (int t = 0; t < config_.history; ++t) {
        ad::NodeId step = tape.reshape(tape.slice(x_hist, 0, t, 1), {n, d});
        state = gru_step(tape, embed(step), state, "enc");
        enc_states.push_back(state);
    }

    // Multihead attention over time; the current sample is the query.
    ad::NodeId q0 = embed(tape.reshape(x_k, {n, d}));
    ad::NodeId q = tape.matmul(q0, tape.param(prefix_ + "attn.q.w"));
    std::vector<ad::NodeId> keys, values;
    keys.reserve(enc_states.size());
    values.reserve(enc_states.size());
    for (ad::NodeId g : enc_states) {
        keys.push_back(tape.matmul(g, tape.param(prefix_ + "attn.k.w")));
        values.push_back(tape.matmul(g, tape.param(prefix_ + "attn.v.w")));
    }
    ad::NodeId ones_dh = tape.constant(Tensor::full({dh, 1}, 1.0));
    std::vector<ad::NodeId> head_outputs;
    for (int h = 0; h < heads; ++h) {
        ad::NodeId qh = tape.slice(q, 1, h * dh, dh);
        std::vector<ad::NodeId> score_cols;
        score_cols.reserve(keys.size());
        for (ad::NodeId kt : keys) {
            ad::NodeId kh = tape.slice(kt, 1, h * dh, dh);
            score_cols.push_back(
                tape.scale(tape.matmul(tape.mul(qh, kh), ones_dh), inv_sqrt_dh));
        }
        ad::NodeId attn = tape.softmax(tape.concat(score_cols, 1));  // N x H
        ad::NodeId out_h = -1;
        for (int t = 0; t < static_cast<int>(values.size()); ++t) {
            ad::NodeId vh = tape.slice(values[t], 1, h * dh, dh);
            ad::NodeId w = tape.slice(attn, 1, t, 1);  // N x 1 broadcast
            ad::NodeId term = tape.mul(w, vh);
            out_h = out_h < 0 ? term : tape.add(out_h, term);
        }
        head_outputs.push_back(out_h);
    }
    ad::NodeId fused = tape.add(tape.matmul(tape.concat(head_outputs, 1),
                                            tape.param(prefix_ + "attn.o.w")),
                                tape.param(prefix_ + "attn.o.b"));
    fused = tape.add(fused, q0);
    fused = tape.add(fused, tape.slice(tape.param(prefix_ + "emb"), 0, k, 1));

    // Spatiotemporal core: graph-convolutional GRU over the encoded sequence.
    ad::NodeId node_emb = tape.param(prefix_ + "node_emb");
    ad::NodeId adjacency = adaptive_adjacency_node(tape, node_emb);
    ad::NodeId h = fused;
    for (int l = 0; l < config_.layers; ++l) {
        const std::string base = prefix_ + "gconv" + std::to_string(l) + ".";
        for (ad::NodeId u : enc_states) {
            auto conv_gate = [&](const char* g, ad::NodeId input) {
                ad::NodeId pre =
                    chebyshev_conv(tape, input, adjacency, node_emb, tape.param(base + g + ".pool"),
                                   config_.cheb_order, 2 * hidden, hidden);
                return tape.add(pre, tape.param(base + g + ".b"));
            };
            ad::NodeId uh = tape.concat(u, h, 1);
            ad::NodeId z = tape.sigmoid(conv_gate("z", uh));
            ad::NodeId r = tape.sigmoid(conv_gate("r", uh));
            ad::NodeId c = tape.tanh(conv_gate("c", tape.concat(u, tape.mul(r, h), 1)));
            h = tape.add(tape.sub(h, tape.mul(z, h)), tape.mul(z, c));
        }
    }

    // Residual block, then projection over concatenated features.
    ad::NodeId res = tape.tanh(tape.add(tape.matmul(h, tape.param(prefix_ + "res1.w")),
                                        tape.param(prefix_ + "res1.b")));
    res = tape.add(tape.matmul(res, tape.param(prefix_ + "res2.w")),
                   tape.param(prefix_ + "res2.b"));
    h = tape.add(h, res);
    ad::NodeId proj = tape.tanh(tape.add(tape.matmul(tape.concat(h, q0, 1),
                                                     tape.param(prefix_ + "proj1.w")),
                                         tape.param(prefix_ + "proj1.b")));
    ad::NodeId out = tape.add(tape.matmul(proj, tape.param(prefix_ + "proj2.w")),
                              tape.param(prefix_ + "proj2.b"));
    return tape.reshape(out, tape.value(x_k).shape());
}

Tensor Predictor::predict(const Tensor& x_k, int k, const Tensor& x_hist) const {
    ad::Tape tape(store_);
    return tape.value(forward(tape, tape.constant(x_k), k, tape.constant(x_hist)));
}

Tensor Predictor::adjacency() const {
    if (config_.variant != PredictorVariant::spatiotemporal) {
        throw std::invalid_argument("adjacency export requires the spatiotemporal variant");
    }
    return adaptive_adjacency(store_->value(prefix_ + "node_emb"));
}

}  // namespace dtd
