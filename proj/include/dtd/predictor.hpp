#pragma once

#include <string>
#include <vector>

#include "dtd/autodiff.hpp"
#include "dtd/rng.hpp"
#include "dtd/tensor.hpp"

namespace dtd {

enum class PredictorVariant { mlp, spatiotemporal };

struct PredictorConfig {
    PredictorVariant variant = PredictorVariant::mlp;
    int d = 1;          // features per node
    int n_nodes = 1;    // N (1 for flat data)
    int history = 16;   // H
    int hidden = 64;
    int embed_dim = 16;  // node-embedding width e
    int cheb_order = 2;
    int heads = 2;
    int layers = 2;
    int T = 1000;  // timestep embedding rows; must match the schedule

    int flat_dim() const { return d * n_nodes; }
    void validate() const;
};

// Row-softmax(relu(E E^T)): nonnegative, rows sum to 1.
ad::NodeId adaptive_adjacency_node(ad::Tape& tape, ad::NodeId node_embeddings);
Tensor adaptive_adjacency(const Tensor& node_embeddings);

// out = sum_j T_j(A_hat) X W_j with T_0 = I, T_1 = A_hat,
// T_j = 2 A_hat T_{j-1} - T_{j-2}; A_hat = (A + I)/2 (row-normalized since A
// is row-stochastic). Per-node weights W_j come from node_embeddings x pool;
// pool is (cheb_order * e * d_in) x d_out with the d_in x d_out block for
// (order j, embedding dim r) at row offset (j*e + r)*d_in.
ad::NodeId chebyshev_conv(ad::Tape& tape, ad::NodeId x, ad::NodeId adjacency,
                          ad::NodeId node_embeddings, ad::NodeId weights_pool, int cheb_order,
                          int d_in, int d_out);

// Noise predictor eps_theta(x_k, k, x_hist). The spatiotemporal variant
// follows: shared input embedding -> GRU history encoder producing H
// keys/values -> multihead attention with the current sample as query ->
// timestep embedding added to the fused features -> graph-convolutional GRU
// over the encoded sequence -> residual block -> projection back to N x d.
// The MLP variant concatenates flattened sample, history and timestep
// embedding into a 3-layer MLP.
class Predictor {
  public:
    Predictor() = default;
    Predictor(PredictorConfig config, ad::ParamStore& store, Rng& init_rng,
              std::string prefix = "pred.");

    // Bind to parameters that already exist in the store (checkpoint load).
    static Predictor attach(PredictorConfig config, ad::ParamStore& store,
                            std::string prefix = "pred.");

    // x_k: 1 x flat (mlp) or N x d (spatiotemporal); x_hist: H x flat.
    ad::NodeId forward(ad::Tape& tape, ad::NodeId x_k, int k, ad::NodeId x_hist) const;

    // Batched MLP forward: x_k B x flat, x_hist B x (H*flat), one k per row.
    ad::NodeId forward_batch(ad::Tape& tape, ad::NodeId x_k, const std::vector<int>& ks,
                             ad::NodeId x_hist) const;

    // Plain evaluation on a scratch tape; output shape matches x_k.
    Tensor predict(const Tensor& x_k, int k, const Tensor& x_hist) const;

    // Current adaptive adjacency (spatiotemporal only).
    Tensor adjacency() const;

    const PredictorConfig& config() const { return config_; }
    const std::string& prefix() const { return prefix_; }

  private:
    void init_params(Rng& rng);
    ad::NodeId forward_mlp_features(ad::Tape& tape, ad::NodeId features) const;
    ad::NodeId forward_spatiotemporal(ad::Tape& tape, ad::NodeId x_k, int k,
                                      ad::NodeId x_hist) const;
    ad::NodeId gru_step(ad::Tape& tape, ad::NodeId x, ad::NodeId state,
                        const std::string& cell) const;
    void check_k(int k) const;

    PredictorConfig config_;
    std::string prefix_;
    ad::ParamStore* store_ = nullptr;
};

}  // namespace dtd
