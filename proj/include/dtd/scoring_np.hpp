#pragma once

#include <cstdint>
#include <vector>

#include "dtd/autodiff.hpp"
#include "dtd/rng.hpp"
#include "dtd/tensor.hpp"

namespace dtd {

// Bounded FIFO store of predicted noise vectors from normal data. Single
// writer (the training loop); scoring reads a frozen snapshot.
class MemoryBank {
  public:
    MemoryBank() = default;
    MemoryBank(std::size_t capacity, int dim);

    void push(const std::vector<double>& eps_plus);
    void push(const Tensor& eps_plus);
    void clear();

    std::size_t size() const {
        return dim_ > 0 ? entries_.size() / static_cast<std::size_t>(dim_) : 0;
    }
    std::size_t capacity() const { return capacity_; }
    int dim() const { return dim_; }
    bool empty() const { return entries_.empty(); }

    const double* entry(std::size_t i) const;
    const std::vector<double>& flat() const { return entries_; }

  private:
    std::size_t capacity_ = 0;
    int dim_ = 0;
    std::vector<double> entries_;  // oldest first
};

// h = 1.06 * sigma * M^(-1/5); sigma is the mean over dimensions of the
// per-dimension sample standard deviation. Rejects degenerate banks.
double silverman_bandwidth(const MemoryBank& bank);

// -log( (1/M) sum_i K_h(eps_hat, bank_i) + 1e-8 ), isotropic Gaussian kernel.
double kde_score(const Tensor& eps_hat, const MemoryBank& bank, double h);
std::vector<double> kde_score_batch(const std::vector<Tensor>& eps_hats, const MemoryBank& bank,
                                    double h);

// Mean Euclidean distance to the k nearest bank entries.
double knn_score(const Tensor& eps_hat, const MemoryBank& bank, int k);
std::vector<double> knn_score_batch(const std::vector<Tensor>& eps_hats, const MemoryBank& bank,
                                    int k);

struct IsolationTreeNode {
    int split_dim = -1;     // -1 marks a leaf
    double split_value = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t count = 0;  // points that reached this node during fitting
};

struct IsolationTree {
    std::vector<IsolationTreeNode> nodes;
};

struct IsolationForestModel {
    int n_trees = 0;
    int subsample = 0;  // psi
    int dim = 0;
    std::uint64_t seed = 0;
    std::vector<IsolationTree> trees;

    bool fitted() const { return !trees.empty(); }
};

// Average path length of an unsuccessful BST search; the paper's printed
// constant (0.5772, not 2*gamma) is authoritative here.
double iforest_avg_path_length(int n);

IsolationForestModel iforest_fit(const MemoryBank& bank, int n_trees, int subsample,
                                 std::uint64_t seed);
double iforest_score(const IsolationForestModel& model, const Tensor& eps_hat);
std::vector<double> iforest_score_batch(const IsolationForestModel& model,
                                        const std::vector<Tensor>& eps_hats);

// Differentiable branch scores against a detached bank snapshot, for the
// nonparametric training loss. Built from tape primitives so gradients flow
// into the query only.
ad::NodeId kde_score_node(ad::Tape& tape, ad::NodeId eps_hat, const MemoryBank& bank, double h);
ad::NodeId knn_score_node(ad::Tape& tape, ad::NodeId eps_hat, const MemoryBank& bank, int k);

enum class NpMethod { kde, knn, iforest };

// Margin contrastive loss max(0, margin + s(eps+) - s(eps-)). For the
// iforest branch the kNN score is the differentiable training surrogate.
// Empty bank contributes zero (warm-up).
ad::NodeId np_training_loss(ad::Tape& tape, ad::NodeId eps_plus, ad::NodeId eps_minus,
                            const MemoryBank& bank, NpMethod method, double margin, int knn_k);

}  // namespace dtd
