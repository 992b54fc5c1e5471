#include "dtd/scoring_np.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "dtd/kernels.hpp"

namespace dtd {

// ---------------------------------------------------------------------------
// MemoryBank

MemoryBank::MemoryBank(std::size_t capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim <= 0) {
        throw std::invalid_argument("memory bank needs capacity >= 1 and dim >= 1");
    }
    entries_.reserve(capacity * static_cast<std::size_t>(dim));
}

void MemoryBank::push(const std::vector<double>& eps_plus) {
    if (static_cast<int>(eps_plus.size()) != dim_) {
        throw std::invalid_argument("bank entry dimension " + std::to_string(eps_plus.size()) +
                                    " does not match bank dim " + std::to_string(dim_));
    }
    if (size() == capacity_) {
        entries_.erase(entries_.begin(), entries_.begin() + dim_);
    }
    entries_.insert(entries_.end(), eps_plus.begin(), eps_plus.end());
}

void MemoryBank::push(const Tensor& eps_plus) {
    if (static_cast<int>(eps_plus.size()) != dim_) {
        throw std::invalid_argument("bank entry dimension " + std::to_string(eps_plus.size()) +
                                    " does not match bank dim " + std::to_string(dim_));
    }
    if (size() == capacity_) {
        entries_.erase(entries_.begin(), entries_.begin() + dim_);
    }
    entries_.insert(entries_.end(), eps_plus.data(), eps_plus.data() + eps_plus.size());
}

void MemoryBank::clear() { entries_.clear(); }

const double* MemoryBank::entry(std::size_t i) const {
    return entries_.data() + i * static_cast<std::size_t>(dim_);
}

// ---------------------------------------------------------------------------
// Bandwidth and scores

double silverman_bandwidth(const MemoryBank& bank) {
    const std::size_t m = bank.size();
    if (m < 2) throw std::invalid_argument("bandwidth needs at least 2 bank entries");
    const int d = bank.dim();
    double sigma_acc = 0.0;
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += bank.entry(i)[c];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double dv = bank.entry(i)[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(m - 1);
        sigma_acc += std::sqrt(var);
    }
    const double sigma = sigma_acc / static_cast<double>(d);
    if (sigma <= 0.0) throw std::invalid_argument("degenerate bank: zero spread");
    return 1.06 * sigma * std::pow(static_cast<double>(m), -0.2);
}

namespace {

double kde_normalizer(int d, double h) {
    return std::pow(2.0 * std::numbers::pi * h * h, -0.5 * static_cast<double>(d));
}

void check_query(const Tensor& eps_hat, int dim, const char* what) {
    if (static_cast<int>(eps_hat.size()) != dim) {
        throw std::invalid_argument(std::string(what) + ": query dimension " +
                                    std::to_string(eps_hat.size()) + " does not match bank dim " +
                                    std::to_string(dim));
    }
}

}  // namespace

double kde_score(const Tensor& eps_hat, const MemoryBank& bank, double h) {
    if (bank.empty()) throw std::invalid_argument("kde_score: empty bank");
    if (!(h > 0.0)) throw std::invalid_argument("kde_score: bandwidth must be positive");
    check_query(eps_hat, bank.dim(), "kde_score");
    double ksum = 0.0;
    kernels::kde_kernel_sums(eps_hat.data(), 1, bank.flat().data(),
                             static_cast<int>(bank.size()), bank.dim(), h, &ksum);
    const double density =
        kde_normalizer(bank.dim(), h) * ksum / static_cast<double>(bank.size());
    return -std::log(density + 1e-8);
}

std::vector<double> kde_score_batch(const std::vector<Tensor>& eps_hats, const MemoryBank& bank,
                                    double h) {
    if (bank.empty()) throw std::invalid_argument("kde_score: empty bank");
    if (!(h > 0.0)) throw std::invalid_argument("kde_score: bandwidth must be positive");
    const int d = bank.dim();
    std::vector<double> queries;
    queries.reserve(eps_hats.size() * static_cast<std::size_t>(d));
    for (const auto& q : eps_hats) {
        check_query(q, d, "kde_score");
        queries.insert(queries.end(), q.data(), q.data() + q.size());
    }
    std::vector<double> sums(eps_hats.size());
    kernels::kde_kernel_sums(queries.data(), static_cast<int>(eps_hats.size()),
                             bank.flat().data(), static_cast<int>(bank.size()), d, h,
                             sums.data());
    const double norm = kde_normalizer(d, h);
    std::vector<double> out(eps_hats.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
        out[i] = -std::log(norm * sums[i] / static_cast<double>(bank.size()) + 1e-8);
    }
    return out;
}

namespace {

double knn_score_one(const double* q, const MemoryBank& bank, int k) {
    const std::size_t m = bank.size();
    std::vector<double> dist(m);
    for (std::size_t i = 0; i < m; ++i) {
        dist[i] = std::sqrt(kernels::squared_distance(q, bank.entry(i), bank.dim()));
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += dist[i];
    return acc / static_cast<double>(k);
}

}  // namespace

double knn_score(const Tensor& eps_hat, const MemoryBank& bank, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > bank.size()) {
        throw std::invalid_argument("knn_score: k = " + std::to_string(k) +
                                    " outside [1, " + std::to_string(bank.size()) + "]");
    }
    check_query(eps_hat, bank.dim(), "knn_score");
    return knn_score_one(eps_hat.data(), bank, k);
}

std::vector<double> knn_score_batch(const std::vector<Tensor>& eps_hats, const MemoryBank& bank,
                                    int k) {
    if (k < 1 || static_cast<std::size_t>(k) > bank.size()) {
        throw std::invalid_argument("knn_score: k = " + std::to_string(k) +
                                    " outside [1, " + std::to_string(bank.size()) + "]");
    }
    std::vector<double> out(eps_hats.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(eps_hats.size()); ++i) {
        check_query(eps_hats[i], bank.dim(), "knn_score");
        out[i] = knn_score_one(eps_hats[i].data(), bank, k);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Isolation forest

double iforest_avg_path_length(int n) {
    if (n <= 1) return 0.0;
    const double nn = static_cast<double>(n);
    return 2.0 * std::log(nn - 1.0) + 0.5772 - 2.0 * (nn - 1.0) / nn;
}

namespace {

struct TreeBuilder {
    const MemoryBank& bank;
    IsolationTree& tree;
    Rng& rng;
    int height_limit;

    std::int32_t build(std::vector<std::size_t>& points, int depth) {
        IsolationTreeNode node;
        node.count = static_cast<std::int32_t>(points.size());
        const std::int32_t id = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.push_back(node);
        if (points.size() <= 1 || depth >= height_limit) return id;

        const int d = bank.dim();
        std::vector<int> splittable;
        std::vector<double> lo(d), hi(d);
        for (int c = 0; c < d; ++c) {
            lo[c] = hi[c] = bank.entry(points[0])[c];
            for (std::size_t i = 1; i < points.size(); ++i) {
                lo[c] = std::min(lo[c], bank.entry(points[i])[c]);
                hi[c] = std::max(hi[c], bank.entry(points[i])[c]);
            }
            if (hi[c] > lo[c]) splittable.push_back(c);
        }
        if (splittable.empty()) return id;  // all points identical

        const int dim = splittable[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(splittable.size())))];
        const double split = rng.uniform(lo[dim], hi[dim]);

        std::vector<std::size_t> left_pts, right_pts;
        for (std::size_t p : points) {
            (bank.entry(p)[dim] < split ? left_pts : right_pts).push_back(p);
        }
        if (left_pts.empty() || right_pts.empty()) return id;  // degenerate draw

        tree.nodes[id].split_dim = dim;
        tree.nodes[id].split_value = split;
        const std::int32_t l = build(left_pts, depth + 1);
        tree.nodes[id].left = l;
        const std::int32_t r = build(right_pts, depth + 1);
        tree.nodes[id].right = r;
        return id;
    }
};

double tree_path_length(const IsolationTree& tree, const double* q) {
    std::int32_t id = 0;
    int depth = 0;
    while (tree.nodes[id].split_dim >= 0) {
        const auto& n = tree.nodes[id];
        id = q[n.split_dim] < n.split_value ? n.left : n.right;
        ++depth;
    }
    return static_cast<double>(depth) + iforest_avg_path_length(tree.nodes[id].count);
}

}  // namespace

IsolationForestModel iforest_fit(const MemoryBank& bank, int n_trees, int subsample,
                                 std::uint64_t seed) {
    if (n_trees < 1) throw std::invalid_argument("iforest_fit: need at least one tree");
    if (subsample < 2 || static_cast<std::size_t>(subsample) > bank.size()) {
        throw std::invalid_argument("iforest_fit: subsample " + std::to_string(subsample) +
                                    " outside [2, bank size " + std::to_string(bank.size()) + "]");
    }
    IsolationForestModel model;
    model.n_trees = n_trees;
    model.subsample = subsample;
    model.dim = bank.dim();
    model.seed = seed;
    model.trees.resize(n_trees);
    const int height_limit =
        static_cast<int>(std::ceil(std::log2(static_cast<double>(subsample))));
    Rng root(seed);
    for (int t = 0; t < n_trees; ++t) {
        Rng tree_rng = root.split(static_cast<std::uint64_t>(t));
        // psi-subsample without replacement
        std::vector<std::size_t> perm = tree_rng.permutation(bank.size());
        std::vector<std::size_t> points(perm.begin(), perm.begin() + subsample);
        TreeBuilder builder{bank, model.trees[t], tree_rng, height_limit};
        builder.build(points, 0);
    }
    return model;
}

double iforest_score(const IsolationForestModel& model, const Tensor& eps_hat) {
    if (!model.fitted()) throw std::invalid_argument("iforest_score: model not fitted");
    check_query(eps_hat, model.dim, "iforest_score");
    double acc = 0.0;
    for (const auto& tree : model.trees) acc += tree_path_length(tree, eps_hat.data());
    const double expected = acc / static_cast<double>(model.n_trees);
    return std::pow(2.0, -expected / iforest_avg_path_length(model.subsample));
}

std::vector<double> iforest_score_batch(const IsolationForestModel& model,
                                        const std::vector<Tensor>& eps_hats) {
    std::vector<double> out(eps_hats.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(eps_hats.size()); ++i) {
        out[i] = iforest_score(model, eps_hats[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Differentiable branch scores

ad::NodeId kde_score_node(ad::Tape& tape, ad::NodeId eps_hat, const MemoryBank& bank, double h) {
    const int d = bank.dim();
    const int m = static_cast<int>(bank.size());
    ad::NodeId q = tape.reshape(eps_hat, {1, d});
    ad::NodeId refs = tape.constant(Tensor({m, d}, bank.flat()));
    ad::NodeId diff = tape.sub(refs, q);
    ad::NodeId sq = tape.mul(diff, diff);
    ad::NodeId row_sums = tape.matmul(sq, tape.constant(Tensor::full({d, 1}, 1.0)));
    ad::NodeId kernels = tape.exp(tape.scale(row_sums, -1.0 / (2.0 * h * h)));
    ad::NodeId density = tape.scale(tape.mean(kernels), kde_normalizer(d, h));
    return tape.scale(tape.log(tape.add(density, tape.constant(Tensor::scalar(1e-8)))), -1.0);
}

ad::NodeId knn_score_node(ad::Tape& tape, ad::NodeId eps_hat, const MemoryBank& bank, int k) {
    const int d = bank.dim();
    const Tensor& qv = tape.value(eps_hat);
    check_query(qv, d, "knn_score_node");
    const int k_eff = std::min<int>(k, static_cast<int>(bank.size()));
    // Neighbor selection is done on values; only the distances to the chosen
    // neighbors are differentiable (the selection is piecewise constant).
    std::vector<std::pair<double, std::size_t>> dist(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
        dist[i] = {kernels::squared_distance(qv.data(), bank.entry(i), d), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k_eff, dist.end());
    ad::NodeId q = tape.reshape(eps_hat, {1, d});
    ad::NodeId acc = -1;
    for (int j = 0; j < k_eff; ++j) {
        const double* b = bank.entry(dist[j].second);
        ad::NodeId ref = tape.constant(Tensor({1, d}, std::vector<double>(b, b + d)));
        ad::NodeId sq = tape.squared_l2(tape.sub(q, ref));
        // tiny offset keeps sqrt differentiable at exact matches
        ad::NodeId dj = tape.sqrt(tape.add(sq, tape.constant(Tensor::scalar(1e-18))));
        acc = acc < 0 ? dj : tape.add(acc, dj);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(k_eff));
}

ad::NodeId np_training_loss(ad::Tape& tape, ad::NodeId eps_plus, ad::NodeId eps_minus,
                            const MemoryBank& bank, NpMethod method, double margin, int knn_k) {
    if (bank.empty()) return tape.constant(Tensor::scalar(0.0));
    ad::NodeId s_plus, s_minus;
    if (method == NpMethod::kde) {
        const double h = bank.size() >= 2 ? silverman_bandwidth(bank) : 1.0;
        s_plus = kde_score_node(tape, eps_plus, bank, h);
        s_minus = kde_score_node(tape, eps_minus, bank, h);
    } else {
        // kNN is also the training surrogate for the iforest branch.
        s_plus = knn_score_node(tape, eps_plus, bank, knn_k);
        s_minus = knn_score_node(tape, eps_minus, bank, knn_k);
    }
    ad::NodeId gap = tape.add(tape.sub(s_plus, s_minus), tape.constant(Tensor::scalar(margin)));
    return tape.relu(gap);
}

}  // namespace dtd
