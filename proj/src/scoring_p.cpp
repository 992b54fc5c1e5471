#include "dtd/scoring_p.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dtd {

EnergyModel::EnergyModel(int dim, int hidden, ad::ParamStore& store, Rng& init_rng,
                         std::string prefix)
    : dim_(dim), hidden_(hidden), prefix_(std::move(prefix)), store_(&store) {
    if (dim < 1 || hidden < 1) throw std::invalid_argument("energy model needs dim, hidden >= 1");
    auto lin = [&](const std::string& name, int in, int out) {
        store.create(prefix_ + name + ".w",
                     init_rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
        store.create(prefix_ + name + ".b", Tensor::zeros({1, out}));
    };
    lin("l1", dim, hidden);
    lin("l2", hidden, hidden);
    lin("l3", hidden, 1);
}

EnergyModel EnergyModel::attach(int dim, int hidden, ad::ParamStore& store, std::string prefix) {
    EnergyModel m;
    m.dim_ = dim;
    m.hidden_ = hidden;
    m.prefix_ = std::move(prefix);
    m.store_ = &store;
    return m;
}

ad::NodeId EnergyModel::f_node(ad::Tape& tape, ad::NodeId eps) const {
    if (!store_) throw std::runtime_error("energy model not initialized");
    ad::NodeId x = tape.reshape(eps, {1, dim_});
    auto layer = [&](ad::NodeId h, const std::string& name) {
        return tape.add(tape.matmul(h, tape.param(prefix_ + name + ".w")),
                        tape.param(prefix_ + name + ".b"));
    };
    ad::NodeId h1 = tape.tanh(layer(x, "l1"));
    ad::NodeId h2 = tape.tanh(layer(h1, "l2"));
    return tape.reshape(layer(h2, "l3"), {});
}

double EnergyModel::f(const Tensor& eps) const {
    ad::Tape tape(store_);
    return tape.scalar(f_node(tape, tape.constant(eps)));
}

Tensor EnergyModel::grad_f(const Tensor& eps) const {
    ad::Tape tape(store_);
    ad::NodeId in = tape.input(eps);
    ad::NodeId out = f_node(tape, in);
    tape.backward(out);
    return tape.grad(in).reshaped(eps.shape());
}

Tensor langevin_refine(const EnergyFn& model, const Tensor& eps_init, int steps, double delta,
                       Rng& rng, bool with_noise) {
    if (!(delta > 0.0)) throw std::invalid_argument("langevin_refine: delta must be positive");
    if (steps < 0) throw std::invalid_argument("langevin_refine: steps must be >= 0");
    Tensor eps = eps_init;
    const double half_d2 = 0.5 * delta * delta;
    for (int m = 1; m <= steps; ++m) {
        const Tensor g = model.grad_f(eps);
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double eta = with_noise ? rng.normal() : 0.0;
            eps[i] += half_d2 * g[i] + delta * eta;
        }
        if (!eps.all_finite()) {
            throw std::runtime_error("langevin_refine: non-finite iterate at step " +
                                     std::to_string(m));
        }
    }
    return eps;
}

double ebm_loss(const std::vector<double>& e_plus, const std::vector<double>& e_minus,
                double alpha) {
    if (e_plus.empty() || e_minus.empty()) {
        throw std::invalid_argument("ebm_loss: both batches must be non-empty");
    }
    double mp = 0.0, mm = 0.0, mp2 = 0.0, mm2 = 0.0;
    for (double e : e_plus) {
        mp += e;
        mp2 += e * e;
    }
    for (double e : e_minus) {
        mm += e;
        mm2 += e * e;
    }
    const double np = static_cast<double>(e_plus.size());
    const double nm = static_cast<double>(e_minus.size());
    return mp / np - mm / nm + alpha * (mp2 / np + mm2 / nm);
}

ad::NodeId ebm_loss_node(ad::Tape& tape, const std::vector<ad::NodeId>& e_plus,
                         const std::vector<ad::NodeId>& e_minus, double alpha) {
    if (e_plus.empty() || e_minus.empty()) {
        throw std::invalid_argument("ebm_loss: both batches must be non-empty");
    }
    auto mean_of = [&](const std::vector<ad::NodeId>& xs, bool squared) {
        ad::NodeId acc = -1;
        for (ad::NodeId x : xs) {
            ad::NodeId term = squared ? tape.mul(x, x) : x;
            acc = acc < 0 ? term : tape.add(acc, term);
        }
        return tape.scale(acc, 1.0 / static_cast<double>(xs.size()));
    };
    ad::NodeId contrast = tape.sub(mean_of(e_plus, false), mean_of(e_minus, false));
    if (alpha == 0.0) return contrast;
    ad::NodeId reg = tape.add(mean_of(e_plus, true), mean_of(e_minus, true));
    return tape.add(contrast, tape.scale(reg, alpha));
}

}  // namespace dtd
