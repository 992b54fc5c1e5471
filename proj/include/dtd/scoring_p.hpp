#pragma once

#include <string>
#include <vector>

#include "dtd/autodiff.hpp"
#include "dtd/rng.hpp"
#include "dtd/tensor.hpp"

namespace dtd {

// Negative-energy function f_phi with its input gradient; energy is -f.
// Langevin refinement and test-time scoring only need this surface, so
// hand-set analytic energies can stand in for the trained model in tests.
class EnergyFn {
  public:
    virtual ~EnergyFn() = default;
    virtual double f(const Tensor& eps) const = 0;
    virtual Tensor grad_f(const Tensor& eps) const = 0;
    double energy(const Tensor& eps) const { return -f(eps); }
};

// f_phi as a 3-layer tanh MLP (smooth, so Langevin gradients behave).
// Parameters live in a shared ParamStore under the given prefix.
class EnergyModel : public EnergyFn {
  public:
    EnergyModel() = default;
    EnergyModel(int dim, int hidden, ad::ParamStore& store, Rng& init_rng,
                std::string prefix = "ebm.");

    // Bind to parameters that already exist in the store (checkpoint load).
    static EnergyModel attach(int dim, int hidden, ad::ParamStore& store,
                              std::string prefix = "ebm.");

    // Scalar node for f_phi(eps); eps node must hold a 1 x dim row.
    ad::NodeId f_node(ad::Tape& tape, ad::NodeId eps) const;

    double f(const Tensor& eps) const override;
    Tensor grad_f(const Tensor& eps) const override;

    int dim() const { return dim_; }
    int hidden() const { return hidden_; }
    const std::string& prefix() const { return prefix_; }

  private:
    int dim_ = 0;
    int hidden_ = 0;
    std::string prefix_;
    ad::ParamStore* store_ = nullptr;
};

// Eq.-(8)-style chain: eps_m = eps_{m-1} + (delta^2/2) grad f(eps_{m-1}) + delta eta_m.
// Runs exactly `steps` iterations; aborts naming the step if an iterate goes
// non-finite. `with_noise = false` gives the pure gradient-ascent check.
Tensor langevin_refine(const EnergyFn& model, const Tensor& eps_init, int steps, double delta,
                       Rng& rng, bool with_noise = true);

// mean(E+) - mean(E-) + alpha * (mean(E+^2) + mean(E-^2)).
double ebm_loss(const std::vector<double>& e_plus, const std::vector<double>& e_minus,
                double alpha);

// Same expression on the tape from per-sample energy nodes.
ad::NodeId ebm_loss_node(ad::Tape& tape, const std::vector<ad::NodeId>& e_plus,
                         const std::vector<ad::NodeId>& e_minus, double alpha);

}  // namespace dtd
