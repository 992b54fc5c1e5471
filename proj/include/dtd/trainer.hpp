#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dtd/autodiff.hpp"
#include "dtd/data.hpp"
#include "dtd/predictor.hpp"
#include "dtd/schedule.hpp"
#include "dtd/scoring_np.hpp"
#include "dtd/scoring_p.hpp"

namespace dtd {

enum class Branch { kde, knn, iforest, ebm };

Branch branch_from_string(const std::string& s);
std::string branch_to_string(Branch b);
bool branch_is_nonparametric(Branch b);

struct TrainConfig {
    Branch branch = Branch::kde;
    double lambda = 0.5;  // branch-loss weight; 0 degenerates to pure diffusion
    int epochs = 5;
    int batch = 64;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    PredictorConfig predictor;  // T is synced from the schedule

    // nonparametric branch
    int bank_capacity = 2048;
    int knn_k = 5;
    int iforest_trees = 100;
    int iforest_psi = 256;
    double margin = 1.0;
    int bank_warmup_epochs = 1;  // entries collected before this are discarded
    // Train the kde branch against the kNN surrogate instead of the kde
    // score: the kde gradient vanishes a few bandwidths from the bank, which
    // can leave the contrastive loss permanently unsatisfied while the
    // prediction cloud drifts.
    bool np_knn_surrogate = false;

    // parametric branch
    int ebm_hidden = 64;
    double ebm_alpha = 0.1;
    double langevin_delta = 0.1;
    int langevin_steps = 20;

    // monitoring
    double val_fraction = 0.1;    // tail of the training windows
    int early_stop_patience = 0;  // epochs without val improvement; 0 = off

    void validate() const;
};

struct TrainLogRow {
    long iteration = 0;
    double l_dm = 0.0;
    double l_branch = 0.0;
    double l_total = 0.0;
};

struct EpochStats {
    int epoch = 0;
    double val_dm = 0.0;         // diffusion loss on held-out windows
    double val_eps_norm2 = 0.0;  // mean ||eps_theta(x_1, 1, hist)||^2 on held-out windows
    double adj_row_sum_err = 0.0;  // max |row sum - 1| of the adaptive adjacency
};

// Trained artifacts: the parameter store owns every tensor; predictor and
// EBM reference it.
struct Pipeline {
    std::unique_ptr<ad::ParamStore> params;
    Predictor predictor;
    NoiseSchedule schedule;
    Branch branch = Branch::kde;

    MemoryBank bank;            // nonparametric branches
    double kde_bandwidth = 0.0; // frozen from the final bank (kde branch)
    int knn_k = 5;
    IsolationForestModel iforest;

    std::unique_ptr<EnergyModel> ebm;  // parametric branch

    TrainConfig config;
    std::vector<TrainLogRow> log;
    std::vector<EpochStats> epoch_stats;
};

// Algorithm-1 cooperative training over normal windows. The tail
// `val_fraction` of the windows is held out for the monitors/early stopping.
Pipeline train(const std::vector<WindowPair>& windows, const TrainConfig& config);

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path);

class NoiseScorer;
// Branch scorer over the pipeline's frozen state; the pipeline must outlive it.
std::unique_ptr<NoiseScorer> make_scorer(const Pipeline& pipeline);

}  // namespace dtd
