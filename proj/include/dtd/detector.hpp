#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dtd/data.hpp"
#include "dtd/predictor.hpp"
#include "dtd/rng.hpp"
#include "dtd/schedule.hpp"
#include "dtd/scoring_np.hpp"
#include "dtd/scoring_p.hpp"
#include "dtd/tensor.hpp"

namespace dtd {

// Anomaly score over a predicted noise vector; implementations wrap the
// branch states (bank + KDE/kNN/iForest, or the EBM energy).
class NoiseScorer {
  public:
    virtual ~NoiseScorer() = default;
    virtual double score(const Tensor& eps_hat) const = 0;
};

class KdeScorer : public NoiseScorer {
  public:
    KdeScorer(const MemoryBank& bank, double bandwidth) : bank_(&bank), h_(bandwidth) {}
    double score(const Tensor& eps_hat) const override { return kde_score(eps_hat, *bank_, h_); }

  private:
    const MemoryBank* bank_;
    double h_;
};

class KnnScorer : public NoiseScorer {
  public:
    KnnScorer(const MemoryBank& bank, int k) : bank_(&bank), k_(k) {}
    double score(const Tensor& eps_hat) const override { return knn_score(eps_hat, *bank_, k_); }

  private:
    const MemoryBank* bank_;
    int k_;
};

class IforestScorer : public NoiseScorer {
  public:
    explicit IforestScorer(const IsolationForestModel& model) : model_(&model) {}
    double score(const Tensor& eps_hat) const override { return iforest_score(*model_, eps_hat); }

  private:
    const IsolationForestModel* model_;
};

class EnergyScorer : public NoiseScorer {
  public:
    explicit EnergyScorer(const EnergyFn& fn) : fn_(&fn) {}
    double score(const Tensor& eps_hat) const override { return fn_->energy(eps_hat); }

  private:
    const EnergyFn* fn_;
};

// One test-time score: draw eps ~ N(0, I), form x_1 at k = 1, predict the
// noise and score it. n_draws > 1 averages the score over fresh draws (an
// optional variance-reduction extension; 1 matches the reference procedure).
double score_sample(const Predictor& predictor, const NoiseScorer& scorer,
                    const NoiseSchedule& schedule, const Tensor& x, const Tensor& x_hist, Rng rng,
                    int n_draws = 1);

struct ScorePoint {
    long index = 0;
    double score = 0.0;
    int pred = -1;   // -1 = column absent
    int truth = -1;  // -1 = column absent
};
using ScoreTrace = std::vector<ScorePoint>;

// Scores every window, parallel across windows; window i draws from
// rng.split(i) so results do not depend on thread scheduling.
ScoreTrace score_windows(const Predictor& predictor, const NoiseScorer& scorer,
                         const NoiseSchedule& schedule, const std::vector<WindowPair>& windows,
                         const Rng& rng, int n_draws = 1);

struct PotConfig {
    double t_quantile = 0.98;
    double q = 1e-3;
    long min_excesses = 20;
};

struct GpdFit {
    double t = 0.0;      // initial threshold
    double gamma = 0.0;  // GPD shape
    double sigma = 0.0;  // GPD scale
    long n_t = 0;        // excess count
    long m = 0;          // calibration score count
    double q = 0.0;      // risk parameter
    double z_q = 0.0;    // decision level
};

// z_q = t + (sigma/gamma) * ((q m / n_t)^(-gamma) - 1), exponential limit for
// |gamma| < 1e-6.
double pot_decision_level(double t, double sigma, double gamma, double q, long m, long n_t);

// Maximum-likelihood GPD fit (profile likelihood, method-of-moments
// fallback) to the excesses of the calibration scores over their empirical
// t_quantile. Rejects when fewer than min_excesses scores exceed t.
GpdFit fit_pot(std::vector<double> calibration_scores, const PotConfig& config);

// Method-of-moments GPD estimate; exposed for the fallback path tests.
void gpd_method_of_moments(const std::vector<double>& excesses, double& gamma, double& sigma);

std::vector<int> label_scores(const std::vector<double>& scores, const GpdFit& fit);
void label_trace(ScoreTrace& trace, const GpdFit& fit);

void write_trace_csv(const ScoreTrace& trace, const std::string& path);
ScoreTrace read_trace_csv(const std::string& path);

void write_gpd_json(const GpdFit& fit, const std::string& path);
GpdFit read_gpd_json(const std::string& path);

}  // namespace dtd
