#include "dtd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dtd {

double score_sample(const Predictor& predictor, const NoiseScorer& scorer,
                    const NoiseSchedule& schedule, const Tensor& x, const Tensor& x_hist, Rng rng,
                    int n_draws) {
    if (n_draws < 1) throw std::invalid_argument("score_sample: n_draws >= 1");
    double acc = 0.0;
    for (int i = 0; i < n_draws; ++i) {
        Tensor eps(x.shape());
        for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = rng.normal();
        const Tensor x1 = forward_diffuse(x, 1, eps, schedule);
        const Tensor eps_hat = predictor.predict(x1, 1, x_hist);
        acc += scorer.score(eps_hat);
    }
    return acc / static_cast<double>(n_draws);
}

ScoreTrace score_windows(const Predictor& predictor, const NoiseScorer& scorer,
                         const NoiseSchedule& schedule, const std::vector<WindowPair>& windows,
                         const Rng& rng, int n_draws) {
    ScoreTrace trace(windows.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(windows.size()); ++i) {
        const WindowPair& w = windows[i];
        trace[i].index = w.time_index;
        trace[i].truth = w.label;
        trace[i].score = score_sample(predictor, scorer, schedule, w.x0, w.x_hist,
                                      rng.split(static_cast<std::uint64_t>(i)), n_draws);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// POT / GPD

double pot_decision_level(double t, double sigma, double gamma, double q, long m, long n_t) {
    const double ratio = q * static_cast<double>(m) / static_cast<double>(n_t);
    if (std::abs(gamma) < 1e-6) return t + sigma * std::log(1.0 / ratio);
    return t + sigma / gamma * (std::pow(ratio, -gamma) - 1.0);
}

void gpd_method_of_moments(const std::vector<double>& excesses, double& gamma, double& sigma) {
    const double n = static_cast<double>(excesses.size());
    double mean = 0.0;
    for (double y : excesses) mean += y;
    mean /= n;
    double var = 0.0;
    for (double y : excesses) var += (y - mean) * (y - mean);
    var /= std::max(n - 1.0, 1.0);
    if (var <= 0.0) {
        gamma = 0.0;
        sigma = std::max(mean, 1e-12);
        return;
    }
    gamma = 0.5 * (1.0 - mean * mean / var);
    sigma = 0.5 * mean * (mean * mean / var + 1.0);
}

namespace {

// Profile log-likelihood in tau = gamma/sigma (Grimshaw reduction): for
// tau != 0, gamma(tau) = mean log(1 + tau y) and the profiled value is
// -n (log(gamma/tau) + gamma + 1). tau = 0 is the exponential model.
double gpd_profile_ll(double tau, const std::vector<double>& y) {
    const double n = static_cast<double>(y.size());
    if (tau == 0.0) {
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= n;
        return -n * (std::log(mean) + 1.0);
    }
    double acc = 0.0;
    for (double v : y) {
        const double a = 1.0 + tau * v;
        if (a <= 0.0) return -std::numeric_limits<double>::infinity();
        acc += std::log(a);
    }
    const double gamma = acc / n;
    if (gamma == 0.0) return -std::numeric_limits<double>::infinity();
    const double sigma = gamma / tau;
    if (sigma <= 0.0) return -std::numeric_limits<double>::infinity();
    return -n * (std::log(sigma) + gamma + 1.0);
}

}  // namespace

GpdFit fit_pot(std::vector<double> scores, const PotConfig& config) {
    if (scores.empty()) throw std::invalid_argument("fit_pot: no calibration scores");
    if (!(config.q > 0.0 && config.q < 1.0)) throw std::invalid_argument("fit_pot: q in (0, 1)");
    if (!(config.t_quantile > 0.0 && config.t_quantile < 1.0)) {
        throw std::invalid_argument("fit_pot: t_quantile in (0, 1)");
    }

    GpdFit fit;
    fit.m = static_cast<long>(scores.size());
    fit.q = config.q;

    std::sort(scores.begin(), scores.end());
    const long m = fit.m;
    long idx = static_cast<long>(std::ceil(config.t_quantile * static_cast<double>(m))) - 1;
    idx = std::clamp(idx, 0L, m - 1);
    fit.t = scores[idx];

    std::vector<double> excesses;
    for (double s : scores) {
        if (s > fit.t) excesses.push_back(s - fit.t);
    }
    fit.n_t = static_cast<long>(excesses.size());
    if (fit.n_t < config.min_excesses) {
        throw std::runtime_error("fit_pot: only " + std::to_string(fit.n_t) +
                                 " scores exceed t = " + std::to_string(fit.t) + "; need at least " +
                                 std::to_string(config.min_excesses) +
                                 " (add calibration data or lower t_quantile)");
    }

    const double y_max = *std::max_element(excesses.begin(), excesses.end());

    // Bracket the profile maximum over tau with a log-spaced scan on both
    // sides of zero, then refine by golden section.
    std::vector<double> taus;
    taus.push_back(0.0);
    const double tau_min = -(1.0 - 1e-9) / y_max;
    for (int i = 1; i <= 60; ++i) {
        taus.push_back(tau_min * static_cast<double>(i) / 60.0);
    }
    for (int i = -40; i <= 40; ++i) {
        taus.push_back(std::pow(10.0, static_cast<double>(i) / 8.0) / y_max);
    }
    double best_tau = 0.0;
    double best_ll = gpd_profile_ll(0.0, excesses);
    for (double tau : taus) {
        const double ll = gpd_profile_ll(tau, excesses);
        if (ll > best_ll) {
            best_ll = ll;
            best_tau = tau;
        }
    }
    {
        // golden-section around the best grid point
        std::sort(taus.begin(), taus.end());
        auto it = std::lower_bound(taus.begin(), taus.end(), best_tau);
        double lo = it == taus.begin() ? best_tau : *(it - 1);
        double hi = (it + 1) == taus.end() ? best_tau : *(it + 1);
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double a = lo, b = hi;
        double c = b - gr * (b - a), d = a + gr * (b - a);
        for (int iter = 0; iter < 80 && b - a > 1e-12 * (1.0 + std::abs(a)); ++iter) {
            if (gpd_profile_ll(c, excesses) > gpd_profile_ll(d, excesses)) {
                b = d;
            } else {
                a = c;
            }
            c = b - gr * (b - a);
            d = a + gr * (b - a);
        }
        const double tau_ref = 0.5 * (a + b);
        if (gpd_profile_ll(tau_ref, excesses) > best_ll) {
            best_ll = gpd_profile_ll(tau_ref, excesses);
            best_tau = tau_ref;
        }
    }

    if (best_tau == 0.0) {
        fit.gamma = 0.0;
        double mean = 0.0;
        for (double y : excesses) mean += y;
        fit.sigma = mean / static_cast<double>(fit.n_t);
    } else {
        double acc = 0.0;
        for (double y : excesses) acc += std::log(1.0 + best_tau * y);
        fit.gamma = acc / static_cast<double>(fit.n_t);
        fit.sigma = fit.gamma / best_tau;
    }
    if (!(fit.sigma > 0.0) || !std::isfinite(fit.sigma) || !std::isfinite(fit.gamma)) {
        gpd_method_of_moments(excesses, fit.gamma, fit.sigma);
    }

    fit.z_q = pot_decision_level(fit.t, fit.sigma, fit.gamma, fit.q, fit.m, fit.n_t);
    return fit;
}

std::vector<int> label_scores(const std::vector<double>& scores, const GpdFit& fit) {
    std::vector<int> labels(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) labels[i] = scores[i] > fit.z_q ? 1 : 0;
    return labels;
}

void label_trace(ScoreTrace& trace, const GpdFit& fit) {
    for (auto& p : trace) p.pred = p.score > fit.z_q ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Trace / fit IO

void write_trace_csv(const ScoreTrace& trace, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write trace file: " + path);
    const bool has_pred = !trace.empty() && trace.front().pred >= 0;
    const bool has_truth = !trace.empty() && trace.front().truth >= 0;
    std::fprintf(f, "index,score%s%s\n", has_pred ? ",pred" : "", has_truth ? ",truth" : "");
    for (const auto& p : trace) {
        std::fprintf(f, "%ld,%.17g", p.index, p.score);
        if (has_pred) std::fprintf(f, ",%d", p.pred);
        if (has_truth) std::fprintf(f, ",%d", p.truth);
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

ScoreTrace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace: empty file: " + path);
    std::vector<std::string> cols;
    {
        std::istringstream hs(line);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    int idx_col = -1, score_col = -1, pred_col = -1, truth_col = -1;
    for (int i = 0; i < static_cast<int>(cols.size()); ++i) {
        if (cols[i] == "index") idx_col = i;
        else if (cols[i] == "score") score_col = i;
        else if (cols[i] == "pred") pred_col = i;
        else if (cols[i] == "truth") truth_col = i;
        else throw std::runtime_error("trace: unknown column '" + cols[i] + "' in " + path);
    }
    if (idx_col < 0 || score_col < 0) {
        throw std::runtime_error("trace: need index and score columns in " + path);
    }
    ScoreTrace trace;
    long row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        std::istringstream is(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        if (cells.size() != cols.size()) {
            throw std::runtime_error("trace: row " + std::to_string(row) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(cols.size()));
        }
        ScorePoint p;
        p.index = std::stol(cells[idx_col]);
        p.score = std::stod(cells[score_col]);
        if (pred_col >= 0) p.pred = std::stoi(cells[pred_col]);
        if (truth_col >= 0) p.truth = std::stoi(cells[truth_col]);
        trace.push_back(p);
    }
    return trace;
}

void write_gpd_json(const GpdFit& fit, const std::string& path) {
    nlohmann::json j = {{"t", fit.t},     {"gamma", fit.gamma}, {"sigma", fit.sigma},
                        {"n_t", fit.n_t}, {"m", fit.m},         {"q", fit.q},
                        {"z_q", fit.z_q}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write fit file: " + path);
    out << j.dump(2) << "\n";
}

GpdFit read_gpd_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open fit file: " + path);
    nlohmann::json j;
    in >> j;
    GpdFit fit;
    fit.t = j.at("t").get<double>();
    fit.gamma = j.at("gamma").get<double>();
    fit.sigma = j.at("sigma").get<double>();
    fit.n_t = j.at("n_t").get<long>();
    fit.m = j.at("m").get<long>();
    fit.q = j.at("q").get<double>();
    fit.z_q = j.at("z_q").get<double>();
    return fit;
}

}  // namespace dtd
