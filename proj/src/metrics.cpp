#include "dtd/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace dtd {

PointwiseMetrics pointwise_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("pointwise_metrics: length mismatch, " +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(truth.size()));
    }
    PointwiseMetrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        const bool t = truth[i] != 0;
        if (p && t) ++m.counts.tp;
        else if (p && !t) ++m.counts.fp;
        else if (!p && t) ++m.counts.fn;
        else ++m.counts.tn;
    }
    const auto& c = m.counts;
    const long total = c.tp + c.fp + c.fn + c.tn;
    if (c.tp + c.fp == 0 && c.tp + c.fn == 0) {
        // no predicted and no true positives
        m.precision = m.recall = m.f1 = 1.0;
    } else {
        m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
        m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    }
    m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / total : 0.0;
    return m;
}

namespace {

struct Run {
    long begin = 0;
    long end = 0;  // half-open
};

std::vector<Run> contiguous_runs(const std::vector<int>& labels) {
    std::vector<Run> runs;
    const long n = static_cast<long>(labels.size());
    long i = 0;
    while (i < n) {
        if (labels[i] != 0) {
            long j = i;
            while (j < n && labels[j] != 0) ++j;
            runs.push_back({i, j});
            i = j;
        } else {
            ++i;
        }
    }
    return runs;
}

// Gap between point p and event [a, b): 0 inside, distance to the nearest
// endpoint otherwise.
long gap_to_event(long p, const Run& ev) {
    if (p >= ev.begin && p < ev.end) return 0;
    return p < ev.begin ? ev.begin - p : p - (ev.end - 1);
}

}  // namespace

EventMetrics event_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                           long tolerance) {
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("event_metrics: length mismatch");
    }
    if (tolerance < 0) throw std::invalid_argument("event_metrics: tolerance must be >= 0");

    const auto events = contiguous_runs(truth);
    const auto runs = contiguous_runs(pred);

    EventMetrics m;
    m.tolerance = tolerance;
    m.events = static_cast<long>(events.size());
    m.prediction_runs = static_cast<long>(runs.size());

    for (const auto& ev : events) {
        // detected iff a prediction falls inside the event or in
        // [onset, onset + tolerance]
        const long hi = std::min(std::max(ev.end - 1, ev.begin + tolerance),
                                 static_cast<long>(pred.size()) - 1);
        bool detected = false;
        for (long p = ev.begin; p <= hi && !detected; ++p) {
            if (pred[p] != 0 && (p < ev.end || p <= ev.begin + tolerance)) detected = true;
        }
        if (detected) ++m.detected_events;
    }

    for (const auto& run : runs) {
        bool near_event = false;
        for (const auto& ev : events) {
            for (long p = run.begin; p < run.end; ++p) {
                if (gap_to_event(p, ev) <= tolerance) {
                    near_event = true;
                    break;
                }
            }
            if (near_event) break;
        }
        if (!near_event) ++m.false_alarm_runs;
    }

    if (m.events == 0 && m.prediction_runs == 0) {
        m.precision = m.recall = m.f1 = 1.0;
        return m;
    }
    m.recall = m.events > 0 ? static_cast<double>(m.detected_events) / m.events : 0.0;
    m.precision = m.prediction_runs > 0
                      ? static_cast<double>(m.prediction_runs - m.false_alarm_runs) /
                            m.prediction_runs
                      : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    long n_pos = 0, n_neg = 0;
    for (int l : labels) (l != 0 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("auroc: need both classes present");
    }

    // Average ranks across ties, then Mann-Whitney.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] != 0) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::string metrics_report_json(const PointwiseMetrics& pw, const EventMetrics& ev) {
    nlohmann::json j;
    j["pointwise"] = {{"precision", pw.precision},
                      {"recall", pw.recall},
                      {"f1", pw.f1},
                      {"accuracy", pw.accuracy},
                      {"tp", pw.counts.tp},
                      {"fp", pw.counts.fp},
                      {"fn", pw.counts.fn},
                      {"tn", pw.counts.tn}};
    j["event"] = {{"precision", ev.precision},
                  {"recall", ev.recall},
                  {"f1", ev.f1},
                  {"events", ev.events},
                  {"detected_events", ev.detected_events},
                  {"prediction_runs", ev.prediction_runs},
                  {"false_alarm_runs", ev.false_alarm_runs},
                  {"tau", ev.tolerance}};
    return j.dump(2);
}

}  // namespace dtd
