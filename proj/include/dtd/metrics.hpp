#pragma once

#include <string>
#include <vector>

namespace dtd {

struct ConfusionCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
};

struct PointwiseMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    ConfusionCounts counts;
};

// Precision/recall/F1/accuracy from per-point labels. When there are neither
// predicted nor true positives, precision = recall = f1 = 1 by convention;
// other zero denominators yield 0.
PointwiseMetrics pointwise_metrics(const std::vector<int>& pred, const std::vector<int>& truth);

struct EventMetrics {
    double precision = 0.0;  // over contiguous prediction runs
    double recall = 0.0;     // over true events
    double f1 = 0.0;
    long events = 0;
    long detected_events = 0;
    long prediction_runs = 0;
    long false_alarm_runs = 0;
    long tolerance = 0;
};

// True events are maximal contiguous runs of 1s in `truth`. An event counts
// as detected iff some prediction lies in [onset, onset + tolerance] or inside
// the event. A prediction run counts as a false alarm iff every point of the
// run is farther than `tolerance` from every event.
EventMetrics event_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                           long tolerance);

// Rank-based AUROC of scores against binary labels (ties share rank credit).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// {"pointwise": {...}, "event": {..., "tau": ...}}
std::string metrics_report_json(const PointwiseMetrics& pw, const EventMetrics& ev);

}  // namespace dtd
