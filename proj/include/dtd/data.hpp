#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtd/tensor.hpp"

namespace dtd {

struct NodeGrouping {
    std::vector<std::string> node_names;
    std::vector<std::vector<int>> node_channels;  // channel indices per node

    int n_nodes() const { return static_cast<int>(node_names.size()); }
    int features_per_node() const {
        return node_channels.empty() ? 0 : static_cast<int>(node_channels[0].size());
    }
};

// Time x channels matrix with optional per-time binary labels, split indices
// and per-channel z-score statistics computed from the training rows only.
struct TimeSeriesDataset {
    std::vector<std::string> channel_names;
    std::vector<double> values;  // row-major, time x channels
    std::vector<int> labels;     // empty when unlabeled
    int channels = 0;
    long length = 0;

    long train_end = 0;  // rows [0, train_end) are training
    long val_end = 0;    // rows [train_end, val_end) validation, rest test

    std::vector<double> channel_mean;
    std::vector<double> channel_std;

    std::optional<NodeGrouping> grouping;

    bool labeled() const { return !labels.empty(); }
    double raw(long t, int c) const { return values[static_cast<std::size_t>(t) * channels + c]; }
    double normalized(long t, int c) const {
        return (raw(t, c) - channel_mean[c]) / channel_std[c];
    }
};

struct DatasetSchema {
    double train_frac = 0.70;
    double val_frac = 0.15;
    bool normalize = true;
};

// Header row names channels; an optional trailing `label` column holds 0/1.
// Ragged rows, non-numeric cells and bad label values are rejected with the
// 1-based data row number. Normalization statistics come from training rows.
TimeSeriesDataset load_csv(const std::string& path, const DatasetSchema& schema = {});

// Recompute splits/statistics (used after assembling a dataset in memory).
void finalize_dataset(TimeSeriesDataset& ds, const DatasetSchema& schema);

// {"node_name": ["channel", ...]} covering every channel exactly once.
NodeGrouping load_grouping(const std::string& path, const TimeSeriesDataset& ds);

struct WindowPair {
    Tensor x0;      // N x d (grouped) or 1 x channels
    Tensor x_hist;  // H x flat, oldest row first, ending right before x0
    long time_index = 0;
    int label = -1;  // -1 when the dataset is unlabeled
};

// Windows over rows [begin, end) of the normalized series; x0 sits at
// begin + H + i*stride. When `normal_only` is set, windows whose x0 row is
// labeled anomalous are skipped (history may still cross labeled rows).
std::vector<WindowPair> make_windows(const TimeSeriesDataset& ds, long begin, long end, int history,
                                     int stride, bool normal_only = false);

std::vector<WindowPair> train_windows(const TimeSeriesDataset& ds, int history, int stride);
std::vector<WindowPair> val_windows(const TimeSeriesDataset& ds, int history, int stride);
std::vector<WindowPair> test_windows(const TimeSeriesDataset& ds, int history, int stride);

enum class FaultType { mean_shift, variance_burst, correlation_break };

struct FaultSpec {
    long onset = 0;
    long duration = 0;
    FaultType type = FaultType::mean_shift;
    double magnitude = 0.0;
    std::vector<int> channels;  // empty = all channels
};

struct SyntheticSpec {
    int channels = 1;
    long length = 0;
    std::vector<double> ar_coeff;          // per channel, in (-1, 1)
    std::vector<double> mixing;            // channels x channels, empty = identity
    std::vector<FaultSpec> faults;
    std::uint64_t seed = 0;
    // Innovation law: standard normal, or uniform scaled to unit variance
    // (bounded noise, as from quantized/physically limited sensors).
    bool uniform_innovations = false;

    void validate() const;
};

// AR(1) channels with unit marginal variance, mixed across channels, faults
// injected on their intervals; labels are 1 exactly on fault rows.
TimeSeriesDataset synth_generate(const SyntheticSpec& spec, const DatasetSchema& schema = {});

void write_csv(const TimeSeriesDataset& ds, const std::string& path);

}  // namespace dtd
