#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dtd/data.hpp"
#include "dtd/trainer.hpp"

namespace dtd {

// Data-pipeline state a checkpoint must carry so new CSVs are windowed and
// normalized exactly like the training data.
struct DataMeta {
    std::vector<std::string> channel_names;
    std::vector<double> channel_mean;
    std::vector<double> channel_std;
    int history = 16;
    int stride = 1;
    double train_frac = 0.70;
    double val_frac = 0.15;
    std::optional<NodeGrouping> grouping;
};

DataMeta data_meta_from(const TimeSeriesDataset& ds, int history, int stride, double train_frac,
                        double val_frac);

// Stamps the checkpoint's normalization/grouping onto a freshly loaded raw
// dataset (schema.normalize must have been false).
void apply_data_meta(TimeSeriesDataset& ds, const DataMeta& meta);

inline constexpr int kCheckpointVersion = 1;

// Single self-describing JSON container: version, schedule, predictor config,
// every parameter (name -> shape -> flat data), branch state (bank /
// iforest / EBM) and the data meta.
void save_checkpoint(const Pipeline& pipeline, const DataMeta& meta, const std::string& path);

struct LoadedCheckpoint {
    Pipeline pipeline;
    DataMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dtd
