#include "dtd/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dtd/rng.hpp"
#include "json.hpp"

namespace dtd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& cell, long row, int col) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE ||
        !std::isfinite(v)) {
        throw std::runtime_error("csv: non-numeric cell '" + cell + "' at data row " +
                                 std::to_string(row) + ", column " + std::to_string(col + 1));
    }
    return v;
}

}  // namespace

void finalize_dataset(TimeSeriesDataset& ds, const DatasetSchema& schema) {
    if (schema.train_frac <= 0.0 || schema.val_frac < 0.0 ||
        schema.train_frac + schema.val_frac >= 1.0 + 1e-12) {
        throw std::invalid_argument("dataset schema: need 0 < train_frac and train+val <= 1");
    }
    ds.train_end = static_cast<long>(schema.train_frac * static_cast<double>(ds.length));
    ds.val_end = static_cast<long>((schema.train_frac + schema.val_frac) *
                                   static_cast<double>(ds.length));
    ds.train_end = std::min(ds.train_end, ds.length);
    ds.val_end = std::min(std::max(ds.val_end, ds.train_end), ds.length);

    ds.channel_mean.assign(ds.channels, 0.0);
    ds.channel_std.assign(ds.channels, 1.0);
    if (!schema.normalize) return;

    // Statistics from the training rows only; anomalous rows are excluded
    // when labels exist so faults never contaminate the reference scale.
    long count = 0;
    std::vector<double> sum(ds.channels, 0.0), sum2(ds.channels, 0.0);
    for (long t = 0; t < ds.train_end; ++t) {
        if (ds.labeled() && ds.labels[t] != 0) continue;
        ++count;
        for (int c = 0; c < ds.channels; ++c) {
            const double v = ds.raw(t, c);
            sum[c] += v;
            sum2[c] += v * v;
        }
    }
    if (count < 2) throw std::invalid_argument("dataset: too few normal training rows");
    for (int c = 0; c < ds.channels; ++c) {
        const double mean = sum[c] / static_cast<double>(count);
        const double var =
            (sum2[c] - static_cast<double>(count) * mean * mean) / static_cast<double>(count - 1);
        ds.channel_mean[c] = mean;
        ds.channel_std[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
}

TimeSeriesDataset load_csv(const std::string& path, const DatasetSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open data file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv: empty file: " + path);
    auto header = split_csv_line(line);
    if (header.empty()) throw std::runtime_error("csv: empty header: " + path);

    TimeSeriesDataset ds;
    bool has_label = header.back() == "label";
    const int ncols = static_cast<int>(header.size());
    ds.channels = has_label ? ncols - 1 : ncols;
    if (ds.channels < 1) throw std::runtime_error("csv: no data channels: " + path);
    ds.channel_names.assign(header.begin(), header.begin() + ds.channels);

    long row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != ncols) {
            throw std::runtime_error("csv: data row " + std::to_string(row) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(ncols));
        }
        for (int c = 0; c < ds.channels; ++c) {
            ds.values.push_back(parse_number(cells[c], row, c));
        }
        if (has_label) {
            const double lv = parse_number(cells[ncols - 1], row, ncols - 1);
            if (lv != 0.0 && lv != 1.0) {
                throw std::runtime_error("csv: label at data row " + std::to_string(row) +
                                         " must be 0 or 1");
            }
            ds.labels.push_back(static_cast<int>(lv));
        }
    }
    ds.length = row;
    if (ds.length == 0) throw std::runtime_error("csv: no data rows: " + path);
    finalize_dataset(ds, schema);
    return ds;
}

NodeGrouping load_grouping(const std::string& path, const TimeSeriesDataset& ds) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open grouping file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("grouping: invalid JSON in " + path + ": " + e.what());
    }
    if (!j.is_object() || j.empty()) throw std::runtime_error("grouping: expected a JSON object");

    NodeGrouping g;
    std::vector<int> used(ds.channels, 0);
    for (auto it = j.begin(); it != j.end(); ++it) {
        g.node_names.push_back(it.key());
        std::vector<int> idx;
        for (const auto& ch : it.value()) {
            const std::string name = ch.get<std::string>();
            auto pos = std::find(ds.channel_names.begin(), ds.channel_names.end(), name);
            if (pos == ds.channel_names.end()) {
                throw std::runtime_error("grouping: unknown channel '" + name + "'");
            }
            const int ci = static_cast<int>(pos - ds.channel_names.begin());
            if (used[ci]++) throw std::runtime_error("grouping: channel '" + name + "' used twice");
            idx.push_back(ci);
        }
        g.node_channels.push_back(std::move(idx));
    }
    for (int c = 0; c < ds.channels; ++c) {
        if (!used[c]) {
            throw std::runtime_error("grouping: channel '" + ds.channel_names[c] + "' not covered");
        }
    }
    for (const auto& nc : g.node_channels) {
        if (nc.size() != g.node_channels[0].size()) {
            throw std::runtime_error("grouping: all nodes need the same feature count");
        }
        if (nc.empty()) throw std::runtime_error("grouping: empty node");
    }
    return g;
}

namespace {

// One normalized row laid out node-major when grouped, plain otherwise.
void fill_flat_row(const TimeSeriesDataset& ds, long t, double* out) {
    if (ds.grouping) {
        std::size_t o = 0;
        for (const auto& node : ds.grouping->node_channels) {
            for (int c : node) out[o++] = ds.normalized(t, c);
        }
    } else {
        for (int c = 0; c < ds.channels; ++c) out[c] = ds.normalized(t, c);
    }
}

}  // namespace

std::vector<WindowPair> make_windows(const TimeSeriesDataset& ds, long begin, long end,
                                     int history, int stride, bool normal_only) {
    if (history < 1 || stride < 1) throw std::invalid_argument("windows: history, stride >= 1");
    if (begin < 0 || end > ds.length || end - begin <= history) {
        throw std::invalid_argument("windows: segment [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") too short for history " +
                                    std::to_string(history));
    }
    const int flat = ds.grouping ? ds.grouping->n_nodes() * ds.grouping->features_per_node()
                                 : ds.channels;
    const int n = ds.grouping ? ds.grouping->n_nodes() : 1;
    const int d = ds.grouping ? ds.grouping->features_per_node() : ds.channels;

    std::vector<WindowPair> out;
    for (long start = begin; start + history < end; start += stride) {
        const long t0 = start + history;
        const int label = ds.labeled() ? ds.labels[t0] : -1;
        if (normal_only && label == 1) continue;
        WindowPair w;
        w.time_index = t0;
        w.label = label;
        w.x0 = Tensor({n, d});
        fill_flat_row(ds, t0, w.x0.data());
        w.x_hist = Tensor({history, flat});
        for (int h = 0; h < history; ++h) {
            fill_flat_row(ds, start + h, w.x_hist.data() + static_cast<std::size_t>(h) * flat);
        }
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<WindowPair> train_windows(const TimeSeriesDataset& ds, int history, int stride) {
    return make_windows(ds, 0, ds.train_end, history, stride, ds.labeled());
}

std::vector<WindowPair> val_windows(const TimeSeriesDataset& ds, int history, int stride) {
    return make_windows(ds, ds.train_end, ds.val_end, history, stride, ds.labeled());
}

std::vector<WindowPair> test_windows(const TimeSeriesDataset& ds, int history, int stride) {
    return make_windows(ds, ds.val_end, ds.length, history, stride, false);
}

void SyntheticSpec::validate() const {
    if (channels < 1) throw std::invalid_argument("synth: channels >= 1");
    if (length < 2) throw std::invalid_argument("synth: length >= 2");
    if (ar_coeff.size() != static_cast<std::size_t>(channels)) {
        throw std::invalid_argument("synth: need one ar coefficient per channel");
    }
    for (double a : ar_coeff) {
        if (!(a > -1.0 && a < 1.0)) throw std::invalid_argument("synth: ar coefficients in (-1, 1)");
    }
    if (!mixing.empty() &&
        mixing.size() != static_cast<std::size_t>(channels) * static_cast<std::size_t>(channels)) {
        throw std::invalid_argument("synth: mixing matrix must be channels x channels");
    }
    for (const auto& f : faults) {
        if (f.onset < 0 || f.duration < 1 || f.onset + f.duration > length) {
            throw std::invalid_argument("synth: fault interval [" + std::to_string(f.onset) + ", " +
                                        std::to_string(f.onset + f.duration) +
                                        ") outside the series");
        }
        for (int c : f.channels) {
            if (c < 0 || c >= channels) throw std::invalid_argument("synth: fault channel out of range");
        }
    }
}

TimeSeriesDataset synth_generate(const SyntheticSpec& spec, const DatasetSchema& schema) {
    spec.validate();
    const int nc = spec.channels;
    Rng rng = Rng(spec.seed).split("synth");

    // Per-time fault bookkeeping.
    std::vector<int> label(spec.length, 0);
    auto affected = [&](const FaultSpec& f, int c) {
        return f.channels.empty() ||
               std::find(f.channels.begin(), f.channels.end(), c) != f.channels.end();
    };

    TimeSeriesDataset ds;
    ds.channels = nc;
    ds.length = spec.length;
    for (int c = 0; c < nc; ++c) ds.channel_names.push_back("c" + std::to_string(c));
    ds.values.resize(static_cast<std::size_t>(spec.length) * nc);

    // Marginal std of each mixed channel, for sigma-unit mean shifts.
    std::vector<double> mixed_std(nc, 1.0);
    if (!spec.mixing.empty()) {
        for (int i = 0; i < nc; ++i) {
            double s2 = 0.0;
            for (int j = 0; j < nc; ++j) {
                const double m = spec.mixing[static_cast<std::size_t>(i) * nc + j];
                s2 += m * m;
            }
            mixed_std[i] = std::sqrt(std::max(s2, 1e-12));
        }
    }

    const double sqrt3 = std::sqrt(3.0);
    auto draw_innovation = [&]() {
        return spec.uniform_innovations ? rng.uniform(-sqrt3, sqrt3) : rng.normal();
    };
    std::vector<double> u(nc, 0.0);
    for (long t = 0; t < spec.length; ++t) {
        for (int c = 0; c < nc; ++c) {
            double innov_scale = std::sqrt(1.0 - spec.ar_coeff[c] * spec.ar_coeff[c]);
            for (const auto& f : spec.faults) {
                if (f.type == FaultType::variance_burst && t >= f.onset &&
                    t < f.onset + f.duration && affected(f, c)) {
                    innov_scale *= f.magnitude;
                }
            }
            const double w = draw_innovation();
            u[c] = t == 0 ? w : spec.ar_coeff[c] * u[c] + innov_scale * w;
        }
        for (int c = 0; c < nc; ++c) {
            double v;
            bool corr_broken = false;
            for (const auto& f : spec.faults) {
                if (f.type == FaultType::correlation_break && t >= f.onset &&
                    t < f.onset + f.duration && affected(f, c)) {
                    corr_broken = true;
                }
            }
            if (spec.mixing.empty() || corr_broken) {
                v = u[c];
            } else {
                v = 0.0;
                for (int j = 0; j < nc; ++j) {
                    v += spec.mixing[static_cast<std::size_t>(c) * nc + j] * u[j];
                }
            }
            for (const auto& f : spec.faults) {
                if (f.type == FaultType::mean_shift && t >= f.onset && t < f.onset + f.duration &&
                    affected(f, c)) {
                    v += f.magnitude * mixed_std[c];
                }
            }
            ds.values[static_cast<std::size_t>(t) * nc + c] = v;
        }
        for (const auto& f : spec.faults) {
            if (t >= f.onset && t < f.onset + f.duration) label[t] = 1;
        }
    }
    ds.labels = std::move(label);
    finalize_dataset(ds, schema);
    return ds;
}

void write_csv(const TimeSeriesDataset& ds, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write data file: " + path);
    for (int c = 0; c < ds.channels; ++c) {
        std::fprintf(f, "%s%s", c ? "," : "", ds.channel_names[c].c_str());
    }
    if (ds.labeled()) std::fprintf(f, ",label");
    std::fprintf(f, "\n");
    for (long t = 0; t < ds.length; ++t) {
        for (int c = 0; c < ds.channels; ++c) {
            std::fprintf(f, "%s%.17g", c ? "," : "", ds.raw(t, c));
        }
        if (ds.labeled()) std::fprintf(f, ",%d", ds.labels[t]);
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

}  // namespace dtd
