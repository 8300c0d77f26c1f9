#pragma once

#include "relex/deeper.hpp"
#include "relex/isomorphism.hpp"
#include "relex/train.hpp"

#include <string>
#include <vector>

namespace relex {

// A sweep run is fully determined by this config plus a seed; records are
// replayable bit for bit (wall time aside).
struct ExperimentConfig {
    std::vector<int> widths;
    bool trained = false;
    TrainConfig train;
    std::vector<uint64_t> seeds;
    std::string sweep_variable;  // "n1", "n2", or "" for a single run
    std::vector<int> sweep_values;
    std::optional<uint64_t> budget;
    int layers = 1;  // 1 = first layer only, 0 = full extraction
    ProbeConfig probe;
    std::string out_prefix;
    int parallelism = 0;

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    std::string to_json() const;
    uint64_t hash() const;
    std::vector<int> widths_for(int sweep_value) const;
};

struct RunRecord {
    uint64_t config_hash = 0;
    int sweep_value = 0;
    uint64_t seed = 0;
    uint64_t queries = 0;
    size_t params_identified = 0;
    double queries_per_param = 0.0;
    int recovered_layer1 = 0;
    int truth_layer1 = 0;
    double log_weight_error_l1 = 0.0;
    double log_bias_error_l1 = 0.0;
    double log_weight_error_l2 = 0.0;  // NaN when not measured
    double log_bias_error_l2 = 0.0;
    int recovered_layer2 = -1;
    double functional_max = 0.0;  // NaN when not measured
    int status = 0;               // exit-code convention: 0 ok, 2 partial, 3 budget
    double train_accuracy = -1.0;
    double wall_ms = 0.0;

    std::string to_json(bool include_wall) const;
};

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg);
RunRecord run_single(const ExperimentConfig& cfg, int sweep_value, uint64_t seed);

std::string sweep_csv(const std::vector<RunRecord>& records);
void write_sweep_outputs(const ExperimentConfig& cfg, const std::vector<RunRecord>& records);

// 2-D boundary tracing: polylines of every hidden neuron's zero set on a
// bounding box, colored by layer in the SVG.
struct BoundaryPolyline {
    NeuronId neuron;
    std::vector<std::pair<double, double>> points;
};

struct RenderResult {
    std::vector<BoundaryPolyline> polylines;
    std::string svg;
    std::string csv;
};

RenderResult render_boundaries_2d(const Network& net, const std::array<double, 4>& bbox,
                                  int resolution);

}  // namespace relex
