#pragma once

#include "relex/probe.hpp"

#include <string>
#include <vector>

namespace relex {

// Recovered parameters of one layer, up to per-neuron sign and scale.
// Weight columns are unit-norm (the scaling isomorphism normalization).
struct LayerEstimate {
    int layer = 1;
    MatrixXd weights;  // n_{layer-1} x n_layer
    VectorXd biases;
    std::vector<uint8_t> sign_resolved;
    std::vector<std::vector<BoundaryPoint>> provenance;

    int count() const { return static_cast<int>(weights.cols()); }
};

struct UnusedPoints {
    std::vector<BoundaryPoint> points;  // failed the whole-hyperplane test; deeper candidates
};

enum class RecoveryStatus { Complete, Partial, BudgetExhausted };

struct Layer1Config {
    std::optional<int> target_count;  // stop once this many neurons are accepted
    int max_segments = 200;
    int patience = 20;  // without a target: stop after this many segments with nothing new
    uint64_t seed = 1;
    ProbeConfig probe;
};

struct Layer1Result {
    LayerEstimate estimate;
    UnusedPoints unused;
    RecoveryStatus status = RecoveryStatus::Complete;
    std::vector<std::string> warnings;
    uint64_t queries_used = 0;
    int segments_probed = 0;
};

// Two fitted hyperplanes describe the same neuron when their normals are
// parallel within 1e-6 and offsets agree (under aligned signs) to
// 1e-5 * (1 + |offset|).
bool same_hyperplane(const Hyperplane& a, const Hyperplane& b);

// Harvests boundary points from random segments, keeps the local hyperplanes
// that pass the whole-hyperplane test as first-layer neurons, and hands the
// rest back as deeper-layer candidates.
Layer1Result recover_layer1(Oracle& oracle, const Layer1Config& cfg);

}  // namespace relex
