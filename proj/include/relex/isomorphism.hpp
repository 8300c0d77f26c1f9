#pragma once

#include "relex/layer1.hpp"
#include "relex/network.hpp"

#include <string>
#include <vector>

namespace relex {

struct CanonicalizeResult {
    Network net;
    std::vector<NeuronId> flagged;  // neurons with zero incoming weights
};

// Unit-norm incoming weights per hidden neuron (with compensating outgoing
// rescale) and a fixed lexicographic neuron order per layer. Two isomorphic
// networks canonicalize to the same parameters up to rounding.
CanonicalizeResult canonicalize(const Network& net);

// Exact min-cost assignment (Hungarian, O(n^3)); returns row -> col, -1 when
// a row is unassigned (more rows than columns).
std::vector<int> solve_assignment(const MatrixXd& cost);

struct LayerAlignment {
    int layer = 0;
    std::vector<int> match;    // estimated index -> true index, -1 unmatched
    std::vector<int> sign;     // optimal sign per estimated neuron (+1/-1)
    int matched = 0;
    int unmatched_estimate = 0;
    int unmatched_truth = 0;
    double log_weight_error = 0.0;  // ln(|West - Wtrue|_F / |West|_F), unit-norm columns
    double log_bias_error = 0.0;
};

struct AlignmentReport {
    std::vector<LayerAlignment> layers;
    bool has_functional = false;
    double functional_max = 0.0;
    double functional_mean = 0.0;
    std::string log_base = "natural";

    std::string to_json_lines() const;
    std::string to_table() const;
};

// Neuron matching between parameter sets of one layer. Columns are neurons;
// cost is the l2 distance between unit-normalized (weights, bias) columns,
// minimized over the sign (extraction reports sign-unresolved neurons).
LayerAlignment align_layer_params(int layer, const MatrixXd& est_w, const VectorXd& est_b,
                                  const MatrixXd& true_w, const VectorXd& true_b);

AlignmentReport align(const std::vector<LayerEstimate>& estimate, const Network& truth);
AlignmentReport align_networks(const Network& estimate, const Network& truth);

struct BallSampler {
    uint64_t seed = 0;
    double radius = 10.0;
};

struct FunctionalDistance {
    double max_abs = 0.0;
    double mean_abs = 0.0;
};

FunctionalDistance functional_distance(const Network& a, const Network& b,
                                       const BallSampler& sampler, int n_samples);

}  // namespace relex
