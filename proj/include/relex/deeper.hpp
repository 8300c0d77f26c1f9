#pragma once

#include "relex/layer1.hpp"

#include <set>
#include <string>
#include <vector>

namespace relex {

// Layers recovered so far. Every layer below the top is sign-resolved; the
// top layer is unit-norm with signs pending. Zero sets (and hence region
// geometry restricted to known neurons) are well defined either way.
struct KnownPrefix {
    int input_dim = 0;
    std::vector<LayerEstimate> layers;

    int top_layer() const { return static_cast<int>(layers.size()); }
    int top_width() const { return layers.empty() ? 0 : layers.back().count(); }
    int neuron_count() const;
    int flat_index(NeuronId id) const;
    NeuronId neuron_at(int flat) const;

    // Local affine data of every prefix neuron on the region containing x:
    // column f of grad and value[f] satisfy z_f(y) = grad_f . (y - x) + value[f].
    struct Forms {
        MatrixXd grad;   // input_dim x neuron_count
        VectorXd value;  // preactivation values at the query point
    };
    Forms affine_forms(const VectorXd& x) const;
    std::vector<int8_t> signature(const VectorXd& x) const;  // sign of every preactivation
};

struct ClosestHit {
    double c = 0.0;       // smallest positive ray parameter
    NeuronId id;          // boundary owner
    VectorXd grad;        // that neuron's gradient in the region of p
    double value_at_p = 0.0;
    double runner_up_gap = 0.0;  // c distance to the second-closest boundary
};

// Smallest c > 0 with p + c v on a known neuron's boundary, computed from the
// hyperplane each known neuron defines under p's activation pattern. Returns
// nothing when the ray escapes the region arrangement.
std::optional<ClosestHit> closest_boundary(const KnownPrefix& prefix, const VectorXd& p,
                                           const VectorXd& v);

struct CrossingInfo {
    int from_node = -1;
    NeuronId crossed;
    VectorXd crossing_point;
    VectorXd crossed_grad;  // gradient of the crossed neuron in the from-region
    double sigma_to = 1.0;  // sign of the crossed preactivation on the to-side
};

struct ExplorationNode {
    BoundaryPoint bp;
    Hyperplane local;
    std::vector<int8_t> sig;
    KnownPrefix::Forms forms;
    CrossingInfo arrival;  // unset (from_node = -1) for the root
};

enum class ExploreOutcome { CoveredPrevLayer, Deeper, Partial, Budget };

struct ExplorationState {
    std::vector<ExplorationNode> nodes;
    std::vector<CrossingInfo> redundant;           // crossings into already-visited regions
    std::vector<int> redundant_to;                 // node reached by each redundant crossing
    std::set<std::pair<int, int>> crossed_ids;     // (layer, index) of boundaries crossed
    ExploreOutcome outcome = ExploreOutcome::Partial;
    int steps = 0;

    bool covered_layer(int layer, int width) const;
};

struct DeeperConfig {
    ProbeConfig probe;
    int max_steps_factor = 50;      // max exploration steps = factor * width(k-1)
    double cross_band = 1e-5;       // crossing-containment tolerance (scaled by |p|)
    double consistency_tol = 1e-4;  // relative spread allowed across redundant crossings
    uint64_t seed = 2;
};

// From a boundary point with a fitted local hyperplane, walks the candidate
// boundary across known-layer boundaries. Ends when every top-layer boundary
// has been crossed, when a continuation check fails (the candidate lives in a
// deeper layer), or when the step/direction supply runs out (partial state;
// weights remain recoverable for whatever was crossed).
ExplorationState explore_boundary(Oracle& oracle, const KnownPrefix& prefix,
                                  const BoundaryPoint& p1, const DeeperConfig& cfg, Rng& rng);

struct DirectionChoice {
    int node = 0;
    VectorXd direction;
    double travel = 0.0;  // in-plane distance to the target's hyperplane
};

// The paper's exploration heuristic: among current nodes, the in-plane
// direction of steepest approach toward the hyperplane the target boundary
// would have under that node's activation pattern.
std::optional<DirectionChoice> choose_direction(const ExplorationState& state,
                                                const KnownPrefix& prefix, NeuronId target,
                                                const std::set<std::pair<int, int>>& attempted);

// Scalar pieces of the bending algebra, exposed for oracle-style tests.
// solve_crossing solves c * v_to - beta * v_crossed = g_from for (c, beta):
// c by projecting onto the complement of v_crossed, beta by projecting the
// remainder onto v_crossed; the orthogonal residual is the consistency check.
struct CrossingSolution {
    double c = 0.0;
    double beta = 0.0;
    double residual = 0.0;
};
CrossingSolution solve_crossing(const VectorXd& g_from, const VectorXd& v_to,
                                const VectorXd& v_crossed);

// Weight of the crossed neuron from the gradient jump across its boundary:
// (g_after - g_before) . v / |v|^2.
double bend_weight(const VectorXd& g_before, const VectorXd& g_after, const VectorXd& v_crossed);

struct NeuronRecovery {
    VectorXd row;                    // indexed by top-layer neuron, scale/sign relative to node 0
    std::vector<uint8_t> have;      // which entries were actually measured
    std::vector<VectorXd> node_gradient;  // calibrated gradient estimate per node
    double max_residual = 0.0;       // worst crossing-equation residual
    double max_spread = 0.0;         // worst relative disagreement across repeated crossings
    bool consistent = true;
    int source_point = -1;           // pool index of the seed boundary point
};

// Appendix-style propagation: fixes the node-0 gradient to the unit normal,
// chains scale factors across crossings, and reads each top-layer weight off
// the gradient bend. Bias recovery waits for sign resolution.
NeuronRecovery recover_weights_for_neuron(const ExplorationState& state,
                                          const KnownPrefix& prefix,
                                          const DeeperConfig& cfg);

struct SignResolution {
    VectorXd t;                   // +-1 per top-layer neuron, 0 = unresolved
    bool ok = false;
    std::vector<int> unresolved;
    double residual = 0.0;        // relative residual after rounding
    double min_confidence = 0.0;  // smallest |t| before rounding
    // (candidate index, relative residual of its equations under rounded t);
    // lets the caller drop a misclassified candidate and re-solve
    std::vector<std::pair<int, double>> candidate_residuals;
};

// Overconstrained linear system over the top-layer signs built from every
// candidate's calibrated gradients. Candidates with incomplete rows
// contribute no equations.
SignResolution resolve_signs(const std::vector<NeuronRecovery>& recoveries,
                             const std::vector<ExplorationState>& states,
                             const KnownPrefix& prefix);

struct MissingWeight {
    int layer = 0;  // weight W^layer[from][to]
    int from = 0;
    int to = 0;
};

struct NeuronProvenance {
    NeuronId neuron;
    int nodes = 0;
    int crossings = 0;
    std::vector<std::pair<int, int>> crossed;  // (layer, index) list
};

struct RecoveredModel {
    int input_dim = 0;
    int output_dim = 0;
    std::vector<LayerEstimate> layers;
    MatrixXd output_weights;  // n_d x n_out, valid when output_recovered
    VectorXd output_biases;
    bool output_recovered = false;

    std::vector<MissingWeight> missing_weights;
    std::vector<NeuronId> missing_biases;
    std::vector<NeuronId> unresolved_signs;
    std::vector<NeuronId> excluded_neurons;  // recovered but unusable (missing bias)
    std::vector<NeuronProvenance> provenance;
    std::vector<std::string> warnings;

    RecoveryStatus status = RecoveryStatus::Complete;
    uint64_t queries_used = 0;

    size_t parameters_identified() const;
    bool complete() const;
    Network to_network() const;  // missing entries emitted as zero (flagged above)
    std::string report_json() const;
};

struct ExtractConfig {
    Layer1Config layer1;
    DeeperConfig deeper;
    std::vector<int> widths_hint;  // optional per-hidden-layer neuron counts
    std::optional<uint64_t> budget;
    uint64_t seed = 0;
    int max_depth = 8;
};

// Full pipeline: first layer, then deeper layers from recycled points, sign
// resolution per stage, and the output layer by regression.
RecoveredModel extract_network(Oracle& oracle, const ExtractConfig& cfg);

}  // namespace relex
