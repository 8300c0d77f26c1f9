#pragma once

#include "relex/common.hpp"

#include <string>
#include <utility>
#include <vector>

namespace relex {

// Fully connected ReLU network. Hidden layers apply ReLU, the output layer is
// affine. weight(k) has shape n_{k-1} x n_k (layer 0 is the input), so the
// preactivation of layer k is z^k = W^k' a^{k-1} + b^k, with a^k = ReLU(z^k)
// on hidden layers. The preactivation of a neuron includes its bias; its sign
// tells which side of the neuron's boundary an input lies on.
//
// Instances are immutable after construction; forward/preactivation are pure
// and safe for concurrent callers.
class Network {
public:
    Network(std::vector<int> widths, std::vector<MatrixXd> weights,
            std::vector<VectorXd> biases);

    // Weights iid normal with variance 2/fan-in, biases iid standard normal.
    static Network he_init(const std::vector<int>& widths, uint64_t seed);

    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int depth() const { return static_cast<int>(widths_.size()) - 2; }
    int width(int k) const { return widths_[static_cast<size_t>(k)]; }
    const std::vector<int>& widths() const { return widths_; }
    int hidden_count() const;
    size_t parameter_count() const;

    // k ranges over 1..depth()+1.
    const MatrixXd& weight(int k) const { return weights_[static_cast<size_t>(k - 1)]; }
    const VectorXd& bias(int k) const { return biases_[static_cast<size_t>(k - 1)]; }
    MatrixXd& mutable_weight(int k) { return weights_[static_cast<size_t>(k - 1)]; }
    VectorXd& mutable_bias(int k) { return biases_[static_cast<size_t>(k - 1)]; }

    VectorXd forward(const VectorXd& x) const;

    // Allocation-free kernel shared by the serial and OpenMP batch paths so
    // both produce bitwise-identical results. scratch must hold 2*max_width().
    void forward_into(const double* x, double* y, double* scratch) const;
    int max_width() const;

    double preactivation(NeuronId z, const VectorXd& x) const;
    VectorXd hidden_preactivations(const VectorXd& x) const;
    std::vector<uint8_t> activation_pattern(const VectorXd& x) const;

    // Local affine form of a neuron's preactivation on the region containing
    // x: returns (w, b) with z(y) = w.y + b throughout that region.
    std::pair<VectorXd, double> neuron_affine(NeuronId z, const VectorXd& x) const;
    VectorXd neuron_gradient(NeuronId z, const VectorXd& x) const;

    // Isomorphisms: scale a neuron's incoming weights/bias by c > 0 with the
    // compensating outgoing rescale, or permute a hidden layer.
    Network scaled(NeuronId z, double c) const;
    Network permuted(int layer, const std::vector<int>& sigma) const;

    std::string to_json_line() const;
    static Network from_json_line(const std::string& line);
    void save(const std::string& path) const;
    static Network load(const std::string& path);

    void check_neuron(NeuronId z) const;

private:
    std::vector<int> widths_;
    std::vector<MatrixXd> weights_;  // weights_[k-1] = W^k
    std::vector<VectorXd> biases_;
};

}  // namespace relex
