#include "relex/network.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace relex {

namespace {

void check_finite(const MatrixXd& m, const std::string& what) {
    if (!m.allFinite()) throw DomainError(what + " contains non-finite entries");
}

}  // namespace

Network::Network(std::vector<int> widths, std::vector<MatrixXd> weights,
                 std::vector<VectorXd> biases)
    : widths_(std::move(widths)), weights_(std::move(weights)), biases_(std::move(biases)) {
    if (widths_.size() < 3) throw ConfigError("network needs at least one hidden layer");
    for (int w : widths_)
        if (w < 1) throw ConfigError("all layer widths must be >= 1");
    const size_t layers = widths_.size() - 1;
    if (weights_.size() != layers || biases_.size() != layers)
        throw ShapeError("weight/bias count does not match widths");
    for (size_t k = 0; k < layers; ++k) {
        if (weights_[k].rows() != widths_[k] || weights_[k].cols() != widths_[k + 1])
            throw ShapeError("weight matrix " + std::to_string(k + 1) + " has wrong shape");
        if (biases_[k].size() != widths_[k + 1])
            throw ShapeError("bias vector " + std::to_string(k + 1) + " has wrong length");
        check_finite(weights_[k], "weight matrix " + std::to_string(k + 1));
        check_finite(biases_[k], "bias vector " + std::to_string(k + 1));
    }
}

Network Network::he_init(const std::vector<int>& widths, uint64_t seed) {
    if (widths.size() < 3) throw ConfigError("he_init: need [n_in, hidden..., n_out]");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<MatrixXd> weights;
    std::vector<VectorXd> biases;
    for (size_t k = 0; k + 1 < widths.size(); ++k) {
        const int fan_in = widths[k];
        const int fan_out = widths[k + 1];
        const double sigma = std::sqrt(2.0 / fan_in);
        MatrixXd w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = sigma * normal(rng);
        VectorXd b(fan_out);
        for (int j = 0; j < fan_out; ++j) b[j] = normal(rng);
        weights.push_back(std::move(w));
        biases.push_back(std::move(b));
    }
    return Network(widths, std::move(weights), std::move(biases));
}

int Network::hidden_count() const {
    int n = 0;
    for (size_t k = 1; k + 1 < widths_.size(); ++k) n += widths_[k];
    return n;
}

size_t Network::parameter_count() const {
    size_t n = 0;
    for (size_t k = 0; k + 1 < widths_.size(); ++k)
        n += static_cast<size_t>(widths_[k] + 1) * static_cast<size_t>(widths_[k + 1]);
    return n;
}

int Network::max_width() const {
    return *std::max_element(widths_.begin(), widths_.end());
}

void Network::forward_into(const double* x, double* y, double* scratch) const {
    const int maxw = max_width();
    double* cur = scratch;
    double* nxt = scratch + maxw;
    std::copy(x, x + widths_[0], cur);
    const int layers = static_cast<int>(widths_.size()) - 1;
    for (int k = 0; k < layers; ++k) {
        const MatrixXd& w = weights_[static_cast<size_t>(k)];
        const VectorXd& b = biases_[static_cast<size_t>(k)];
        const int nin = widths_[static_cast<size_t>(k)];
        const int nout = widths_[static_cast<size_t>(k) + 1];
        for (int j = 0; j < nout; ++j) {
            double z = b[j];
            const double* col = w.col(j).data();
            for (int i = 0; i < nin; ++i) z += col[i] * cur[i];
            nxt[j] = z;
        }
        if (k + 1 < layers) {
            for (int j = 0; j < nout; ++j) nxt[j] = nxt[j] > 0 ? nxt[j] : 0.0;
        }
        std::swap(cur, nxt);
    }
    std::copy(cur, cur + widths_.back(), y);
}

VectorXd Network::forward(const VectorXd& x) const {
    if (x.size() != input_dim())
        throw ShapeError("forward: input has length " + std::to_string(x.size()) +
                         ", expected " + std::to_string(input_dim()));
    if (!x.allFinite()) throw DomainError("forward: input not finite");
    VectorXd y(output_dim());
    std::vector<double> scratch(static_cast<size_t>(2 * max_width()));
    forward_into(x.data(), y.data(), scratch.data());
    return y;
}

void Network::check_neuron(NeuronId z) const {
    if (z.layer < 1 || z.layer > depth())
        throw AddressError("neuron layer " + std::to_string(z.layer) + " is not hidden");
    if (z.index < 0 || z.index >= width(z.layer))
        throw AddressError("neuron index " + std::to_string(z.index) + " out of range for layer " +
                           std::to_string(z.layer));
}

double Network::preactivation(NeuronId z, const VectorXd& x) const {
    check_neuron(z);
    if (x.size() != input_dim()) throw ShapeError("preactivation: bad input length");
    VectorXd a = x;
    for (int k = 1; k <= z.layer; ++k) {
        VectorXd pre = weight(k).transpose() * a + bias(k);
        if (k == z.layer) return pre[z.index];
        a = pre.cwiseMax(0.0);
    }
    return 0.0;  // unreachable
}

VectorXd Network::hidden_preactivations(const VectorXd& x) const {
    if (x.size() != input_dim()) throw ShapeError("hidden_preactivations: bad input length");
    VectorXd out(hidden_count());
    int at = 0;
    VectorXd a = x;
    for (int k = 1; k <= depth(); ++k) {
        VectorXd pre = weight(k).transpose() * a + bias(k);
        out.segment(at, width(k)) = pre;
        at += width(k);
        a = pre.cwiseMax(0.0);
    }
    return out;
}

std::vector<uint8_t> Network::activation_pattern(const VectorXd& x) const {
    VectorXd pre = hidden_preactivations(x);
    std::vector<uint8_t> bits(static_cast<size_t>(pre.size()));
    for (int i = 0; i < pre.size(); ++i) bits[static_cast<size_t>(i)] = pre[i] > 0 ? 1 : 0;
    return bits;
}

std::pair<VectorXd, double> Network::neuron_affine(NeuronId z, const VectorXd& x) const {
    check_neuron(z);
    if (x.size() != input_dim()) throw ShapeError("neuron_affine: bad input length");
    // Track the affine map computed by the current layer's activations.
    MatrixXd grad = MatrixXd::Identity(input_dim(), input_dim());
    VectorXd off = VectorXd::Zero(input_dim());
    VectorXd a = x;
    for (int k = 1; k <= z.layer; ++k) {
        MatrixXd g = grad * weight(k);                       // n_in x n_k
        VectorXd o = weight(k).transpose() * off + bias(k);  // n_k
        VectorXd pre = weight(k).transpose() * a + bias(k);
        if (k == z.layer) return {g.col(z.index), o[z.index]};
        for (int j = 0; j < width(k); ++j) {
            if (pre[j] <= 0) {
                g.col(j).setZero();
                o[j] = 0.0;
            }
        }
        grad = std::move(g);
        off = std::move(o);
        a = pre.cwiseMax(0.0);
    }
    return {VectorXd::Zero(input_dim()), 0.0};  // unreachable
}

VectorXd Network::neuron_gradient(NeuronId z, const VectorXd& x) const {
    return neuron_affine(z, x).first;
}

Network Network::scaled(NeuronId z, double c) const {
    check_neuron(z);
    if (!(c > 0.0)) throw DomainError("scaling constant must be positive");
    std::vector<MatrixXd> w = weights_;
    std::vector<VectorXd> b = biases_;
    w[static_cast<size_t>(z.layer - 1)].col(z.index) *= c;
    b[static_cast<size_t>(z.layer - 1)][z.index] *= c;
    w[static_cast<size_t>(z.layer)].row(z.index) /= c;
    return Network(widths_, std::move(w), std::move(b));
}

Network Network::permuted(int layer, const std::vector<int>& sigma) const {
    if (layer < 1 || layer > depth()) throw AddressError("permuted: layer is not hidden");
    const int n = width(layer);
    if (static_cast<int>(sigma.size()) != n) throw DomainError("permuted: sigma has wrong length");
    std::vector<uint8_t> seen(static_cast<size_t>(n), 0);
    for (int v : sigma) {
        if (v < 0 || v >= n || seen[static_cast<size_t>(v)])
            throw DomainError("permuted: sigma is not a permutation");
        seen[static_cast<size_t>(v)] = 1;
    }
    std::vector<MatrixXd> w = weights_;
    std::vector<VectorXd> b = biases_;
    MatrixXd& win = w[static_cast<size_t>(layer - 1)];
    VectorXd& bin = b[static_cast<size_t>(layer - 1)];
    MatrixXd& wout = w[static_cast<size_t>(layer)];
    const MatrixXd win0 = win;
    const VectorXd bin0 = bin;
    const MatrixXd wout0 = wout;
    for (int j = 0; j < n; ++j) {
        win.col(j) = win0.col(sigma[static_cast<size_t>(j)]);
        bin[j] = bin0[sigma[static_cast<size_t>(j)]];
        wout.row(j) = wout0.row(sigma[static_cast<size_t>(j)]);
    }
    return Network(widths_, std::move(w), std::move(b));
}

std::string Network::to_json_line() const {
    std::ostringstream os;
    os << "{\"version\":1,\"widths\":[";
    for (size_t i = 0; i < widths_.size(); ++i) os << (i ? "," : "") << widths_[i];
    os << "],\"weights\":[";
    for (size_t k = 0; k < weights_.size(); ++k) {
        os << (k ? "," : "") << "[";
        const MatrixXd& w = weights_[k];
        for (int i = 0; i < w.rows(); ++i) {
            os << (i ? "," : "") << "[";
            for (int j = 0; j < w.cols(); ++j) os << (j ? "," : "") << fmt_double17(w(i, j));
            os << "]";
        }
        os << "]";
    }
    os << "],\"biases\":[";
    for (size_t k = 0; k < biases_.size(); ++k) {
        os << (k ? "," : "") << "[";
        const VectorXd& b = biases_[k];
        for (int j = 0; j < b.size(); ++j) os << (j ? "," : "") << fmt_double17(b[j]);
        os << "]";
    }
    os << "]}";
    return os.str();
}

Network Network::from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("network file is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("version", 0) != 1)
        throw ConfigError("unsupported network file version");
    std::vector<int> widths = j.at("widths").get<std::vector<int>>();
    if (widths.size() < 3) throw ConfigError("network file: too few layers");
    std::vector<MatrixXd> weights;
    std::vector<VectorXd> biases;
    const auto& jw = j.at("weights");
    const auto& jb = j.at("biases");
    if (jw.size() != widths.size() - 1 || jb.size() != widths.size() - 1)
        throw ConfigError("network file: layer count mismatch");
    for (size_t k = 0; k + 1 < widths.size(); ++k) {
        const auto& rows = jw.at(k);
        MatrixXd w(widths[k], widths[k + 1]);
        if (static_cast<int>(rows.size()) != widths[k])
            throw ConfigError("network file: weight row count mismatch");
        for (int i = 0; i < widths[k]; ++i) {
            const auto& row = rows.at(static_cast<size_t>(i));
            if (static_cast<int>(row.size()) != widths[k + 1])
                throw ConfigError("network file: weight column count mismatch");
            for (int c = 0; c < widths[k + 1]; ++c) w(i, c) = row.at(static_cast<size_t>(c)).get<double>();
        }
        const auto& brow = jb.at(k);
        VectorXd b(widths[k + 1]);
        if (static_cast<int>(brow.size()) != widths[k + 1])
            throw ConfigError("network file: bias length mismatch");
        for (int c = 0; c < widths[k + 1]; ++c) b[c] = brow.at(static_cast<size_t>(c)).get<double>();
        weights.push_back(std::move(w));
        biases.push_back(std::move(b));
    }
    return Network(std::move(widths), std::move(weights), std::move(biases));
}

void Network::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << to_json_line() << "\n";
}

Network Network::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw ConfigError(path + " is empty");
    return from_json_line(line);
}

}  // namespace relex
