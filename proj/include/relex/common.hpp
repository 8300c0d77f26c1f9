#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace relex {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Address of a hidden neuron: layer is 1-based (layer 0 is the input).
struct NeuronId {
    int layer = 0;
    int index = 0;

    friend bool operator==(const NeuronId& a, const NeuronId& b) {
        return a.layer == b.layer && a.index == b.index;
    }
    friend bool operator<(const NeuronId& a, const NeuronId& b) {
        return a.layer != b.layer ? a.layer < b.layer : a.index < b.index;
    }
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class AddressError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    using Error::Error;
};

class DegenerateFitError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

// Thrown when a query budget runs out; carries the count of executed queries.
class BudgetExhausted : public Error {
public:
    explicit BudgetExhausted(uint64_t used)
        : Error("query budget exhausted after " + std::to_string(used) + " queries"),
          queries_used(used) {}
    uint64_t queries_used;
};

using Rng = std::mt19937_64;

// splitmix64-style mixing for deriving independent stream seeds.
uint64_t mix_seed(uint64_t a, uint64_t b);

// Shortest exact decimal for a double (17 significant digits round-trip).
std::string fmt_double17(double v);

VectorXd random_unit(Rng& rng, int dim);
VectorXd random_in_ball(Rng& rng, int dim, double radius);

}  // namespace relex
