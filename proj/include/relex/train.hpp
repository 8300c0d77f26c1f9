#pragma once

#include "relex/network.hpp"

namespace relex {

// Memorization-task trainer: n_points inputs with iid unit-Gaussian
// coordinates, each given an arbitrary label in [0, n_out); full-batch Adam
// on softmax cross-entropy. Deterministic given the seed, independent of the
// thread count (per-example gradients land in per-example slots and are
// reduced in a fixed order).
struct TrainConfig {
    int n_points = 1000;
    int epochs = 1000;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
};

struct TrainResult {
    Network net;
    double accuracy = 0.0;
    double final_loss = 0.0;
};

TrainResult train_memorization(const Network& init, const TrainConfig& cfg);

}  // namespace relex
