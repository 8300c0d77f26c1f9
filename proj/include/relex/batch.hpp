#pragma once

#include "relex/network.hpp"

namespace relex {

// Batch kernels over column-packed points (one input per column). The OpenMP
// and serial variants share the same per-column inner kernel, so their
// outputs are bitwise identical; the serial path is the reference used in
// tests and in the kernel benchmark.

MatrixXd forward_batch(const Network& net, const MatrixXd& points);
MatrixXd forward_batch_serial(const Network& net, const MatrixXd& points);

MatrixXd hidden_preact_batch(const Network& net, const MatrixXd& points);
MatrixXd hidden_preact_batch_serial(const Network& net, const MatrixXd& points);

// Worst and mean absolute output deviation between two networks on a batch.
struct Deviation {
    double max_abs = 0.0;
    double mean_abs = 0.0;
};
Deviation batch_deviation(const Network& a, const Network& b, const MatrixXd& points);

}  // namespace relex
