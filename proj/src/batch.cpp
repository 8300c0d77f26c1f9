#include "relex/batch.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace relex {

namespace {

void check_batch(const Network& net, const MatrixXd& points) {
    if (points.rows() != net.input_dim())
        throw ShapeError("batch: points have " + std::to_string(points.rows()) +
                         " rows, expected " + std::to_string(net.input_dim()));
}

void hidden_preacts_into(const Network& net, const double* x, double* out, double* scratch) {
    const int maxw = net.max_width();
    double* cur = scratch;
    double* nxt = scratch + maxw;
    for (int i = 0; i < net.input_dim(); ++i) cur[i] = x[i];
    int at = 0;
    for (int k = 1; k <= net.depth(); ++k) {
        const MatrixXd& w = net.weight(k);
        const VectorXd& b = net.bias(k);
        const int nin = net.width(k - 1);
        const int nout = net.width(k);
        for (int j = 0; j < nout; ++j) {
            double z = b[j];
            const double* col = w.col(j).data();
            for (int i = 0; i < nin; ++i) z += col[i] * cur[i];
            out[at + j] = z;
            nxt[j] = z > 0 ? z : 0.0;
        }
        at += nout;
        std::swap(cur, nxt);
    }
}

}  // namespace

MatrixXd forward_batch_serial(const Network& net, const MatrixXd& points) {
    check_batch(net, points);
    const Eigen::Index n = points.cols();
    MatrixXd out(net.output_dim(), n);
    std::vector<double> scratch(static_cast<size_t>(2 * net.max_width()));
    for (Eigen::Index c = 0; c < n; ++c)
        net.forward_into(points.col(c).data(), out.col(c).data(), scratch.data());
    return out;
}

MatrixXd forward_batch(const Network& net, const MatrixXd& points) {
    check_batch(net, points);
    const Eigen::Index n = points.cols();
    MatrixXd out(net.output_dim(), n);
#pragma omp parallel
    {
        std::vector<double> scratch(static_cast<size_t>(2 * net.max_width()));
#pragma omp for schedule(static)
        for (Eigen::Index c = 0; c < n; ++c)
            net.forward_into(points.col(c).data(), out.col(c).data(), scratch.data());
    }
    return out;
}

MatrixXd hidden_preact_batch_serial(const Network& net, const MatrixXd& points) {
    check_batch(net, points);
    const Eigen::Index n = points.cols();
    MatrixXd out(net.hidden_count(), n);
    std::vector<double> scratch(static_cast<size_t>(2 * net.max_width()));
    for (Eigen::Index c = 0; c < n; ++c)
        hidden_preacts_into(net, points.col(c).data(), out.col(c).data(), scratch.data());
    return out;
}

MatrixXd hidden_preact_batch(const Network& net, const MatrixXd& points) {
    check_batch(net, points);
    const Eigen::Index n = points.cols();
    MatrixXd out(net.hidden_count(), n);
#pragma omp parallel
    {
        std::vector<double> scratch(static_cast<size_t>(2 * net.max_width()));
#pragma omp for schedule(static)
        for (Eigen::Index c = 0; c < n; ++c)
            hidden_preacts_into(net, points.col(c).data(), out.col(c).data(), scratch.data());
    }
    return out;
}

Deviation batch_deviation(const Network& a, const Network& b, const MatrixXd& points) {
    if (a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim())
        throw ShapeError("batch_deviation: networks have different interface dimensions");
    MatrixXd ya = forward_batch(a, points);
    MatrixXd yb = forward_batch(b, points);
    Deviation d;
    d.max_abs = (ya - yb).cwiseAbs().maxCoeff();
    d.mean_abs = (ya - yb).cwiseAbs().mean();
    return d;
}

}  // namespace relex
