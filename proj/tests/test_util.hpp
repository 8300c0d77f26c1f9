#pragma once

#include "relex/network.hpp"
#include "relex/probe.hpp"

#include <cmath>
#include <vector>

namespace relex::testutil {

// Straight-line reimplementation of the layer recursion, kept independent of
// the production forward path on purpose: plain nested loops over accessor
// copies, no shared kernels.
inline VectorXd naive_forward(const Network& net, const VectorXd& x) {
    std::vector<double> a(static_cast<size_t>(x.size()));
    for (int i = 0; i < x.size(); ++i) a[static_cast<size_t>(i)] = x[i];
    const int layers = net.depth() + 1;
    for (int k = 1; k <= layers; ++k) {
        const MatrixXd w = net.weight(k);
        const VectorXd b = net.bias(k);
        std::vector<double> z(static_cast<size_t>(w.cols()));
        for (int j = 0; j < w.cols(); ++j) {
            double acc = b[j];
            for (int i = 0; i < w.rows(); ++i) acc += a[static_cast<size_t>(i)] * w(i, j);
            z[static_cast<size_t>(j)] = acc;
        }
        if (k < layers)
            for (auto& v : z) v = v > 0 ? v : 0.0;
        a = std::move(z);
    }
    VectorXd out(static_cast<int>(a.size()));
    for (size_t i = 0; i < a.size(); ++i) out[static_cast<int>(i)] = a[i];
    return out;
}

inline double naive_preactivation(const Network& net, NeuronId z, const VectorXd& x) {
    std::vector<double> a(static_cast<size_t>(x.size()));
    for (int i = 0; i < x.size(); ++i) a[static_cast<size_t>(i)] = x[i];
    for (int k = 1; k <= z.layer; ++k) {
        const MatrixXd w = net.weight(k);
        const VectorXd b = net.bias(k);
        std::vector<double> pre(static_cast<size_t>(w.cols()));
        for (int j = 0; j < w.cols(); ++j) {
            double acc = b[j];
            for (int i = 0; i < w.rows(); ++i) acc += a[static_cast<size_t>(i)] * w(i, j);
            pre[static_cast<size_t>(j)] = acc;
        }
        if (k == z.layer) return pre[static_cast<size_t>(z.index)];
        for (auto& v : pre) v = v > 0 ? v : 0.0;
        a = std::move(pre);
    }
    return 0.0;
}

// Ground-truth boundary crossings of every hidden neuron along a segment:
// dense scan for sign changes of each preactivation, then bisection. Used as
// the oracle that points_on_line is checked against.
inline std::vector<double> true_crossings_on_segment(const Network& net, const Segment& seg,
                                                     int dense = 20000) {
    std::vector<double> roots;
    for (int layer = 1; layer <= net.depth(); ++layer) {
        for (int idx = 0; idx < net.width(layer); ++idx) {
            const NeuronId id{layer, idx};
            double prev_t = 0.0;
            double prev_v = net.preactivation(id, seg.at(0.0));
            for (int s = 1; s <= dense; ++s) {
                const double t = static_cast<double>(s) / dense;
                const double v = net.preactivation(id, seg.at(t));
                if ((prev_v > 0) != (v > 0)) {
                    double lo = prev_t, hi = t, vlo = prev_v;
                    for (int it = 0; it < 80; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        const double vm = net.preactivation(id, seg.at(mid));
                        if ((vlo > 0) == (vm > 0)) {
                            lo = mid;
                            vlo = vm;
                        } else {
                            hi = mid;
                        }
                    }
                    roots.push_back(0.5 * (lo + hi));
                }
                prev_t = t;
                prev_v = v;
            }
        }
    }
    std::sort(roots.begin(), roots.end());
    return roots;
}

// True sign-crossing parameters of a single neuron along a segment.
inline std::vector<double> true_neuron_roots(const Network& net, NeuronId id, const Segment& seg,
                                             int dense = 20000) {
    std::vector<double> roots;
    double prev_t = 0.0;
    double prev_v = net.preactivation(id, seg.at(0.0));
    for (int s = 1; s <= dense; ++s) {
        const double t = static_cast<double>(s) / dense;
        const double v = net.preactivation(id, seg.at(t));
        if ((prev_v > 0) != (v > 0)) {
            double lo = prev_t, hi = t, vlo = prev_v;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double vm = net.preactivation(id, seg.at(mid));
                if ((vlo > 0) == (vm > 0)) {
                    lo = mid;
                    vlo = vm;
                } else {
                    hi = mid;
                }
            }
            roots.push_back(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_v = v;
    }
    return roots;
}

}  // namespace relex::testutil
