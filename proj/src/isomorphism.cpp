#include "relex/isomorphism.hpp"

#include "relex/batch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace relex {

namespace {

constexpr double kLogFloor = 7e-15;  // exact matches report ln(7e-15) < -30

double safe_log_ratio(double num, double den) {
    const double r = num / std::max(den, 1e-300);
    return std::log(std::max(r, kLogFloor));
}

}  // namespace

CanonicalizeResult canonicalize(const Network& net) {
    std::vector<MatrixXd> w;
    std::vector<VectorXd> b;
    for (int k = 1; k <= net.depth() + 1; ++k) {
        w.push_back(net.weight(k));
        b.push_back(net.bias(k));
    }
    std::vector<NeuronId> flagged;
    for (int k = 1; k <= net.depth(); ++k) {
        MatrixXd& wk = w[static_cast<size_t>(k - 1)];
        VectorXd& bk = b[static_cast<size_t>(k - 1)];
        MatrixXd& wnext = w[static_cast<size_t>(k)];
        const int n = static_cast<int>(wk.cols());
        for (int i = 0; i < n; ++i) {
            const double s = wk.col(i).norm();
            if (s < 1e-300) {
                flagged.push_back(NeuronId{k, i});
                continue;
            }
            wk.col(i) /= s;
            bk[i] /= s;
            wnext.row(i) *= s;
        }
        // Fixed lexicographic order on (weights, bias).
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int p, int q) {
            for (int r = 0; r < wk.rows(); ++r) {
                if (wk(r, p) != wk(r, q)) return wk(r, p) < wk(r, q);
            }
            return bk[p] < bk[q];
        });
        const MatrixXd wk0 = wk;
        const VectorXd bk0 = bk;
        const MatrixXd wn0 = wnext;
        for (int j = 0; j < n; ++j) {
            wk.col(j) = wk0.col(order[static_cast<size_t>(j)]);
            bk[j] = bk0[order[static_cast<size_t>(j)]];
            wnext.row(j) = wn0.row(order[static_cast<size_t>(j)]);
        }
    }
    return CanonicalizeResult{Network(net.widths(), std::move(w), std::move(b)),
                              std::move(flagged)};
}

std::vector<int> solve_assignment(const MatrixXd& cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    if (rows == 0 || cols == 0) return std::vector<int>(static_cast<size_t>(rows), -1);
    const int n = std::max(rows, cols);
    const double pad = cost.size() ? 10.0 + cost.maxCoeff() : 1.0;
    // Square padded matrix; dummy entries absorb the width mismatch.
    auto at = [&](int r, int c) -> double {
        return (r < rows && c < cols) ? cost(r, c) : pad;
    };
    // Standard O(n^3) Hungarian with potentials (1-indexed).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<size_t>(n) + 1, false);
        do {
            used[static_cast<size_t>(j0)] = true;
            const int i0 = p[static_cast<size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = at(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                                   v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(static_cast<size_t>(rows), -1);
    for (int j = 1; j <= n; ++j) {
        const int r = p[static_cast<size_t>(j)] - 1;
        if (r >= 0 && r < rows && j - 1 < cols) row_to_col[static_cast<size_t>(r)] = j - 1;
    }
    return row_to_col;
}

LayerAlignment align_layer_params(int layer, const MatrixXd& est_w, const VectorXd& est_b,
                                  const MatrixXd& true_w, const VectorXd& true_b) {
    if (est_w.rows() != true_w.rows())
        throw ShapeError("align_layer_params: incompatible fan-in");
    const int ne = static_cast<int>(est_w.cols());
    const int nt = static_cast<int>(true_w.cols());

    // Unit-normalize (weights, bias) jointly by the weight norm.
    auto normalized = [](const MatrixXd& w, const VectorXd& b) {
        MatrixXd wn = w;
        VectorXd bn = b;
        for (int i = 0; i < w.cols(); ++i) {
            const double s = w.col(i).norm();
            if (s > 1e-300) {
                wn.col(i) /= s;
                bn[i] /= s;
            }
        }
        return std::make_pair(wn, bn);
    };
    auto [ew, eb] = normalized(est_w, est_b);
    auto [tw, tb] = normalized(true_w, true_b);

    MatrixXd cost(ne, nt);
    MatrixXd best_sign(ne, nt);
    for (int i = 0; i < ne; ++i) {
        for (int j = 0; j < nt; ++j) {
            const double dplus =
                std::sqrt((ew.col(i) - tw.col(j)).squaredNorm() + (eb[i] - tb[j]) * (eb[i] - tb[j]));
            const double dminus =
                std::sqrt((ew.col(i) + tw.col(j)).squaredNorm() + (eb[i] + tb[j]) * (eb[i] + tb[j]));
            cost(i, j) = std::min(dplus, dminus);
            best_sign(i, j) = dplus <= dminus ? 1.0 : -1.0;
        }
    }

    LayerAlignment out;
    out.layer = layer;
    out.match = solve_assignment(cost);
    out.sign.assign(static_cast<size_t>(ne), 1);
    double w_num = 0.0, w_den = 0.0, b_num = 0.0, b_den = 0.0;
    for (int i = 0; i < ne; ++i) {
        const int j = out.match[static_cast<size_t>(i)];
        if (j < 0) continue;
        ++out.matched;
        const int s = static_cast<int>(best_sign(i, j));
        out.sign[static_cast<size_t>(i)] = s;
        w_num += (ew.col(i) - s * tw.col(j)).squaredNorm();
        w_den += ew.col(i).squaredNorm();
        b_num += (eb[i] - s * tb[j]) * (eb[i] - s * tb[j]);
        b_den += eb[i] * eb[i];
    }
    out.unmatched_estimate = ne - out.matched;
    out.unmatched_truth = nt - out.matched;
    out.log_weight_error = safe_log_ratio(std::sqrt(w_num), std::sqrt(w_den));
    out.log_bias_error = safe_log_ratio(std::sqrt(b_num), std::sqrt(b_den));
    return out;
}

AlignmentReport align(const std::vector<LayerEstimate>& estimate, const Network& truth) {
    AlignmentReport report;
    for (const auto& est : estimate) {
        if (est.layer > truth.depth())
            throw ShapeError("align: estimate has more hidden layers than the truth");
        report.layers.push_back(align_layer_params(est.layer, est.weights, est.biases,
                                                   truth.weight(est.layer), truth.bias(est.layer)));
    }
    return report;
}

AlignmentReport align_networks(const Network& estimate, const Network& truth) {
    if (estimate.depth() != truth.depth())
        throw ShapeError("align_networks: depth mismatch");
    AlignmentReport report;
    for (int k = 1; k <= truth.depth(); ++k)
        report.layers.push_back(align_layer_params(k, estimate.weight(k), estimate.bias(k),
                                                   truth.weight(k), truth.bias(k)));
    if (estimate.input_dim() == truth.input_dim() && estimate.output_dim() == truth.output_dim()) {
        const FunctionalDistance fd =
            functional_distance(estimate, truth, BallSampler{12345, 10.0}, 1000);
        report.has_functional = true;
        report.functional_max = fd.max_abs;
        report.functional_mean = fd.mean_abs;
    }
    return report;
}

FunctionalDistance functional_distance(const Network& a, const Network& b,
                                       const BallSampler& sampler, int n_samples) {
    if (a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim())
        throw ShapeError("functional_distance: interface mismatch");
    Rng rng(sampler.seed);
    MatrixXd pts(a.input_dim(), n_samples);
    for (int c = 0; c < n_samples; ++c) pts.col(c) = random_in_ball(rng, a.input_dim(), sampler.radius);
    const Deviation d = batch_deviation(a, b, pts);
    return FunctionalDistance{d.max_abs, d.mean_abs};
}

std::string AlignmentReport::to_json_lines() const {
    std::ostringstream os;
    for (const auto& l : layers) {
        os << "{\"layer\":" << l.layer << ",\"matched\":" << l.matched
           << ",\"unmatched_estimate\":" << l.unmatched_estimate
           << ",\"unmatched_truth\":" << l.unmatched_truth
           << ",\"log_weight_error\":" << fmt_double17(l.log_weight_error)
           << ",\"log_bias_error\":" << fmt_double17(l.log_bias_error)
           << ",\"log_base\":\"" << log_base << "\"}\n";
    }
    if (has_functional) {
        os << "{\"functional_max\":" << fmt_double17(functional_max)
           << ",\"functional_mean\":" << fmt_double17(functional_mean) << "}\n";
    }
    return os.str();
}

std::string AlignmentReport::to_table() const {
    std::ostringstream os;
    os << "layer  matched  unmatched(est/true)  log_w_err  log_b_err   (natural log)\n";
    char buf[160];
    for (const auto& l : layers) {
        std::snprintf(buf, sizeof(buf), "%5d  %7d  %9d/%-9d  %9.3f  %9.3f\n", l.layer, l.matched,
                      l.unmatched_estimate, l.unmatched_truth, l.log_weight_error,
                      l.log_bias_error);
        os << buf;
    }
    if (has_functional) {
        std::snprintf(buf, sizeof(buf), "functional deviation: max %.3e  mean %.3e\n",
                      functional_max, functional_mean);
        os << buf;
    }
    return os.str();
}

}  // namespace relex
