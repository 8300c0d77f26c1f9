#include "relex/train.hpp"

#include <cmath>
#include <vector>

namespace relex {

namespace {

struct ParamLayout {
    std::vector<int> w_offset;
    std::vector<int> b_offset;
    int total = 0;
};

ParamLayout make_layout(const Network& net) {
    ParamLayout lay;
    int at = 0;
    for (int k = 1; k <= net.depth() + 1; ++k) {
        lay.w_offset.push_back(at);
        at += net.width(k - 1) * net.width(k);
        lay.b_offset.push_back(at);
        at += net.width(k);
    }
    lay.total = at;
    return lay;
}

}  // namespace

TrainResult train_memorization(const Network& init, const TrainConfig& cfg) {
    if (cfg.n_points < 1) throw ConfigError("train_memorization: n_points must be >= 1");
    if (cfg.epochs < 0) throw ConfigError("train_memorization: epochs must be >= 0");
    const int n_in = init.input_dim();
    const int n_out = init.output_dim();
    const int n = cfg.n_points;
    const int layers = init.depth() + 1;

    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd X(n_in, n);
    for (int c = 0; c < n; ++c)
        for (int i = 0; i < n_in; ++i) X(i, c) = normal(rng);
    std::vector<int> labels(static_cast<size_t>(n));
    std::uniform_int_distribution<int> label_dist(0, n_out - 1);
    for (int c = 0; c < n; ++c) labels[static_cast<size_t>(c)] = label_dist(rng);

    std::vector<MatrixXd> w;
    std::vector<VectorXd> b;
    for (int k = 1; k <= layers; ++k) {
        w.push_back(init.weight(k));
        b.push_back(init.bias(k));
    }

    const ParamLayout lay = make_layout(init);
    VectorXd m = VectorXd::Zero(lay.total);
    VectorXd v = VectorXd::Zero(lay.total);
    MatrixXd per_example_grad(lay.total, n);
    VectorXd per_example_loss(n);

    auto forward_backward = [&](int c, VectorXd& grad_col, double& loss) {
        std::vector<VectorXd> act(static_cast<size_t>(layers) + 1);
        std::vector<VectorXd> pre(static_cast<size_t>(layers) + 1);
        act[0] = X.col(c);
        for (int k = 1; k <= layers; ++k) {
            pre[static_cast<size_t>(k)] =
                w[static_cast<size_t>(k - 1)].transpose() * act[static_cast<size_t>(k - 1)] +
                b[static_cast<size_t>(k - 1)];
            act[static_cast<size_t>(k)] = (k < layers)
                                              ? pre[static_cast<size_t>(k)].cwiseMax(0.0).eval()
                                              : pre[static_cast<size_t>(k)];
        }
        const VectorXd& logits = pre[static_cast<size_t>(layers)];
        const double mx = logits.maxCoeff();
        VectorXd p(logits.size());
        for (int i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - mx);
        p /= p.sum();
        const int y = labels[static_cast<size_t>(c)];
        loss = -std::log(p[y]);  // +inf on underflow marks divergence
        VectorXd delta = p;
        delta[y] -= 1.0;
        for (int k = layers; k >= 1; --k) {
            const int rows = static_cast<int>(w[static_cast<size_t>(k - 1)].rows());
            const int cols = static_cast<int>(w[static_cast<size_t>(k - 1)].cols());
            Eigen::Map<MatrixXd> gw(grad_col.data() + lay.w_offset[static_cast<size_t>(k - 1)],
                                    rows, cols);
            Eigen::Map<VectorXd> gb(grad_col.data() + lay.b_offset[static_cast<size_t>(k - 1)],
                                    cols);
            gw = act[static_cast<size_t>(k - 1)] * delta.transpose();
            gb = delta;
            if (k > 1) {
                VectorXd prev = w[static_cast<size_t>(k - 1)] * delta;
                for (int i = 0; i < prev.size(); ++i)
                    if (pre[static_cast<size_t>(k - 1)][i] <= 0) prev[i] = 0.0;
                delta = std::move(prev);
            }
        }
    };

    double last_loss = 0.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < n; ++c) {
            VectorXd col(lay.total);
            double loss = 0.0;
            forward_backward(c, col, loss);
            per_example_grad.col(c) = col;
            per_example_loss[c] = loss;
        }
        // Fixed-order reduction keeps results independent of thread count.
        VectorXd grad = VectorXd::Zero(lay.total);
        double loss_sum = 0.0;
        for (int c = 0; c < n; ++c) {
            grad += per_example_grad.col(c);
            loss_sum += per_example_loss[c];
        }
        grad /= n;
        last_loss = loss_sum / n;
        if (!std::isfinite(last_loss))
            throw TrainingError("training diverged: loss is not finite at epoch " +
                                std::to_string(epoch) + " (lr=" + fmt_double17(cfg.learning_rate) +
                                ")");

        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(cfg.beta1, epoch);
        const double bc2 = 1.0 - std::pow(cfg.beta2, epoch);
        for (int k = 1; k <= layers; ++k) {
            const int rows = static_cast<int>(w[static_cast<size_t>(k - 1)].rows());
            const int cols = static_cast<int>(w[static_cast<size_t>(k - 1)].cols());
            auto step = [&](double* param, int offset, int count) {
                for (int i = 0; i < count; ++i) {
                    const double mh = m[offset + i] / bc1;
                    const double vh = v[offset + i] / bc2;
                    param[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
                }
            };
            step(w[static_cast<size_t>(k - 1)].data(), lay.w_offset[static_cast<size_t>(k - 1)],
                 rows * cols);
            step(b[static_cast<size_t>(k - 1)].data(), lay.b_offset[static_cast<size_t>(k - 1)],
                 cols);
        }
    }

    Network trained(init.widths(), w, b);
    int correct = 0;
    for (int c = 0; c < n; ++c) {
        VectorXd out = trained.forward(X.col(c));
        int arg = 0;
        out.maxCoeff(&arg);
        if (arg == labels[static_cast<size_t>(c)]) ++correct;
    }
    TrainResult res{std::move(trained), static_cast<double>(correct) / n, last_loss};
    return res;
}

}  // namespace relex
