#include "relex/layer1.hpp"

#include <algorithm>
#include <cmath>

namespace relex {

bool same_hyperplane(const Hyperplane& a, const Hyperplane& b) {
    const double d = a.normal.dot(b.normal);
    if (std::abs(d) <= 1.0 - 1e-6) return false;
    const double s = d >= 0 ? 1.0 : -1.0;
    return std::abs(a.offset - s * b.offset) < 1e-5 * (1.0 + std::abs(a.offset));
}

namespace {

// Accepted neuron bookkeeping during the scan.
struct Accepted {
    Hyperplane plane;
    std::vector<BoundaryPoint> provenance;
};

// Refit an accepted hyperplane from the far probe points collected by the
// whole-hyperplane test; the wider lever arm conditions the regression much
// better than the local fit.
Hyperplane refit_from_test(const Hyperplane& local, const BoundaryPoint& p,
                           const std::vector<VectorXd>& crossings, const ProbeConfig& cfg) {
    if (crossings.size() < static_cast<size_t>(p.point.size())) return local;
    std::vector<VectorXd> pts = crossings;
    pts.push_back(p.point);
    FitResult fit = fit_hyperplane(pts);
    if (fit.residual > cfg.tol_fit) return local;
    fit.plane.canonicalize();
    return fit.plane;
}

}  // namespace

Layer1Result recover_layer1(Oracle& oracle, const Layer1Config& cfg) {
    const int dim = oracle.input_dim();
    const uint64_t start_queries = oracle.query_count();
    Rng rng(cfg.seed);

    Layer1Result result;
    std::vector<Accepted> accepted;
    auto target_reached = [&] {
        return cfg.target_count && static_cast<int>(accepted.size()) >= *cfg.target_count;
    };

    int quiet_segments = 0;
    bool out_of_budget = false;
    for (int seg_idx = 0; seg_idx < cfg.max_segments && !out_of_budget; ++seg_idx) {
        if (target_reached()) break;
        if (!cfg.target_count && quiet_segments >= cfg.patience) break;

        const Segment seg =
            sample_segment(rng, dim, cfg.probe.segment_radius, cfg.probe.segment_length);
        ++result.segments_probed;

        std::vector<BoundaryPoint> points;
        try {
            points = points_on_line(oracle, seg, cfg.probe);
        } catch (const PartialScanError& e) {
            points = e.found;
            out_of_budget = true;
        } catch (const BudgetExhausted&) {
            out_of_budget = true;
        }

        bool found_new = false;
        for (auto& p : points) {
            if (target_reached()) break;

            // Points on an already-accepted hyperplane are repeat hits of
            // that neuron; record them and move on.
            bool duplicate_hit = false;
            for (auto& acc : accepted) {
                if (std::abs(acc.plane.signed_distance(p.point)) <
                    cfg.probe.tol_on_plane * (1.0 + p.point.norm())) {
                    acc.provenance.push_back(p);
                    duplicate_hit = true;
                    break;
                }
            }
            if (duplicate_hit) continue;

            Hyperplane local;
            try {
                local = infer_hyperplane(oracle, p, cfg.probe, rng);
            } catch (const DegenerateFitError&) {
                continue;  // likely near a boundary intersection; drop the point
            } catch (const BudgetExhausted&) {
                out_of_budget = true;
                break;
            }

            bool dup = false;
            for (auto& acc : accepted) {
                if (same_hyperplane(local, acc.plane)) {
                    acc.provenance.push_back(p);
                    dup = true;
                    break;
                }
            }
            if (dup) continue;

            HyperplaneTestResult test;
            try {
                test = test_hyperplane(oracle, p, local, cfg.probe, rng);
            } catch (const BudgetExhausted&) {
                out_of_budget = true;
                break;
            }

            if (test.contained) {
                Hyperplane plane = refit_from_test(local, p, test.crossings, cfg.probe);
                bool merged = false;
                for (auto& acc : accepted) {
                    if (same_hyperplane(plane, acc.plane)) {
                        acc.provenance.push_back(p);
                        merged = true;
                        break;
                    }
                }
                if (!merged) {
                    p.local_hyperplane = plane;
                    accepted.push_back(Accepted{plane, {p}});
                    found_new = true;
                }
            } else {
                p.local_hyperplane = local;
                result.unused.points.push_back(p);
            }
        }
        quiet_segments = found_new ? 0 : quiet_segments + 1;
    }

    const int n = static_cast<int>(accepted.size());
    LayerEstimate est;
    est.layer = 1;
    est.weights = MatrixXd::Zero(dim, n);
    est.biases = VectorXd::Zero(n);
    est.sign_resolved.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        est.weights.col(i) = accepted[static_cast<size_t>(i)].plane.normal;
        est.biases[i] = accepted[static_cast<size_t>(i)].plane.offset;
        est.provenance.push_back(std::move(accepted[static_cast<size_t>(i)].provenance));
    }
    result.estimate = std::move(est);
    result.queries_used = oracle.query_count() - start_queries;
    if (out_of_budget) {
        result.status = RecoveryStatus::BudgetExhausted;
        result.warnings.push_back("query budget exhausted; returning neurons found so far");
    } else if (cfg.target_count && n < *cfg.target_count) {
        result.status = RecoveryStatus::Partial;
        result.warnings.push_back("under-recovery: found " + std::to_string(n) + " of " +
                                  std::to_string(*cfg.target_count) +
                                  " requested neurons after " +
                                  std::to_string(result.segments_probed) + " segments");
    }
    return result;
}

}  // namespace relex
