#include "relex/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace relex {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Runs body(i) for i in [0, n) in parallel; if any iteration runs out of
// budget the remaining ones are skipped and BudgetExhausted is rethrown after
// the loop. Results must be written to per-index slots by the body.
template <typename F>
void budgeted_parallel_for(Oracle& oracle, int n, F&& body) {
    bool exhausted = false;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        bool skip;
#pragma omp atomic read
        skip = exhausted;
        if (skip) continue;
        try {
            body(i);
        } catch (const BudgetExhausted&) {
#pragma omp atomic write
            exhausted = true;
        } catch (const PartialScanError&) {
#pragma omp atomic write
            exhausted = true;
        }
    }
    if (exhausted) throw BudgetExhausted(oracle.query_count());
}

}  // namespace

void Hyperplane::canonicalize() {
    const double n = normal.norm();
    if (n < 1e-300) throw DegenerateFitError("cannot canonicalize a zero normal");
    normal /= n;
    offset /= n;
    for (int i = 0; i < normal.size(); ++i) {
        if (std::abs(normal[i]) > 1e-9) {
            if (normal[i] < 0) {
                normal = -normal;
                offset = -offset;
            }
            return;
        }
    }
}

FitResult fit_hyperplane(const std::vector<VectorXd>& points) {
    if (points.empty()) throw DegenerateFitError("fit_hyperplane: no points");
    const int dim = static_cast<int>(points.front().size());
    const int m = static_cast<int>(points.size());
    FitResult res;
    if (dim == 1) {
        double mean = 0.0;
        for (const auto& p : points) mean += p[0];
        mean /= m;
        res.plane.normal = VectorXd::Ones(1);
        res.plane.offset = -mean;
        double ss = 0.0;
        for (const auto& p : points) {
            const double d = p[0] - mean;
            ss += d * d;
            res.max_abs_distance = std::max(res.max_abs_distance, std::abs(d));
        }
        res.residual = std::sqrt(ss / m);
        return res;
    }
    if (m < dim) throw DegenerateFitError("fit_hyperplane: need at least dim points");
    VectorXd centroid = VectorXd::Zero(dim);
    for (const auto& p : points) centroid += p;
    centroid /= m;
    MatrixXd centered(m, dim);
    for (int i = 0; i < m; ++i) centered.row(i) = (points[static_cast<size_t>(i)] - centroid).transpose();
    Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
    res.plane.normal = svd.matrixV().col(dim - 1);
    res.plane.offset = -res.plane.normal.dot(centroid);
    res.residual = svd.singularValues()[dim - 1] / std::sqrt(static_cast<double>(m));
    for (const auto& p : points)
        res.max_abs_distance = std::max(res.max_abs_distance, std::abs(res.plane.signed_distance(p)));
    res.plane.canonicalize();
    return res;
}

double ProbeConfig::tol_point_abs(const Segment& seg) const {
    const double coord = std::max(seg.a.cwiseAbs().maxCoeff(), seg.b.cwiseAbs().maxCoeff());
    return std::max(tol_point_rel * seg.length(), tol_point_floor * (1.0 + coord));
}

// ---------------------------------------------------------------------------
// points_on_line

namespace {

class LineScan {
public:
    LineScan(Oracle& oracle, const Segment& seg, const ProbeConfig& cfg)
        : oracle_(oracle), seg_(seg), cfg_(cfg), len_(seg.length()) {
        if (len_ <= 0.0) throw DomainError("points_on_line: degenerate segment");
        tol_t_ = cfg.tol_point_abs(seg) / len_;
    }

    std::vector<double> run() {
        eval(0.0);
        eval(0.5);
        eval(1.0);
        scan_passes();
        std::vector<std::pair<double, double>> brackets = collect_brackets();
        std::vector<double> kinks;
        for (const auto& [l, r] : brackets) locate(l, r, 0, kinks);
        std::sort(kinks.begin(), kinks.end());
        validate_gaps(kinks);
        dedupe(kinks);
        return kinks;
    }

    const VectorXd& eval(double t) {
        auto it = cache_.find(t);
        if (it != cache_.end()) return it->second;
        VectorXd y = oracle_.query(seg_.at(t));
        ymax_ = std::max(ymax_, y.cwiseAbs().maxCoeff());
        return cache_.emplace(t, std::move(y)).first->second;
    }

    std::vector<double> emitted_so_far;  // filled as kinks are located

private:
    // Normalized secant over [t1, t2].
    VectorXd secant(double t1, double t2) {
        return (eval(t2) - eval(t1)) / ((t2 - t1) * len_);
    }

    // True when the function looks affine across the triple; the threshold
    // widens with the rounding noise expected at the triple's spacing.
    bool flat(double t1, double t2, double t3) {
        const VectorXd d12 = secant(t1, t2);
        const VectorXd d23 = secant(t2, t3);
        const double scale = std::max(d12.cwiseAbs().maxCoeff(), d23.cwiseAbs().maxCoeff());
        const double hmin = std::min(t2 - t1, t3 - t2) * len_;
        const double noise = 64.0 * kEps * ymax_ / std::max(hmin, 1e-300);
        return (d12 - d23).cwiseAbs().maxCoeff() <= cfg_.tol_flat * (1.0 + scale) + noise;
    }

    void scan_passes() {
        std::vector<double> ts = {0.0, 0.5, 1.0};
        for (int pass = 0; pass < cfg_.max_scan_passes; ++pass) {
            std::vector<uint8_t> remove(ts.size(), 0);
            std::vector<double> inserts;
            for (size_t i = 1; i + 1 < ts.size(); ++i) {
                const double t1 = ts[i - 1], t2 = ts[i], t3 = ts[i + 1];
                if (flat(t1, t2, t3)) {
                    remove[i] = 1;
                } else if (t3 - t1 > cfg_.insert_handoff) {
                    inserts.push_back((t1 + 2.0 * t2) / 3.0);
                    inserts.push_back((t3 + 2.0 * t2) / 3.0);
                }
            }
            if (inserts.empty() && std::none_of(remove.begin(), remove.end(),
                                                [](uint8_t r) { return r != 0; }))
                break;
            std::vector<double> next;
            next.reserve(ts.size() + inserts.size());
            for (size_t i = 0; i < ts.size(); ++i)
                if (!remove[i] || i == 0 || i + 1 == ts.size()) next.push_back(ts[i]);
            for (double t : inserts) next.push_back(t);
            std::sort(next.begin(), next.end());
            next.erase(std::unique(next.begin(), next.end(),
                                   [&](double a, double b) { return b - a < tol_t_ / 4; }),
                       next.end());
            for (double t : next) eval(t);
            ts = std::move(next);
        }
        final_ts_ = std::move(ts);
    }

    std::vector<std::pair<double, double>> collect_brackets() {
        std::vector<std::pair<double, double>> raw;
        const auto& ts = final_ts_;
        for (size_t i = 1; i + 1 < ts.size(); ++i)
            if (!flat(ts[i - 1], ts[i], ts[i + 1])) raw.emplace_back(ts[i - 1], ts[i + 1]);
        if (ts.size() == 3 && !flat(ts[0], ts[1], ts[2])) raw.emplace_back(ts[0], ts[2]);
        std::sort(raw.begin(), raw.end());
        std::vector<std::pair<double, double>> merged;
        for (const auto& br : raw) {
            if (!merged.empty() && br.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, br.second);
            else
                merged.push_back(br);
        }
        return merged;
    }

    // Bisection on the affineness test. When both halves fail the interval
    // may hold two crossings, so both sides are pursued.
    void locate(double l, double r, int depth, std::vector<double>& out) {
        if (r - l <= tol_t_ || depth > 128) {
            out.push_back((l + r) / 2.0);
            emitted_so_far.push_back((l + r) / 2.0);
            return;
        }
        const double m = (l + r) / 2.0;
        const bool fail_left = !flat(l, (l + m) / 2.0, m);
        const bool fail_right = !flat(m, (m + r) / 2.0, r);
        if (fail_left) locate(l, m, depth + 1, out);
        if (fail_right) locate(m, r, depth + 1, out);
        if (!fail_left && !fail_right) {
            // Both halves affine: the discontinuity sits at the shared midpoint.
            out.push_back(m);
            emitted_so_far.push_back(m);
        }
    }

    // Contract check: every gap between consecutive kinks must be affine;
    // any gap that is not gets re-searched (bounded rounds).
    void validate_gaps(std::vector<double>& kinks) {
        for (int round = 0; round < 3; ++round) {
            std::vector<double> edges = {0.0};
            for (double k : kinks) edges.push_back(k);
            edges.push_back(1.0);
            std::vector<double> extra;
            for (size_t i = 0; i + 1 < edges.size(); ++i) {
                const double pad = std::max(4.0 * tol_t_, 1e-12);
                const double a = edges[i] + (i == 0 ? 0.0 : pad);
                const double b = edges[i + 1] - (i + 2 == edges.size() ? 0.0 : pad);
                if (b - a < 8.0 * tol_t_) continue;
                if (!flat(a, (a + b) / 2.0, b)) locate(a, b, 0, extra);
            }
            if (extra.empty()) return;
            kinks.insert(kinks.end(), extra.begin(), extra.end());
            std::sort(kinks.begin(), kinks.end());
            dedupe(kinks);
        }
    }

    void dedupe(std::vector<double>& kinks) const {
        kinks.erase(std::unique(kinks.begin(), kinks.end(),
                                [&](double a, double b) { return std::abs(b - a) < 3.0 * tol_t_; }),
                    kinks.end());
    }

    Oracle& oracle_;
    const Segment& seg_;
    const ProbeConfig& cfg_;
    double len_;
    double tol_t_ = 0.0;
    double ymax_ = 0.0;
    std::map<double, VectorXd> cache_;
    std::vector<double> final_ts_;
};

}  // namespace

std::vector<BoundaryPoint> points_on_line(Oracle& oracle, const Segment& seg,
                                          const ProbeConfig& cfg) {
    LineScan scan(oracle, seg, cfg);
    std::vector<double> kinks;
    try {
        kinks = scan.run();
    } catch (const BudgetExhausted& e) {
        std::vector<double> partial = scan.emitted_so_far;
        std::sort(partial.begin(), partial.end());
        std::vector<BoundaryPoint> found;
        for (double t : partial) found.push_back(BoundaryPoint{seg.at(t), std::nullopt, seg});
        throw PartialScanError(std::move(found), e.queries_used);
    }
    std::vector<BoundaryPoint> out;
    out.reserve(kinks.size());
    for (double t : kinks) out.push_back(BoundaryPoint{seg.at(t), std::nullopt, seg});
    return out;
}

Segment sample_segment(Rng& rng, int dim, double radius, double length) {
    if (radius <= 0 || length <= 0) throw ConfigError("sample_segment: radius and length must be positive");
    const VectorXd mid = radius * random_unit(rng, dim);
    VectorXd dir(dim);
    if (dim == 1) {
        dir[0] = (rng() & 1u) ? 1.0 : -1.0;  // no tangent space in 1-D
    } else {
        const VectorXd mhat = mid / mid.norm();
        do {
            dir = random_unit(rng, dim);
            dir -= dir.dot(mhat) * mhat;
        } while (dir.norm() < 1e-9);
        dir.normalize();
    }
    return Segment{mid - 0.5 * length * dir, mid + 0.5 * length * dir};
}

// ---------------------------------------------------------------------------
// infer_hyperplane

namespace {

struct CrossProbe {
    VectorXd center;
    bool found = false;
    VectorXd crossing;
};

// Re-locates the boundary crossing near `center` along `dir`, widening the
// probe a few times when the crossing falls outside the initial bracket.
bool locate_crossing(Oracle& oracle, const VectorXd& center, const VectorXd& dir, double half_len,
                     const ProbeConfig& cfg, VectorXd& out) {
    double h = half_len;
    for (int attempt = 0; attempt < 3; ++attempt, h *= 4.0) {
        Segment seg{center - h * dir, center + h * dir};
        const auto pts = points_on_line(oracle, seg, cfg);
        if (pts.empty()) continue;
        // nearest crossing to the probe center
        const BoundaryPoint* best = &pts.front();
        double best_d = (best->point - center).norm();
        for (const auto& p : pts) {
            const double d = (p.point - center).norm();
            if (d < best_d) {
                best_d = d;
                best = &p;
            }
        }
        out = best->point;
        return true;
    }
    return false;
}

}  // namespace

Hyperplane infer_hyperplane(Oracle& oracle, const BoundaryPoint& p, const ProbeConfig& cfg,
                            Rng& rng, const InferOptions& opts) {
    const int dim = oracle.input_dim();
    const VectorXd dir = opts.transversal ? opts.transversal->normalized()
                                          : p.source_segment.direction();
    double radius = opts.radius > 0 ? opts.radius : cfg.fit_radius();
    const int n_probes = std::max(cfg.fit_oversample * dim, dim + 2);

    std::string last_error;
    for (int attempt = 0; attempt < 2; ++attempt, radius /= 10.0) {
        // Sample probe centers up front so results do not depend on scheduling.
        std::vector<VectorXd> centers(static_cast<size_t>(n_probes));
        for (int i = 0; i < n_probes; ++i) {
            VectorXd u = random_unit(rng, dim);
            if (opts.keep_side) {
                for (int tries = 0; tries < 50; ++tries) {
                    if (opts.keep_side->signed_distance(p.point + radius * u) > 0) break;
                    u = random_unit(rng, dim);
                }
            }
            centers[static_cast<size_t>(i)] = p.point + radius * u;
        }

        std::vector<CrossProbe> probes(static_cast<size_t>(n_probes));
        budgeted_parallel_for(oracle, n_probes, [&](int i) {
            CrossProbe pr;
            pr.center = centers[static_cast<size_t>(i)];
            pr.found = locate_crossing(oracle, pr.center, dir, 4.0 * radius, cfg, pr.crossing);
            probes[static_cast<size_t>(i)] = std::move(pr);
        });

        std::vector<VectorXd> pts;
        for (const auto& pr : probes)
            if (pr.found) pts.push_back(pr.crossing);
        if (static_cast<int>(pts.size()) < std::max(dim + 1, n_probes / 2)) {
            last_error = "too few boundary crossings near the point";
            continue;
        }

        FitResult fit = fit_hyperplane(pts);
        if (fit.residual > cfg.tol_fit) {
            // One robust pass: drop the worst fifth and refit.
            std::vector<double> d;
            d.reserve(pts.size());
            for (const auto& q : pts) d.push_back(std::abs(fit.plane.signed_distance(q)));
            std::vector<double> sorted = d;
            std::sort(sorted.begin(), sorted.end());
            const double cut = sorted[sorted.size() * 4 / 5];
            std::vector<VectorXd> kept;
            for (size_t i = 0; i < pts.size(); ++i)
                if (d[i] <= cut) kept.push_back(pts[i]);
            if (static_cast<int>(kept.size()) >= dim + 1) fit = fit_hyperplane(kept);
        }
        if (fit.residual <= cfg.tol_fit && fit.max_abs_distance <= cfg.tol_on_plane) {
            Hyperplane h = fit.plane;
            h.canonicalize();
            return h;
        }
        last_error = "fit residual " + fmt_double17(fit.residual) + " above tolerance";
    }
    throw DegenerateFitError("infer_hyperplane: " + last_error +
                             " (point likely near a boundary intersection)");
}

// ---------------------------------------------------------------------------
// test_hyperplane

HyperplaneTestResult test_hyperplane(Oracle& oracle, const BoundaryPoint& p, const Hyperplane& h,
                                     const ProbeConfig& cfg, Rng& rng, int n_points_override) {
    const int dim = oracle.input_dim();
    HyperplaneTestResult result;
    if (dim == 1) {
        // A 0-dimensional hyperplane has no far points to probe; 1-D targets
        // cannot be classified by bending.
        result.contained = true;
        return result;
    }
    const int n_test = n_points_override > 0 ? n_points_override : cfg.test_points;
    const double dist = cfg.test_radius_factor * std::max(1.0, p.point.norm());
    const double band = cfg.test_band_base + cfg.test_band_slope * dist;
    const double half_len = std::max(0.05, 4.0 * band);

    std::vector<VectorXd> tangents(static_cast<size_t>(n_test));
    for (int i = 0; i < n_test; ++i) {
        VectorXd t;
        do {
            t = random_unit(rng, dim);
            t -= t.dot(h.normal) * h.normal;
        } while (t.norm() < 1e-9);
        tangents[static_cast<size_t>(i)] = t.normalized();
    }

    std::vector<uint8_t> ok(static_cast<size_t>(n_test), 0);
    std::vector<VectorXd> found(static_cast<size_t>(n_test));
    budgeted_parallel_for(oracle, n_test, [&](int i) {
        VectorXd x = p.point + dist * tangents[static_cast<size_t>(i)];
        x -= h.signed_distance(x) * h.normal;  // project exactly onto H
        Segment seg{x - half_len * h.normal, x + half_len * h.normal};
        const auto pts = points_on_line(oracle, seg, cfg);
        for (const auto& q : pts) {
            if (std::abs(h.signed_distance(q.point)) <= band) {
                ok[static_cast<size_t>(i)] = 1;
                found[static_cast<size_t>(i)] = q.point;
                break;
            }
        }
    });

    result.contained = true;
    for (int i = 0; i < n_test; ++i) {
        if (ok[static_cast<size_t>(i)]) {
            result.crossings.push_back(found[static_cast<size_t>(i)]);
        } else {
            result.contained = false;
        }
    }
    return result;
}

}  // namespace relex
