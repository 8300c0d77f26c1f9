#include "relex/deeper.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace relex {

// ---------------------------------------------------------------------------
// KnownPrefix

int KnownPrefix::neuron_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.count();
    return n;
}

int KnownPrefix::flat_index(NeuronId id) const {
    int at = 0;
    for (const auto& l : layers) {
        if (l.layer == id.layer) return at + id.index;
        at += l.count();
    }
    throw AddressError("flat_index: neuron not in prefix");
}

NeuronId KnownPrefix::neuron_at(int flat) const {
    for (const auto& l : layers) {
        if (flat < l.count()) return NeuronId{l.layer, flat};
        flat -= l.count();
    }
    throw AddressError("neuron_at: flat index out of range");
}

KnownPrefix::Forms KnownPrefix::affine_forms(const VectorXd& x) const {
    Forms f;
    f.grad = MatrixXd::Zero(input_dim, neuron_count());
    f.value = VectorXd::Zero(neuron_count());
    MatrixXd act_grad = MatrixXd::Identity(input_dim, input_dim);
    VectorXd act = x;
    int at = 0;
    for (size_t li = 0; li < layers.size(); ++li) {
        const LayerEstimate& l = layers[li];
        const int n = l.count();
        MatrixXd g = act_grad * l.weights;
        VectorXd z = l.weights.transpose() * act + l.biases;
        f.grad.middleCols(at, n) = g;
        f.value.segment(at, n) = z;
        at += n;
        if (li + 1 < layers.size()) {
            for (int j = 0; j < n; ++j)
                if (z[j] <= 0) g.col(j).setZero();
            act_grad = std::move(g);
            act = z.cwiseMax(0.0);
        }
    }
    return f;
}

std::vector<int8_t> KnownPrefix::signature(const VectorXd& x) const {
    const Forms f = affine_forms(x);
    std::vector<int8_t> sig(static_cast<size_t>(f.value.size()));
    for (int i = 0; i < f.value.size(); ++i) sig[static_cast<size_t>(i)] = f.value[i] > 0 ? 1 : -1;
    return sig;
}

// ---------------------------------------------------------------------------
// closest_boundary

std::optional<ClosestHit> closest_boundary(const KnownPrefix& prefix, const VectorXd& p,
                                           const VectorXd& v) {
    if (v.norm() < 1e-300) throw DomainError("closest_boundary: zero direction");
    const KnownPrefix::Forms f = prefix.affine_forms(p);
    double best = std::numeric_limits<double>::infinity();
    double second = best;
    int best_f = -1;
    for (int idx = 0; idx < f.value.size(); ++idx) {
        const auto w = f.grad.col(idx);
        const double wn = w.norm();
        if (wn < 1e-12) continue;  // neuron constant in this region: no boundary here
        const double denom = w.dot(v);
        if (std::abs(denom) < 1e-14 * wn * v.norm()) continue;
        const double c = -f.value[idx] / denom;
        if (c <= 1e-10) continue;
        if (c < best) {
            second = best;
            best = c;
            best_f = idx;
        } else if (c < second) {
            second = c;
        }
    }
    if (best_f < 0) return std::nullopt;
    ClosestHit hit;
    hit.c = best;
    hit.id = prefix.neuron_at(best_f);
    hit.grad = f.grad.col(best_f);
    hit.value_at_p = f.value[best_f];
    hit.runner_up_gap = std::isfinite(second) ? second - best : std::numeric_limits<double>::infinity();
    return hit;
}

// ---------------------------------------------------------------------------
// Bending algebra

CrossingSolution solve_crossing(const VectorXd& g_from, const VectorXd& v_to,
                                const VectorXd& v_crossed) {
    const double vn2 = v_crossed.squaredNorm();
    if (vn2 < 1e-300) throw GeometryError("solve_crossing: crossed gradient is zero");
    const VectorXd vhat = v_crossed / std::sqrt(vn2);
    const VectorXd ps = v_to - v_to.dot(vhat) * vhat;
    const VectorXd pr = g_from - g_from.dot(vhat) * vhat;
    CrossingSolution sol;
    const double psn = ps.squaredNorm();
    if (psn > 1e-20 * v_to.squaredNorm()) {
        sol.c = ps.dot(pr) / psn;
    } else {
        // v_to parallel to the crossed gradient: joint least squares
        MatrixXd m(v_to.size(), 2);
        m.col(0) = v_to;
        m.col(1) = -v_crossed;
        const Eigen::Vector2d cb = m.colPivHouseholderQr().solve(g_from);
        sol.c = cb[0];
        sol.beta = cb[1];
        sol.residual = (sol.c * v_to - sol.beta * v_crossed - g_from).norm() /
                       std::max(g_from.norm(), 1e-300);
        return sol;
    }
    sol.beta = (sol.c * v_to - g_from).dot(v_crossed) / vn2;
    sol.residual = (sol.c * v_to - sol.beta * v_crossed - g_from).norm() /
                   std::max(g_from.norm(), 1e-300);
    return sol;
}

double bend_weight(const VectorXd& g_before, const VectorXd& g_after, const VectorXd& v_crossed) {
    const double vn2 = v_crossed.squaredNorm();
    if (vn2 < 1e-300) throw GeometryError("bend_weight: crossed gradient is zero");
    return (g_after - g_before).dot(v_crossed) / vn2;
}

// ---------------------------------------------------------------------------
// Exploration

bool ExplorationState::covered_layer(int layer, int width) const {
    for (int i = 0; i < width; ++i)
        if (!crossed_ids.count({layer, i})) return false;
    return true;
}

std::optional<DirectionChoice> choose_direction(const ExplorationState& state,
                                                const KnownPrefix& prefix, NeuronId target,
                                                const std::set<std::pair<int, int>>& attempted) {
    const int flat = prefix.flat_index(target);
    std::optional<DirectionChoice> best;
    for (int i = 0; i < static_cast<int>(state.nodes.size()); ++i) {
        if (attempted.count({i, flat})) continue;
        const ExplorationNode& node = state.nodes[static_cast<size_t>(i)];
        const auto w = node.forms.grad.col(flat);
        const double wn = w.norm();
        if (wn < 1e-12) continue;  // target has no boundary under this pattern
        const double val = node.forms.value[flat];
        const VectorXd& n = node.local.normal;
        VectorXd v = -(val >= 0 ? 1.0 : -1.0) * (w - w.dot(n) * n);
        const double vn = v.norm();
        if (vn < 1e-9 * wn) continue;  // target hyperplane parallel to the local one
        const double travel = std::abs(val) / vn;
        if (!best || travel < best->travel) best = DirectionChoice{i, v / vn, travel};
    }
    return best;
}

namespace {

// Orients the unit normal at the far side of a crossing consistently with the
// calibrated gradient on the near side. e_hat points across the crossed
// boundary from the near region into the far one. For a bent surface the two
// in-plane rays from the ridge characterize the side each normal points to;
// when the bend is too small to tell, parallel orientation is used.
VectorXd orient_across(const VectorXd& g_from, const VectorXd& far_normal, const VectorXd& e_hat) {
    const VectorXd ghat = g_from.normalized();
    VectorXd rho_r = -e_hat + e_hat.dot(ghat) * ghat;
    VectorXd rho_s = e_hat - e_hat.dot(far_normal) * far_normal;
    if (rho_r.norm() > 1e-9 && rho_s.norm() > 1e-9) {
        rho_r.normalize();
        rho_s.normalize();
        const double lhs = far_normal.dot(rho_r);
        const double rhs = ghat.dot(rho_s);
        if (std::abs(lhs) > 1e-6 && std::abs(rhs) > 1e-6)
            return lhs * rhs >= 0 ? far_normal : VectorXd(-far_normal);
    }
    return far_normal.dot(ghat) >= 0 ? far_normal : VectorXd(-far_normal);
}

// True when two signatures differ exactly at the given flat index.
bool adjacent_signatures(const std::vector<int8_t>& a, const std::vector<int8_t>& b,
                         int flipped) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (i == static_cast<size_t>(flipped)) {
            if (a[i] == b[i]) return false;
        } else if (a[i] != b[i]) {
            return false;
        }
    }
    return true;
}

struct StepAttempt {
    Oracle& oracle;
    const KnownPrefix& prefix;
    const DeeperConfig& cfg;
    Rng& rng;

    // Continue the candidate boundary across the hit boundary. Returns the
    // node on the far side, or nothing when the boundary does not continue
    // (the candidate belongs to a deeper layer).
    std::optional<ExplorationNode> run(const ExplorationNode& from, const VectorXd& v,
                                       const ClosestHit& hit) {
        const VectorXd p_cross = from.bp.point + hit.c * v;
        const double eps =
            std::max({1e-6 * (1.0 + p_cross.norm()), 1e-5 * hit.c, 1e-9});
        const VectorXd p0 = p_cross + eps * v;
        const VectorXd& nhat = from.local.normal;
        const VectorXd& wc = hit.grad;
        const double drift = wc.dot(v);  // rate of crossed preactivation along v
        if (std::abs(drift) < 1e-14 * wc.norm()) return std::nullopt;
        const double sigma_to = drift > 0 ? 1.0 : -1.0;

        // Half-space of the far region, used to keep fit probes on one side.
        Hyperplane far_side;
        far_side.normal = sigma_to * wc.normalized();
        far_side.offset = -far_side.normal.dot(p_cross);

        const int flat_crossed = prefix.flat_index(hit.id);

        double h = 50.0 * eps;
        for (int widen = 0; widen < 3; ++widen, h *= 8.0) {
            const Segment probe{p0 - h * nhat, p0 + h * nhat};
            std::vector<BoundaryPoint> kinks = points_on_line(oracle, probe, cfg.probe);

            // Drop kinks that belong to known boundaries rather than the
            // candidate's continuation.
            const KnownPrefix::Forms f0 = prefix.affine_forms(p0);
            std::vector<VectorXd> candidates;
            for (const auto& k : kinks) {
                const VectorXd d = k.point - p0;
                bool on_known = false;
                for (int idx = 0; idx < f0.value.size(); ++idx) {
                    const double gn = f0.grad.col(idx).norm();
                    if (gn < 1e-12) continue;
                    const double dist =
                        std::abs(f0.value[idx] + f0.grad.col(idx).dot(d)) / gn;
                    const double thresh = idx == flat_crossed
                                              ? 0.25 * eps * std::abs(drift) / wc.norm()
                                              : 1e-7 * (1.0 + k.point.norm());
                    if (dist < thresh) {
                        on_known = true;
                        break;
                    }
                }
                if (!on_known) candidates.push_back(k.point);
            }
            std::sort(candidates.begin(), candidates.end(),
                      [&](const VectorXd& a, const VectorXd& b) {
                          return (a - p0).norm() < (b - p0).norm();
                      });

            for (const VectorXd& q : candidates) {
                auto node = continue_from(from, v, hit, p_cross, eps, sigma_to, far_side, q, probe);
                if (node) return node;
            }
        }
        return std::nullopt;
    }

    std::optional<ExplorationNode> continue_from(const ExplorationNode& from, const VectorXd& v,
                                                 const ClosestHit& hit, const VectorXd& p_cross,
                                                 double eps, double sigma_to,
                                                 const Hyperplane& far_side, const VectorXd& q,
                                                 const Segment& probe_seg) {
        const double band = cfg.cross_band * (1.0 + p_cross.norm());
        Hyperplane coarse;
        try {
            InferOptions opts;
            opts.radius = std::max(5.0 * eps, 1e-7);
            opts.transversal = from.local.normal;
            opts.keep_side = far_side;
            coarse = infer_hyperplane(oracle, BoundaryPoint{q, std::nullopt, probe_seg}, cfg.probe,
                                      rng, opts);
        } catch (const DegenerateFitError&) {
            return std::nullopt;
        }
        if (std::abs(coarse.signed_distance(p_cross)) > band) return std::nullopt;

        // Step into the interior of the far region along the new piece.
        VectorXd w_dir = v - v.dot(coarse.normal) * coarse.normal;
        if (w_dir.norm() < 1e-9) {
            w_dir = random_unit(rng, static_cast<int>(v.size()));
            w_dir -= w_dir.dot(coarse.normal) * coarse.normal;
        }
        w_dir.normalize();
        if (sigma_to * hit.grad.dot(w_dir) < 0) w_dir = -w_dir;  // move away from the ridge

        const int flat_crossed = prefix.flat_index(hit.id);
        for (double shrink = 1.0; shrink > 0.05; shrink *= 0.25) {
            double s = 0.5 * shrink;
            if (auto cb2 = closest_boundary(prefix, q, w_dir)) s = std::min(s, 0.3 * cb2->c * shrink);
            s = std::max(s, 2.0 * eps);

            const VectorXd q2_guess = q + s * w_dir;
            const double h2 = std::max(0.05 * s, 4.0 * eps);
            VectorXd q2 = q;
            bool relocated = false;
            const Segment seg2{q2_guess - h2 * coarse.normal, q2_guess + h2 * coarse.normal};
            for (const auto& k : points_on_line(oracle, seg2, cfg.probe)) {
                if (std::abs(coarse.signed_distance(k.point)) <= std::max(0.2 * s, 2.0 * band)) {
                    q2 = k.point;
                    relocated = true;
                    break;
                }
            }
            if (!relocated) continue;

            Hyperplane full;
            try {
                InferOptions opts;
                opts.radius = std::min(cfg.probe.fit_radius(), 0.3 * s);
                opts.transversal = coarse.normal;
                opts.keep_side = far_side;
                full = infer_hyperplane(oracle, BoundaryPoint{q2, std::nullopt, seg2}, cfg.probe,
                                        rng, opts);
            } catch (const DegenerateFitError&) {
                continue;
            }
            if (std::abs(full.signed_distance(p_cross)) > 4.0 * band + 1e-4 * s) continue;

            ExplorationNode node;
            node.bp = BoundaryPoint{q2, full, seg2};
            node.local = full;
            node.sig = prefix.signature(q2);
            if (!adjacent_signatures(from.sig, node.sig, flat_crossed)) continue;
            node.forms = prefix.affine_forms(q2);
            node.arrival.crossed = hit.id;
            node.arrival.crossing_point = p_cross;
            node.arrival.crossed_grad = hit.grad;
            node.arrival.sigma_to = node.forms.value[flat_crossed] > 0 ? 1.0 : -1.0;
            return node;
        }
        return std::nullopt;
    }
};

}  // namespace

ExplorationState explore_boundary(Oracle& oracle, const KnownPrefix& prefix,
                                  const BoundaryPoint& p1, const DeeperConfig& cfg, Rng& rng) {
    if (!p1.local_hyperplane)
        throw GeometryError("explore_boundary: seed point has no fitted local hyperplane");
    const int prev_layer = prefix.top_layer();
    const int prev_width = prefix.top_width();
    const int max_steps = cfg.max_steps_factor * std::max(1, prev_width);

    ExplorationState state;
    ExplorationNode root;
    root.bp = p1;
    root.local = *p1.local_hyperplane;
    root.sig = prefix.signature(p1.point);
    root.forms = prefix.affine_forms(p1.point);
    state.nodes.push_back(std::move(root));

    StepAttempt stepper{oracle, prefix, cfg, rng};
    std::set<std::pair<int, int>> attempted;

    while (state.steps < max_steps) {
        if (state.covered_layer(prev_layer, prev_width)) {
            state.outcome = ExploreOutcome::CoveredPrevLayer;
            return state;
        }

        // Prefer the cheapest approach toward a still-missing boundary.
        std::optional<DirectionChoice> best;
        int best_flat = -1;
        for (int idx = 0; idx < prev_width; ++idx) {
            if (state.crossed_ids.count({prev_layer, idx})) continue;
            const NeuronId target{prev_layer, idx};
            auto ch = choose_direction(state, prefix, target, attempted);
            if (ch && (!best || ch->travel < best->travel)) {
                best = ch;
                best_flat = prefix.flat_index(target);
            }
        }
        int node_idx;
        VectorXd v;
        if (best) {
            node_idx = best->node;
            v = best->direction;
        } else {
            // Heuristic exhausted: random in-plane direction from a random node.
            node_idx = static_cast<int>(rng() % state.nodes.size());
            const VectorXd& n = state.nodes[static_cast<size_t>(node_idx)].local.normal;
            do {
                v = random_unit(rng, prefix.input_dim);
                v -= v.dot(n) * n;
            } while (v.norm() < 1e-9);
            v.normalize();
        }
        ++state.steps;
        if (best_flat >= 0) attempted.insert({node_idx, best_flat});

        const ExplorationNode& from = state.nodes[static_cast<size_t>(node_idx)];
        auto hit = closest_boundary(prefix, from.bp.point, v);
        if (!hit) continue;
        if (hit->runner_up_gap < 1e-9 * (1.0 + hit->c)) continue;  // degenerate tie

        std::optional<ExplorationNode> next;
        try {
            next = stepper.run(from, v, *hit);
        } catch (const PartialScanError&) {
            state.outcome = ExploreOutcome::Budget;
            return state;
        } catch (const BudgetExhausted&) {
            state.outcome = ExploreOutcome::Budget;
            return state;
        }
        if (!next) {
            // The boundary bent before the nearest known boundary: the
            // candidate lives deeper than this stage.
            state.outcome = ExploreOutcome::Deeper;
            return state;
        }

        next->arrival.from_node = node_idx;
        int existing = -1;
        for (int i = 0; i < static_cast<int>(state.nodes.size()); ++i) {
            if (state.nodes[static_cast<size_t>(i)].sig == next->sig) {
                existing = i;
                break;
            }
        }
        state.crossed_ids.insert({next->arrival.crossed.layer, next->arrival.crossed.index});
        if (existing >= 0) {
            state.redundant.push_back(next->arrival);
            state.redundant_to.push_back(existing);
        } else {
            state.nodes.push_back(std::move(*next));
        }
    }
    state.outcome = state.covered_layer(prev_layer, prev_width) ? ExploreOutcome::CoveredPrevLayer
                                                                : ExploreOutcome::Partial;
    return state;
}

// ---------------------------------------------------------------------------
// Weight recovery

NeuronRecovery recover_weights_for_neuron(const ExplorationState& state,
                                          const KnownPrefix& prefix, const DeeperConfig& cfg) {
    const int prev_layer = prefix.top_layer();
    const int prev_width = prefix.top_width();
    NeuronRecovery rec;
    rec.row = VectorXd::Zero(prev_width);
    rec.have.assign(static_cast<size_t>(prev_width), 0);
    rec.node_gradient.resize(state.nodes.size());
    if (state.nodes.empty()) {
        rec.consistent = false;
        return rec;
    }
    rec.node_gradient[0] = state.nodes[0].local.normal;

    std::map<int, std::vector<double>> samples;

    auto process_crossing = [&](const CrossingInfo& cr, const VectorXd& far_normal,
                                const VectorXd* expected_far) {
        const VectorXd& g_from = rec.node_gradient[static_cast<size_t>(cr.from_node)];
        const VectorXd e_hat = cr.sigma_to * cr.crossed_grad.normalized();
        const VectorXd v_to = orient_across(g_from, far_normal, e_hat);
        const CrossingSolution sol = solve_crossing(g_from, v_to, cr.crossed_grad);
        rec.max_residual = std::max(rec.max_residual, sol.residual);
        if (sol.c <= 0) rec.consistent = false;
        if (cr.crossed.layer == prev_layer)
            samples[cr.crossed.index].push_back(sol.beta * cr.sigma_to);
        if (expected_far) {
            const VectorXd pred = sol.c * v_to;
            const double rel =
                (pred - *expected_far).norm() / std::max(expected_far->norm(), 1e-300);
            rec.max_spread = std::max(rec.max_spread, rel);
        }
        return sol.c * v_to;
    };

    for (size_t i = 1; i < state.nodes.size(); ++i) {
        const ExplorationNode& node = state.nodes[i];
        rec.node_gradient[i] = process_crossing(node.arrival, node.local.normal, nullptr);
    }
    for (size_t r = 0; r < state.redundant.size(); ++r) {
        const int to = state.redundant_to[r];
        process_crossing(state.redundant[r], state.nodes[static_cast<size_t>(to)].local.normal,
                         &rec.node_gradient[static_cast<size_t>(to)]);
    }

    for (const auto& [idx, vals] : samples) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        rec.row[idx] = mean;
        rec.have[static_cast<size_t>(idx)] = 1;
        for (double v : vals)
            rec.max_spread = std::max(rec.max_spread,
                                      std::abs(v - mean) / std::max(1.0, std::abs(mean)));
    }
    if (rec.max_residual > cfg.consistency_tol || rec.max_spread > cfg.consistency_tol)
        rec.consistent = false;
    return rec;
}

// ---------------------------------------------------------------------------
// Sign resolution

SignResolution resolve_signs(const std::vector<NeuronRecovery>& recoveries,
                             const std::vector<ExplorationState>& states,
                             const KnownPrefix& prefix) {
    if (recoveries.size() != states.size())
        throw ShapeError("resolve_signs: recovery/state count mismatch");
    const int prev_width = prefix.top_width();
    const int flat0 = prefix.flat_index(NeuronId{prefix.top_layer(), 0});
    const int dim = prefix.input_dim;

    SignResolution res;
    res.t = VectorXd::Zero(prev_width);

    int n_rows = 0;
    for (size_t c = 0; c < recoveries.size(); ++c) {
        const auto& rec = recoveries[c];
        if (!rec.consistent) continue;
        if (std::count(rec.have.begin(), rec.have.end(), 1) != prev_width) continue;
        n_rows += dim * static_cast<int>(states[c].nodes.size());
    }
    if (n_rows == 0) {
        for (int i = 0; i < prev_width; ++i) res.unresolved.push_back(i);
        return res;
    }

    MatrixXd a = MatrixXd::Zero(n_rows, prev_width);
    VectorXd b = VectorXd::Zero(n_rows);
    std::vector<std::pair<int, std::pair<int, int>>> spans;  // candidate -> row range
    int at = 0;
    for (size_t c = 0; c < recoveries.size(); ++c) {
        const auto& rec = recoveries[c];
        if (!rec.consistent) continue;
        if (std::count(rec.have.begin(), rec.have.end(), 1) != prev_width) continue;
        const int row0 = at;
        for (size_t s = 0; s < states[c].nodes.size(); ++s) {
            const ExplorationNode& node = states[c].nodes[s];
            VectorXd rhs = 2.0 * rec.node_gradient[s];
            for (int h = 0; h < prev_width; ++h) {
                const auto w = node.forms.grad.col(flat0 + h);
                const double sigma = node.forms.value[flat0 + h] > 0 ? 1.0 : -1.0;
                a.block(at, h, dim, 1) = rec.row[h] * w;
                rhs -= rec.row[h] * sigma * w;
            }
            b.segment(at, dim) = rhs;
            at += dim;
        }
        spans.push_back({static_cast<int>(c), {row0, at}});
    }

    const VectorXd t_hat = a.colPivHouseholderQr().solve(b);
    res.min_confidence = t_hat.size() ? t_hat.cwiseAbs().minCoeff() : 0.0;
    for (int i = 0; i < prev_width; ++i) {
        if (std::abs(t_hat[i]) < 0.5) {
            res.unresolved.push_back(i);
            res.t[i] = 0.0;
        } else {
            res.t[i] = t_hat[i] > 0 ? 1.0 : -1.0;
        }
    }
    res.residual = (a * res.t - b).norm() / std::max(b.norm(), 1e-300);
    for (const auto& [cand, range] : spans) {
        const int r0 = range.first, r1 = range.second;
        const double rel = (a.middleRows(r0, r1 - r0) * res.t - b.segment(r0, r1 - r0)).norm() /
                           std::max(b.segment(r0, r1 - r0).norm(), 1e-300);
        res.candidate_residuals.push_back({cand, rel});
    }
    res.ok = res.unresolved.empty();
    return res;
}

// ---------------------------------------------------------------------------
// RecoveredModel

size_t RecoveredModel::parameters_identified() const {
    size_t n = 0;
    for (const auto& l : layers)
        n += static_cast<size_t>(l.weights.rows() + 1) * static_cast<size_t>(l.count());
    for (const auto& m : missing_weights) {
        (void)m;
        --n;
    }
    n -= missing_biases.size();
    if (output_recovered)
        n += static_cast<size_t>(output_weights.rows() + 1) *
             static_cast<size_t>(output_weights.cols());
    return n;
}

bool RecoveredModel::complete() const {
    return output_recovered && missing_weights.empty() && missing_biases.empty() &&
           unresolved_signs.empty() && status == RecoveryStatus::Complete;
}

Network RecoveredModel::to_network() const {
    if (!output_recovered)
        throw ConfigError("to_network: output layer was not recovered");
    std::vector<int> widths{input_dim};
    std::vector<MatrixXd> w;
    std::vector<VectorXd> b;
    for (const auto& l : layers) {
        widths.push_back(l.count());
        w.push_back(l.weights);
        b.push_back(l.biases);
    }
    widths.push_back(output_dim);
    w.push_back(output_weights);
    b.push_back(output_biases);
    return Network(std::move(widths), std::move(w), std::move(b));
}

std::string RecoveredModel::report_json() const {
    std::ostringstream os;
    os << "{\"status\":" << static_cast<int>(status) << ",\"queries\":" << queries_used
       << ",\"parameters_identified\":" << parameters_identified() << ",\"widths\":[" << input_dim;
    for (const auto& l : layers) os << "," << l.count();
    os << "," << output_dim << "],\"missing_weights\":[";
    for (size_t i = 0; i < missing_weights.size(); ++i) {
        const auto& m = missing_weights[i];
        os << (i ? "," : "") << "[" << m.layer << "," << m.from << "," << m.to << "]";
    }
    os << "],\"missing_biases\":[";
    for (size_t i = 0; i < missing_biases.size(); ++i)
        os << (i ? "," : "") << "[" << missing_biases[i].layer << "," << missing_biases[i].index
           << "]";
    os << "],\"unresolved_signs\":[";
    for (size_t i = 0; i < unresolved_signs.size(); ++i)
        os << (i ? "," : "") << "[" << unresolved_signs[i].layer << ","
           << unresolved_signs[i].index << "]";
    os << "],\"provenance\":[";
    for (size_t i = 0; i < provenance.size(); ++i) {
        const auto& p = provenance[i];
        os << (i ? "," : "") << "{\"layer\":" << p.neuron.layer << ",\"index\":" << p.neuron.index
           << ",\"nodes\":" << p.nodes << ",\"crossings\":" << p.crossings << "}";
    }
    os << "],\"warnings\":[";
    for (size_t i = 0; i < warnings.size(); ++i) {
        std::string esc = warnings[i];
        for (auto& ch : esc)
            if (ch == '"') ch = '\'';
        os << (i ? "," : "") << "\"" << esc << "\"";
    }
    os << "]}";
    return os.str();
}

}  // namespace relex
