#include "relex/deeper.hpp"

#include <algorithm>
#include <cmath>

namespace relex {

namespace {

// Jacobian and value of the oracle at x by forward differences. Within one
// linear region the differences are exact up to rounding; two random-direction
// consistency checks reject points whose delta-ball straddles a boundary.
struct AffineSample {
    MatrixXd jacobian;
    VectorXd value;
};

std::optional<AffineSample> measure_jacobian(Oracle& oracle, const VectorXd& x, Rng& rng) {
    const double delta = 1e-4 * (1.0 + x.norm());
    const VectorXd y0 = oracle.query(x);
    MatrixXd j(oracle.output_dim(), oracle.input_dim());
    for (int i = 0; i < oracle.input_dim(); ++i) {
        VectorXd xi = x;
        xi[i] += delta;
        j.col(i) = (oracle.query(xi) - y0) / delta;
    }
    for (int check = 0; check < 2; ++check) {
        const VectorXd u = random_unit(rng, oracle.input_dim());
        const VectorXd yu = oracle.query(x + delta * u);
        if ((yu - y0 - delta * (j * u)).norm() > 1e-6 * (1.0 + y0.norm())) return std::nullopt;
    }
    return AffineSample{std::move(j), y0};
}

struct StageOutcome {
    std::vector<ExplorationState> states;  // aligned with the estimate's columns
    std::vector<NeuronRecovery> recoveries;
    std::vector<int> pool_index;
    std::vector<BoundaryPoint> next_pool;
    bool budget_hit = false;
};

bool point_on_candidate(const KnownPrefix& prefix, const std::vector<ExplorationState>& states,
                        const BoundaryPoint& p, double tol_on_plane) {
    const auto sig = prefix.signature(p.point);
    for (const auto& st : states) {
        for (const auto& node : st.nodes) {
            if (node.sig == sig &&
                std::abs(node.local.signed_distance(p.point)) < tol_on_plane * (1.0 + p.point.norm()))
                return true;
        }
    }
    return false;
}

StageOutcome explore_stage(Oracle& oracle, const KnownPrefix& prefix,
                           std::vector<BoundaryPoint>& pool, int target,
                           const DeeperConfig& dcfg, uint64_t stage_seed) {
    StageOutcome out;
    for (size_t pi = 0; pi < pool.size(); ++pi) {
        BoundaryPoint& p = pool[pi];
        if (!p.local_hyperplane) continue;
        if (target >= 0 && static_cast<int>(out.states.size()) >= target) {
            out.next_pool.push_back(p);
            continue;
        }
        if (point_on_candidate(prefix, out.states, p, dcfg.probe.tol_on_plane)) continue;

        Rng rng(mix_seed(stage_seed, pi));
        ExplorationState st;
        try {
            st = explore_boundary(oracle, prefix, p, dcfg, rng);
        } catch (const BudgetExhausted&) {
            out.budget_hit = true;
            break;
        }
        if (st.outcome == ExploreOutcome::Budget) {
            out.budget_hit = true;
            break;
        }
        if (st.outcome == ExploreOutcome::Deeper) {
            out.next_pool.push_back(p);
            continue;
        }
        NeuronRecovery rec = recover_weights_for_neuron(st, prefix, dcfg);
        const int crossings_on_top =
            static_cast<int>(std::count(rec.have.begin(), rec.have.end(), 1));
        if (st.outcome == ExploreOutcome::Partial && crossings_on_top == 0) {
            out.next_pool.push_back(p);
            continue;
        }
        if (!rec.consistent) {
            // Likely a misattributed crossing; explore once more on a fresh stream.
            Rng retry_rng(mix_seed(stage_seed, pi + 0x9000));
            try {
                ExplorationState st2 = explore_boundary(oracle, prefix, p, dcfg, retry_rng);
                if (st2.outcome == ExploreOutcome::CoveredPrevLayer ||
                    st2.outcome == ExploreOutcome::Partial) {
                    NeuronRecovery rec2 = recover_weights_for_neuron(st2, prefix, dcfg);
                    if (std::max(rec2.max_residual, rec2.max_spread) <
                        std::max(rec.max_residual, rec.max_spread)) {
                        st = std::move(st2);
                        rec = std::move(rec2);
                    }
                }
            } catch (const BudgetExhausted&) {
                out.budget_hit = true;
            }
        }
        rec.source_point = static_cast<int>(pi);
        out.states.push_back(std::move(st));
        out.recoveries.push_back(std::move(rec));
        out.pool_index.push_back(static_cast<int>(pi));
        if (out.budget_hit) break;
    }
    return out;
}

}  // namespace

namespace {
void resolve_output_stage(Oracle& oracle, KnownPrefix& prefix,
                          const std::vector<ExplorationState>& top_states, RecoveredModel& model,
                          const ExtractConfig& cfg);
}  // namespace

RecoveredModel extract_network(Oracle& oracle, const ExtractConfig& cfg) {
    const uint64_t start_queries = oracle.query_count();
    if (cfg.budget) oracle.set_budget(start_queries + *cfg.budget);

    RecoveredModel model;
    model.input_dim = oracle.input_dim();
    model.output_dim = oracle.output_dim();

    Layer1Config l1 = cfg.layer1;
    l1.seed = mix_seed(cfg.seed, 1);
    if (!cfg.widths_hint.empty()) l1.target_count = cfg.widths_hint[0];
    Layer1Result r1 = recover_layer1(oracle, l1);
    for (const auto& w : r1.warnings) model.warnings.push_back(w);
    if (r1.status == RecoveryStatus::BudgetExhausted) model.status = RecoveryStatus::BudgetExhausted;
    else if (r1.status == RecoveryStatus::Partial) model.status = RecoveryStatus::Partial;

    KnownPrefix prefix{oracle.input_dim(), {r1.estimate}};
    for (int i = 0; i < r1.estimate.count(); ++i) {
        NeuronProvenance np;
        np.neuron = NeuronId{1, i};
        np.nodes = static_cast<int>(r1.estimate.provenance[static_cast<size_t>(i)].size());
        model.provenance.push_back(np);
    }

    std::vector<BoundaryPoint> pool = std::move(r1.unused.points);
    std::vector<ExplorationState> top_states;  // states of the current top layer
    bool budget_hit = model.status == RecoveryStatus::BudgetExhausted;

    for (int k = 2; k <= cfg.max_depth && !pool.empty() && !budget_hit; ++k) {
        const int target = static_cast<int>(cfg.widths_hint.size()) >= k
                               ? cfg.widths_hint[static_cast<size_t>(k - 1)]
                               : -1;
        StageOutcome stage =
            explore_stage(oracle, prefix, pool, target, cfg.deeper, mix_seed(cfg.seed, 100 + k));
        budget_hit = stage.budget_hit;
        if (stage.states.empty()) {
            if (!stage.next_pool.empty())
                model.warnings.push_back("stage " + std::to_string(k) + ": " +
                                         std::to_string(stage.next_pool.size()) +
                                         " boundary points left unexplained");
            pool = std::move(stage.next_pool);
            break;
        }

        // Signs of the layer below, with one-at-a-time outlier dropping.
        std::vector<int> active(stage.states.size());
        for (size_t i = 0; i < active.size(); ++i) active[i] = static_cast<int>(i);
        SignResolution sr;
        for (;;) {
            std::vector<NeuronRecovery> recs;
            std::vector<ExplorationState> sts;
            for (int i : active) {
                recs.push_back(stage.recoveries[static_cast<size_t>(i)]);
                sts.push_back(stage.states[static_cast<size_t>(i)]);
            }
            sr = resolve_signs(recs, sts, prefix);
            if ((sr.ok && sr.residual <= 0.05) || active.size() <= 1) break;
            int worst = -1;
            double worst_res = -1.0;
            for (const auto& [c, r] : sr.candidate_residuals) {
                if (r > worst_res) {
                    worst_res = r;
                    worst = c;
                }
            }
            if (worst < 0) break;
            const int victim = active[static_cast<size_t>(worst)];
            model.warnings.push_back("stage " + std::to_string(k) +
                                     ": dropped inconsistent candidate from point " +
                                     std::to_string(stage.pool_index[static_cast<size_t>(victim)]));
            active.erase(active.begin() + worst);
        }
        if (!sr.ok) {
            for (int i : sr.unresolved)
                model.unresolved_signs.push_back(NeuronId{k - 1, i});
            model.status = RecoveryStatus::Partial;
            model.warnings.push_back("stage " + std::to_string(k) +
                                     ": could not resolve signs of layer " + std::to_string(k - 1));
            break;
        }

        // Flip the layer below into its resolved orientation.
        LayerEstimate& below = prefix.layers.back();
        for (int h = 0; h < below.count(); ++h) {
            below.weights.col(h) *= sr.t[h];
            below.biases[h] *= sr.t[h];
            below.sign_resolved[static_cast<size_t>(h)] = 1;
        }

        // Assemble the new layer: bias from the boundary equation at each
        // node, unit-norm columns, duplicates merged.
        const int prev_width = prefix.top_width();
        const int flat0 = prefix.flat_index(NeuronId{prefix.top_layer(), 0});
        struct Built {
            VectorXd col;
            double bias;
            bool bias_ok;
            std::vector<uint8_t> have;
            int src;
        };
        std::vector<Built> built;
        std::vector<int> kept_active;
        for (size_t ai = 0; ai < active.size(); ++ai) {
            const int i = active[ai];
            const NeuronRecovery& rec = stage.recoveries[static_cast<size_t>(i)];
            const ExplorationState& st = stage.states[static_cast<size_t>(i)];
            double bias_sum = 0.0;
            int bias_nodes = 0;
            for (const auto& node : st.nodes) {
                bool usable = true;
                double acc = 0.0;
                for (int h = 0; h < prev_width; ++h) {
                    const double z = sr.t[h] * node.forms.value[flat0 + h];
                    const double a = std::max(z, 0.0);
                    if (rec.have[static_cast<size_t>(h)]) {
                        acc += rec.row[h] * a;
                    } else if (a > 0) {
                        usable = false;  // missing weight multiplies a live activation
                        break;
                    }
                }
                if (usable) {
                    bias_sum += -acc;
                    ++bias_nodes;
                }
            }
            Built bt;
            bt.col = rec.row;
            bt.have = rec.have;
            bt.bias_ok = bias_nodes > 0;
            bt.bias = bt.bias_ok ? bias_sum / bias_nodes : 0.0;
            bt.src = i;
            const double scale = bt.col.norm();
            if (scale < 1e-12) continue;
            bt.col /= scale;
            bt.bias /= scale;
            // merge duplicates (same boundary reached from two pool points)
            bool dup = false;
            for (const auto& prev : built) {
                const double dot = prev.col.dot(bt.col);
                if (std::abs(dot) > 1.0 - 1e-6 &&
                    std::abs(prev.bias - (dot >= 0 ? 1.0 : -1.0) * bt.bias) <
                        1e-5 * (1.0 + std::abs(prev.bias))) {
                    dup = true;
                    break;
                }
            }
            if (dup) continue;
            built.push_back(std::move(bt));
            kept_active.push_back(i);
        }

        LayerEstimate est;
        est.layer = k;
        const int nk = static_cast<int>(built.size());
        est.weights = MatrixXd::Zero(prev_width, nk);
        est.biases = VectorXd::Zero(nk);
        est.sign_resolved.assign(static_cast<size_t>(nk), 0);
        top_states.clear();
        for (int j = 0; j < nk; ++j) {
            const Built& bt = built[static_cast<size_t>(j)];
            est.weights.col(j) = bt.col;
            est.biases[j] = bt.bias;
            for (int h = 0; h < prev_width; ++h)
                if (!bt.have[static_cast<size_t>(h)])
                    model.missing_weights.push_back(MissingWeight{k, h, j});
            if (!bt.bias_ok) model.missing_biases.push_back(NeuronId{k, j});
            const ExplorationState& st = stage.states[static_cast<size_t>(bt.src)];
            est.provenance.push_back({pool[static_cast<size_t>(
                stage.pool_index[static_cast<size_t>(bt.src)])]});
            NeuronProvenance np;
            np.neuron = NeuronId{k, j};
            np.nodes = static_cast<int>(st.nodes.size());
            np.crossings = static_cast<int>(st.nodes.size()) - 1 +
                           static_cast<int>(st.redundant.size());
            for (const auto& id : st.crossed_ids) np.crossed.push_back(id);
            model.provenance.push_back(np);
            top_states.push_back(st);
        }
        prefix.layers.push_back(std::move(est));

        // Membership filter: drop next-pool points that sit on a recovered
        // boundary of this layer (repeat hits of the same neuron).
        std::vector<BoundaryPoint> filtered;
        const int flat_k0 = prefix.flat_index(NeuronId{k, 0});
        for (auto& p : stage.next_pool) {
            const KnownPrefix::Forms f = prefix.affine_forms(p.point);
            bool member = false;
            for (int j = 0; j < nk; ++j) {
                bool complete = true;
                for (int h = 0; h < prev_width; ++h)
                    if (!built[static_cast<size_t>(j)].have[static_cast<size_t>(h)]) complete = false;
                if (!complete || !built[static_cast<size_t>(j)].bias_ok) continue;
                const double gn = f.grad.col(flat_k0 + j).norm();
                if (gn < 1e-12) continue;
                if (std::abs(f.value[flat_k0 + j]) / gn < 1e-4 * (1.0 + p.point.norm())) {
                    member = true;
                    break;
                }
            }
            if (!member) filtered.push_back(std::move(p));
        }
        pool = std::move(filtered);
        if (model.status == RecoveryStatus::Complete && !model.missing_weights.empty())
            model.status = RecoveryStatus::Partial;
    }

    if (budget_hit) {
        model.status = RecoveryStatus::BudgetExhausted;
    } else {
        // Output stage: top-layer signs from output-gradient bending, then
        // the output affine map by regression on recovered features.
        try {
            resolve_output_stage(oracle, prefix, top_states, model, cfg);
        } catch (const BudgetExhausted&) {
            model.status = RecoveryStatus::BudgetExhausted;
        }
    }

    model.layers = prefix.layers;
    model.queries_used = oracle.query_count() - start_queries;
    return model;
}

// ---------------------------------------------------------------------------
// Output stage

namespace {

void resolve_output_stage(Oracle& oracle, KnownPrefix& prefix,
                          const std::vector<ExplorationState>& top_states, RecoveredModel& model,
                          const ExtractConfig& cfg) {
    const int d = prefix.top_layer();
    LayerEstimate& top = prefix.layers.back();
    const int n_d = top.count();
    const int dim = prefix.input_dim;
    const int n_out = oracle.output_dim();
    Rng rng(mix_seed(cfg.seed, 999));
    const int flat0 = n_d > 0 ? prefix.flat_index(NeuronId{d, 0}) : 0;

    std::vector<uint8_t> usable(static_cast<size_t>(n_d), 1);
    for (const auto& mw : model.missing_weights)
        if (mw.layer == d) usable[static_cast<size_t>(mw.to)] = 0;
    for (const auto& mb : model.missing_biases)
        if (mb.layer == d) usable[static_cast<size_t>(mb.index)] = 0;

    // Per-neuron output bend coefficients.
    std::vector<VectorXd> mu(static_cast<size_t>(n_d));
    std::vector<uint8_t> have_mu(static_cast<size_t>(n_d), 0);
    for (int j = 0; j < n_d; ++j) {
        if (!usable[static_cast<size_t>(j)]) continue;
        // candidate boundary points for this neuron
        std::vector<VectorXd> qs;
        if (d == 1) {
            const VectorXd n = top.weights.col(j);
            const VectorXd base = -top.biases[j] * n;
            for (int tries = 0; tries < 30 && qs.size() < 5; ++tries) {
                VectorXd t = random_unit(rng, dim);
                t -= t.dot(n) * n;
                if (t.norm() < 1e-9) continue;
                const VectorXd q = base + (0.4 * cfg.layer1.probe.segment_radius) * t.normalized() *
                                              std::pow(0.8, tries % 5);
                const KnownPrefix::Forms f = prefix.affine_forms(q);
                bool clear = true;
                for (int o = 0; o < f.value.size(); ++o) {
                    if (o == flat0 + j) continue;
                    const double gn = f.grad.col(o).norm();
                    if (gn > 1e-12 && std::abs(f.value[o]) / gn < 0.02 * (1.0 + q.norm()))
                        clear = false;
                }
                if (clear) qs.push_back(q);
            }
        } else {
            for (const auto& node : top_states[static_cast<size_t>(j)].nodes)
                qs.push_back(node.bp.point);
        }
        for (const VectorXd& q : qs) {
            const KnownPrefix::Forms f = prefix.affine_forms(q);
            const VectorXd w = f.grad.col(flat0 + j);
            if (w.norm() < 1e-12) continue;
            const VectorXd nhat = w.normalized();
            const double delta = 1e-4 * (1.0 + q.norm());
            const auto plus = measure_jacobian(oracle, q + delta * nhat, rng);
            const auto minus = measure_jacobian(oracle, q - delta * nhat, rng);
            if (!plus || !minus) continue;
            const MatrixXd dj = plus->jacobian - minus->jacobian;
            VectorXd m(n_out);
            bool clean = true;
            for (int o = 0; o < n_out; ++o) {
                m[o] = dj.row(o).dot(w) / w.squaredNorm();
                if ((dj.row(o).transpose() - m[o] * w).norm() >
                    1e-4 * (1.0 + std::abs(m[o]) * w.norm()))
                    clean = false;
            }
            if (!clean) continue;
            mu[static_cast<size_t>(j)] = m;
            have_mu[static_cast<size_t>(j)] = 1;
            break;
        }
        if (!have_mu[static_cast<size_t>(j)]) {
            usable[static_cast<size_t>(j)] = 0;
            model.warnings.push_back("output stage: no clean bend measurement for layer-" +
                                     std::to_string(d) + " neuron " + std::to_string(j));
        }
    }

    // Region samples: validated jacobians at generic points.
    struct Sample {
        VectorXd x;
        MatrixXd jac;
        VectorXd y;
        KnownPrefix::Forms forms;
    };
    std::vector<Sample> samples;
    const int want = 4 * std::max(n_d, 1) + 8;
    for (int tries = 0; tries < 8 * want && static_cast<int>(samples.size()) < want; ++tries) {
        const VectorXd x = random_in_ball(rng, dim, 0.8 * cfg.layer1.probe.segment_radius);
        const auto js = measure_jacobian(oracle, x, rng);
        if (!js) continue;
        samples.push_back(Sample{x, js->jacobian, js->value, prefix.affine_forms(x)});
    }
    if (samples.empty()) throw GeometryError("output stage: no affine samples found");

    // Sign system for the top layer.
    std::vector<int> sys_neurons;
    for (int j = 0; j < n_d; ++j)
        if (usable[static_cast<size_t>(j)]) sys_neurons.push_back(j);
    VectorXd t = VectorXd::Zero(n_d);
    if (!sys_neurons.empty()) {
        const int cols = static_cast<int>(sys_neurons.size());
        MatrixXd a = MatrixXd::Zero(static_cast<int>(samples.size()) * n_out * dim, cols);
        VectorXd b = VectorXd::Zero(a.rows());
        int at = 0;
        for (const auto& s : samples) {
            for (int o = 0; o < n_out; ++o) {
                VectorXd rhs = s.jac.row(o).transpose();
                for (int cj = 0; cj < cols; ++cj) {
                    const int j = sys_neurons[static_cast<size_t>(cj)];
                    const auto w = s.forms.grad.col(flat0 + j);
                    const double sigma = s.forms.value[flat0 + j] > 0 ? 1.0 : -1.0;
                    a.block(at, cj, dim, 1) = 0.5 * mu[static_cast<size_t>(j)][o] * w;
                    rhs -= 0.5 * mu[static_cast<size_t>(j)][o] * sigma * w;
                }
                b.segment(at, dim) = rhs;
                at += dim;
            }
        }
        const VectorXd t_hat = a.colPivHouseholderQr().solve(b);
        for (int cj = 0; cj < cols; ++cj) {
            const int j = sys_neurons[static_cast<size_t>(cj)];
            if (std::abs(t_hat[cj]) < 0.5) {
                usable[static_cast<size_t>(j)] = 0;
                model.unresolved_signs.push_back(NeuronId{d, j});
                model.warnings.push_back("output stage: ambiguous sign for layer-" +
                                         std::to_string(d) + " neuron " + std::to_string(j));
            } else {
                t[j] = t_hat[cj] > 0 ? 1.0 : -1.0;
            }
        }
    }
    for (int j = 0; j < n_d; ++j) {
        if (usable[static_cast<size_t>(j)]) {
            top.weights.col(j) *= t[j];
            top.biases[j] *= t[j];
            top.sign_resolved[static_cast<size_t>(j)] = 1;
        } else {
            model.excluded_neurons.push_back(NeuronId{d, j});
            if (model.status == RecoveryStatus::Complete) model.status = RecoveryStatus::Partial;
        }
    }
    for (const auto& id : model.unresolved_signs)
        if (id.layer != d && model.status == RecoveryStatus::Complete)
            model.status = RecoveryStatus::Partial;

    // Output regression on recovered features. Missing-weight neurons force
    // sampling into regions where their unmeasured sources are inactive, so
    // their (unknowable) activations are exactly zero.
    std::vector<int> feat;
    for (int j = 0; j < n_d; ++j)
        if (usable[static_cast<size_t>(j)]) feat.push_back(j);
    std::vector<std::pair<int, int>> forbidden;  // (flat index of source, missing for neuron)
    for (const auto& mw : model.missing_weights)
        if (mw.layer == d && d >= 2)
            forbidden.push_back({prefix.flat_index(NeuronId{d - 1, mw.from}), mw.to});

    auto admissible = [&](const KnownPrefix::Forms& f) {
        for (const auto& [src, togt] : forbidden) {
            (void)togt;
            if (f.value[src] > 0) return false;
        }
        return true;
    };

    struct RegSample {
        VectorXd feats;
        VectorXd y;
    };
    std::vector<RegSample> reg;
    auto push_reg = [&](const KnownPrefix::Forms& f, const VectorXd& y) {
        if (!admissible(f)) return;
        VectorXd row(static_cast<int>(feat.size()) + 1);
        for (size_t c = 0; c < feat.size(); ++c)
            row[static_cast<int>(c)] = std::max(f.value[flat0 + feat[c]], 0.0);
        row[static_cast<int>(feat.size())] = 1.0;
        reg.push_back(RegSample{row, y});
    };
    for (const auto& s : samples) push_reg(s.forms, s.y);
    const int want_reg = std::max(40, 3 * (static_cast<int>(feat.size()) + 2));
    for (int tries = 0; tries < 60 * want_reg && static_cast<int>(reg.size()) < want_reg; ++tries) {
        const VectorXd x = random_in_ball(rng, dim, 0.8 * cfg.layer1.probe.segment_radius);
        const KnownPrefix::Forms f = prefix.affine_forms(x);
        if (!admissible(f)) continue;
        push_reg(f, oracle.query(x));
    }
    if (static_cast<int>(reg.size()) < static_cast<int>(feat.size()) + 2) {
        model.warnings.push_back("output stage: not enough admissible samples for regression");
        return;
    }
    MatrixXd phi(static_cast<int>(reg.size()), static_cast<int>(feat.size()) + 1);
    MatrixXd y(static_cast<int>(reg.size()), n_out);
    for (size_t r = 0; r < reg.size(); ++r) {
        phi.row(static_cast<int>(r)) = reg[r].feats.transpose();
        y.row(static_cast<int>(r)) = reg[r].y.transpose();
    }
    const MatrixXd theta = phi.colPivHouseholderQr().solve(y);
    const double rel = (phi * theta - y).norm() / std::max(y.norm(), 1e-300);
    if (rel > 1e-5)
        model.warnings.push_back("output regression residual " + fmt_double17(rel) +
                                 " above expectation");

    model.output_weights = MatrixXd::Zero(n_d, n_out);
    for (size_t c = 0; c < feat.size(); ++c)
        model.output_weights.row(feat[c]) = theta.row(static_cast<int>(c));
    model.output_biases = theta.row(static_cast<int>(feat.size())).transpose();
    for (int j = 0; j < n_d; ++j)
        if (!usable[static_cast<size_t>(j)])
            for (int o = 0; o < n_out; ++o)
                model.missing_weights.push_back(MissingWeight{d + 1, j, o});
    model.output_recovered = true;
}

}  // namespace

}  // namespace relex
