#include "relex/harness.hpp"

#include "relex/batch.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace relex {

// ---------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        cfg.widths = j.at("widths").get<std::vector<int>>();
        cfg.trained = j.value("trained", false);
        cfg.seeds = j.value("seeds", std::vector<uint64_t>{0});
        cfg.sweep_variable = j.value("sweep_variable", std::string());
        cfg.sweep_values = j.value("sweep_values", std::vector<int>{});
        if (j.contains("budget") && !j.at("budget").is_null())
            cfg.budget = j.at("budget").get<uint64_t>();
        cfg.layers = j.value("layers", 1);
        cfg.out_prefix = j.value("out_prefix", std::string());
        cfg.parallelism = j.value("parallelism", 0);
        if (j.contains("train")) {
            const auto& t = j.at("train");
            cfg.train.n_points = t.value("n_points", cfg.train.n_points);
            cfg.train.epochs = t.value("epochs", cfg.train.epochs);
            cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        }
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            cfg.probe.segment_radius = p.value("segment_radius", cfg.probe.segment_radius);
            cfg.probe.segment_length = p.value("segment_length", cfg.probe.segment_length);
            cfg.probe.tol_point_rel = p.value("tol_point_rel", cfg.probe.tol_point_rel);
            cfg.probe.tol_flat = p.value("tol_flat", cfg.probe.tol_flat);
            cfg.probe.tol_on_plane = p.value("tol_on_plane", cfg.probe.tol_on_plane);
            cfg.probe.test_points = p.value("test_points", cfg.probe.test_points);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config field: ") + e.what());
    }
    if (cfg.widths.size() < 3) throw ConfigError("config: widths needs [n_in, hidden..., n_out]");
    if (!cfg.sweep_variable.empty() && cfg.sweep_variable != "n1" && cfg.sweep_variable != "n2")
        throw ConfigError("config: sweep_variable must be \"n1\" or \"n2\"");
    if (cfg.sweep_variable == "n2" && cfg.widths.size() < 4)
        throw ConfigError("config: n2 sweep needs at least two hidden layers");
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["widths"] = widths;
    j["trained"] = trained;
    j["train"] = {{"n_points", train.n_points},
                  {"epochs", train.epochs},
                  {"learning_rate", train.learning_rate}};
    j["seeds"] = seeds;
    j["sweep_variable"] = sweep_variable;
    j["sweep_values"] = sweep_values;
    if (budget) j["budget"] = *budget;
    else j["budget"] = nullptr;
    j["layers"] = layers;
    j["probe"] = {{"segment_radius", probe.segment_radius},
                  {"segment_length", probe.segment_length},
                  {"tol_point_rel", probe.tol_point_rel},
                  {"tol_flat", probe.tol_flat},
                  {"tol_on_plane", probe.tol_on_plane},
                  {"test_points", probe.test_points}};
    j["out_prefix"] = out_prefix;
    j["parallelism"] = parallelism;
    return j.dump();
}

uint64_t ExperimentConfig::hash() const {
    // FNV-1a over the canonical serialization
    const std::string s = to_json();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<int> ExperimentConfig::widths_for(int sweep_value) const {
    std::vector<int> w = widths;
    if (sweep_variable == "n1") w[1] = sweep_value;
    else if (sweep_variable == "n2") w[2] = sweep_value;
    return w;
}

// ---------------------------------------------------------------------------
// RunRecord

namespace {

std::string num_or_null(double v) {
    return std::isfinite(v) ? fmt_double17(v) : std::string("null");
}

}  // namespace

std::string RunRecord::to_json(bool include_wall) const {
    std::ostringstream os;
    os << "{\"config_hash\":" << config_hash << ",\"sweep_value\":" << sweep_value
       << ",\"seed\":" << seed << ",\"queries\":" << queries
       << ",\"params_identified\":" << params_identified
       << ",\"queries_per_param\":" << num_or_null(queries_per_param)
       << ",\"recovered_layer1\":" << recovered_layer1 << ",\"truth_layer1\":" << truth_layer1
       << ",\"log_weight_error_l1\":" << num_or_null(log_weight_error_l1)
       << ",\"log_bias_error_l1\":" << num_or_null(log_bias_error_l1)
       << ",\"recovered_layer2\":" << recovered_layer2
       << ",\"log_weight_error_l2\":" << num_or_null(log_weight_error_l2)
       << ",\"log_bias_error_l2\":" << num_or_null(log_bias_error_l2)
       << ",\"functional_max\":" << num_or_null(functional_max)
       << ",\"train_accuracy\":" << num_or_null(train_accuracy) << ",\"status\":" << status;
    if (include_wall) os << ",\"wall_ms\":" << num_or_null(wall_ms);
    os << "}";
    return os.str();
}

// ---------------------------------------------------------------------------
// Sweep

RunRecord run_single(const ExperimentConfig& cfg, int sweep_value, uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config_hash = cfg.hash();
    rec.sweep_value = sweep_value;
    rec.seed = seed;
    rec.log_weight_error_l2 = std::nan("");
    rec.log_bias_error_l2 = std::nan("");
    rec.functional_max = std::nan("");

    const std::vector<int> widths = cfg.widths_for(sweep_value);
    Network target = Network::he_init(widths, seed);
    if (cfg.trained) {
        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(seed, 13);
        TrainResult tr = train_memorization(target, tc);
        target = std::move(tr.net);
        rec.train_accuracy = tr.accuracy;
    }
    rec.truth_layer1 = widths[1];
    NetworkOracle oracle(target);

    if (cfg.layers == 1) {
        Layer1Config l1;
        l1.probe = cfg.probe;
        l1.seed = mix_seed(seed, 1);
        l1.target_count = widths[1];
        if (cfg.budget) oracle.set_budget(*cfg.budget);
        Layer1Result res = recover_layer1(oracle, l1);
        rec.queries = res.queries_used;
        rec.recovered_layer1 = res.estimate.count();
        rec.params_identified =
            static_cast<size_t>(res.estimate.count()) * static_cast<size_t>(widths[0] + 1);
        const AlignmentReport rep = align({res.estimate}, target);
        rec.log_weight_error_l1 = rep.layers[0].log_weight_error;
        rec.log_bias_error_l1 = rep.layers[0].log_bias_error;
        rec.status = res.status == RecoveryStatus::Complete          ? 0
                     : res.status == RecoveryStatus::BudgetExhausted ? 3
                                                                     : 2;
    } else {
        ExtractConfig ec;
        ec.layer1.probe = cfg.probe;
        ec.deeper.probe = cfg.probe;
        ec.widths_hint.assign(widths.begin() + 1, widths.end() - 1);
        ec.budget = cfg.budget;
        ec.seed = seed;
        RecoveredModel model = extract_network(oracle, ec);
        rec.queries = model.queries_used;
        rec.params_identified = model.parameters_identified();
        if (!model.layers.empty()) {
            rec.recovered_layer1 = model.layers[0].count();
            const AlignmentReport rep = align(model.layers, target);
            rec.log_weight_error_l1 = rep.layers[0].log_weight_error;
            rec.log_bias_error_l1 = rep.layers[0].log_bias_error;
            if (rep.layers.size() > 1) {
                rec.recovered_layer2 = model.layers[1].count();
                rec.log_weight_error_l2 = rep.layers[1].log_weight_error;
                rec.log_bias_error_l2 = rep.layers[1].log_bias_error;
            }
        }
        if (model.output_recovered && model.complete() &&
            static_cast<int>(model.layers.size()) == target.depth()) {
            const FunctionalDistance fd = functional_distance(
                model.to_network(), target, BallSampler{mix_seed(seed, 77), cfg.probe.segment_radius},
                10000);
            rec.functional_max = fd.max_abs;
        }
        rec.status = model.status == RecoveryStatus::Complete          ? 0
                     : model.status == RecoveryStatus::BudgetExhausted ? 3
                                                                       : 2;
    }
    rec.queries_per_param =
        rec.params_identified ? static_cast<double>(rec.queries) / rec.params_identified
                              : std::nan("");
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg) {
    std::vector<int> values = cfg.sweep_values;
    if (values.empty()) values.push_back(cfg.widths[1]);
    const int n = static_cast<int>(values.size() * cfg.seeds.size());
    std::vector<RunRecord> records(static_cast<size_t>(n));
    std::vector<uint8_t> failed(static_cast<size_t>(n), 0);
#pragma omp parallel for schedule(dynamic) num_threads(cfg.parallelism > 0 ? cfg.parallelism : 1)
    for (int i = 0; i < n; ++i) {
        const int vi = i / static_cast<int>(cfg.seeds.size());
        const int si = i % static_cast<int>(cfg.seeds.size());
        try {
            records[static_cast<size_t>(i)] =
                run_single(cfg, values[static_cast<size_t>(vi)], cfg.seeds[static_cast<size_t>(si)]);
        } catch (const std::exception&) {
            // failures are recorded and the sweep continues
            records[static_cast<size_t>(i)].sweep_value = values[static_cast<size_t>(vi)];
            records[static_cast<size_t>(i)].seed = cfg.seeds[static_cast<size_t>(si)];
            records[static_cast<size_t>(i)].status = 2;
            failed[static_cast<size_t>(i)] = 1;
        }
    }
    if (!cfg.out_prefix.empty()) write_sweep_outputs(cfg, records);
    return records;
}

std::string sweep_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    os << "# schema: relex-sweep-v1\n";
    os << "sweep_value,seed,queries,params_identified,queries_per_param,recovered_layer1,"
          "truth_layer1,log_weight_error_l1,log_bias_error_l1,recovered_layer2,"
          "log_weight_error_l2,log_bias_error_l2,functional_max,train_accuracy,status,wall_ms\n";
    auto emit = [&](const RunRecord& r, const std::string& seed_label) {
        os << r.sweep_value << "," << seed_label << "," << r.queries << "," << r.params_identified
           << "," << num_or_null(r.queries_per_param) << "," << r.recovered_layer1 << ","
           << r.truth_layer1 << "," << num_or_null(r.log_weight_error_l1) << ","
           << num_or_null(r.log_bias_error_l1) << "," << r.recovered_layer2 << ","
           << num_or_null(r.log_weight_error_l2) << "," << num_or_null(r.log_bias_error_l2) << ","
           << num_or_null(r.functional_max) << "," << num_or_null(r.train_accuracy) << ","
           << r.status << "," << num_or_null(r.wall_ms) << "\n";
    };
    for (const auto& r : records) emit(r, std::to_string(r.seed));

    // per-sweep-value mean and standard deviation rows
    std::map<int, std::vector<const RunRecord*>> by_value;
    for (const auto& r : records) by_value[r.sweep_value].push_back(&r);
    for (const auto& [value, rs] : by_value) {
        auto stat = [&](auto proj) {
            double mean = 0.0;
            int cnt = 0;
            for (const auto* r : rs) {
                const double v = proj(*r);
                if (std::isfinite(v)) {
                    mean += v;
                    ++cnt;
                }
            }
            mean = cnt ? mean / cnt : std::nan("");
            double sd = 0.0;
            for (const auto* r : rs) {
                const double v = proj(*r);
                if (std::isfinite(v)) sd += (v - mean) * (v - mean);
            }
            sd = cnt > 1 ? std::sqrt(sd / (cnt - 1)) : 0.0;
            return std::make_pair(mean, sd);
        };
        const auto qpp = stat([](const RunRecord& r) { return r.queries_per_param; });
        const auto lw = stat([](const RunRecord& r) { return r.log_weight_error_l1; });
        const auto lb = stat([](const RunRecord& r) { return r.log_bias_error_l1; });
        os << "# aggregate value=" << value << " queries_per_param=" << num_or_null(qpp.first)
           << "+-" << num_or_null(qpp.second) << " log_weight_error_l1=" << num_or_null(lw.first)
           << "+-" << num_or_null(lw.second) << " log_bias_error_l1=" << num_or_null(lb.first)
           << "+-" << num_or_null(lb.second) << "\n";
    }
    return os.str();
}

void write_sweep_outputs(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
    {
        std::ofstream csv(cfg.out_prefix + ".csv");
        if (!csv) throw ConfigError("cannot write " + cfg.out_prefix + ".csv");
        csv << sweep_csv(records);
    }
    {
        std::ofstream jsonl(cfg.out_prefix + ".jsonl", std::ios::app);  // append-only results log
        if (!jsonl) throw ConfigError("cannot write " + cfg.out_prefix + ".jsonl");
        for (const auto& r : records) jsonl << r.to_json(true) << "\n";
    }
}

// ---------------------------------------------------------------------------
// 2-D boundary rendering

namespace {

struct GridSeg {
    std::pair<double, double> a;
    std::pair<double, double> b;
};

const char* layer_color(int layer) {
    switch (layer) {
        case 1: return "#1f77b4";  // blue
        case 2: return "#d62728";  // red
        case 3: return "#2ca02c";
        case 4: return "#9467bd";
        default: return "#8c564b";
    }
}

}  // namespace

RenderResult render_boundaries_2d(const Network& net, const std::array<double, 4>& bbox,
                                  int resolution) {
    if (net.input_dim() != 2)
        throw UnsupportedError("render_boundaries_2d: input dimension must be 2");
    if (resolution < 2) throw ConfigError("render_boundaries_2d: resolution too small");
    const double x0 = bbox[0], y0 = bbox[1], x1 = bbox[2], y1 = bbox[3];
    if (!(x1 > x0) || !(y1 > y0)) throw ConfigError("render_boundaries_2d: empty bbox");
    const int n = resolution + 1;
    const double dx = (x1 - x0) / resolution;
    const double dy = (y1 - y0) / resolution;
    const double refine_tol = 1e-6 * std::max(x1 - x0, y1 - y0);

    MatrixXd pts(2, static_cast<Eigen::Index>(n) * n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
            pts(0, static_cast<Eigen::Index>(iy) * n + ix) = x0 + ix * dx;
            pts(1, static_cast<Eigen::Index>(iy) * n + ix) = y0 + iy * dy;
        }
    const MatrixXd grid = hidden_preact_batch(net, pts);  // hidden_count x n*n

    RenderResult out;
    std::ostringstream csv;
    csv << "# schema: relex-boundaries-v1\n";
    csv << "layer,neuron,polyline,vertex,x,y\n";

    int flat = 0;
    for (int layer = 1; layer <= net.depth(); ++layer) {
        for (int idx = 0; idx < net.width(layer); ++idx, ++flat) {
            const NeuronId id{layer, idx};
            auto value = [&](int ix, int iy) {
                return grid(flat, static_cast<Eigen::Index>(iy) * n + ix);
            };
            // Bisection refinement of a sign change between two grid points.
            auto refine = [&](double ax, double ay, double bx, double by) {
                VectorXd pa(2), pb(2);
                pa << ax, ay;
                pb << bx, by;
                double va = net.preactivation(id, pa);
                for (int it = 0; it < 60 && (pb - pa).norm() > refine_tol; ++it) {
                    VectorXd mid = 0.5 * (pa + pb);
                    const double vm = net.preactivation(id, mid);
                    if ((va > 0) == (vm > 0)) {
                        pa = mid;
                        va = vm;
                    } else {
                        pb = mid;
                    }
                }
                return std::make_pair(0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]));
            };

            std::vector<GridSeg> segs;
            for (int iy = 0; iy < resolution; ++iy) {
                for (int ix = 0; ix < resolution; ++ix) {
                    const double v00 = value(ix, iy), v10 = value(ix + 1, iy);
                    const double v01 = value(ix, iy + 1), v11 = value(ix + 1, iy + 1);
                    const double cx0 = x0 + ix * dx, cy0 = y0 + iy * dy;
                    const double cx1 = cx0 + dx, cy1 = cy0 + dy;
                    std::vector<std::pair<double, double>> hits;
                    auto edge = [&](double va, double vb, double ax, double ay, double bx,
                                    double by) {
                        if ((va > 0) != (vb > 0)) hits.push_back(refine(ax, ay, bx, by));
                    };
                    edge(v00, v10, cx0, cy0, cx1, cy0);
                    edge(v10, v11, cx1, cy0, cx1, cy1);
                    edge(v11, v01, cx1, cy1, cx0, cy1);
                    edge(v01, v00, cx0, cy1, cx0, cy0);
                    if (hits.size() == 2) {
                        segs.push_back(GridSeg{hits[0], hits[1]});
                    } else if (hits.size() == 4) {
                        // saddle: disambiguate with the center value
                        VectorXd c(2);
                        c << 0.5 * (cx0 + cx1), 0.5 * (cy0 + cy1);
                        const bool center_pos = net.preactivation(id, c) > 0;
                        if ((v00 > 0) == center_pos) {
                            segs.push_back(GridSeg{hits[3], hits[0]});
                            segs.push_back(GridSeg{hits[1], hits[2]});
                        } else {
                            segs.push_back(GridSeg{hits[0], hits[1]});
                            segs.push_back(GridSeg{hits[2], hits[3]});
                        }
                    }
                }
            }

            // Chain the cell segments into polylines.
            auto key = [&](const std::pair<double, double>& p) {
                const long long kx = llround((p.first - x0) / refine_tol);
                const long long ky = llround((p.second - y0) / refine_tol);
                return std::make_pair(kx, ky);
            };
            std::map<std::pair<long long, long long>, std::vector<int>> at_point;
            for (int s = 0; s < static_cast<int>(segs.size()); ++s) {
                at_point[key(segs[static_cast<size_t>(s)].a)].push_back(s);
                at_point[key(segs[static_cast<size_t>(s)].b)].push_back(s);
            }
            std::vector<uint8_t> used(segs.size(), 0);
            for (int s = 0; s < static_cast<int>(segs.size()); ++s) {
                if (used[static_cast<size_t>(s)]) continue;
                std::vector<std::pair<double, double>> line;
                line.push_back(segs[static_cast<size_t>(s)].a);
                line.push_back(segs[static_cast<size_t>(s)].b);
                used[static_cast<size_t>(s)] = 1;
                for (int dirn = 0; dirn < 2; ++dirn) {
                    for (;;) {
                        const auto endp = line.back();
                        int next = -1;
                        for (int cand : at_point[key(endp)]) {
                            if (!used[static_cast<size_t>(cand)]) {
                                next = cand;
                                break;
                            }
                        }
                        if (next < 0) break;
                        const GridSeg& g = segs[static_cast<size_t>(next)];
                        line.push_back(key(g.a) == key(endp) ? g.b : g.a);
                        used[static_cast<size_t>(next)] = 1;
                    }
                    std::reverse(line.begin(), line.end());
                }
                BoundaryPolyline pl;
                pl.neuron = id;
                pl.points = std::move(line);
                out.polylines.push_back(std::move(pl));
            }
        }
    }

    // CSV + SVG
    std::map<std::pair<int, int>, int> poly_counter;
    std::ostringstream svg;
    const int W = 800, H = 800;
    auto sx = [&](double x) { return (x - x0) / (x1 - x0) * W; };
    auto sy = [&](double y) { return H - (y - y0) / (y1 - y0) * H; };
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    for (const auto& pl : out.polylines) {
        const int pid = poly_counter[{pl.neuron.layer, pl.neuron.index}]++;
        svg << "<polyline fill=\"none\" stroke=\"" << layer_color(pl.neuron.layer)
            << "\" stroke-width=\"1.5\" points=\"";
        for (size_t v = 0; v < pl.points.size(); ++v) {
            svg << sx(pl.points[v].first) << "," << sy(pl.points[v].second);
            if (v + 1 < pl.points.size()) svg << " ";
        }
        svg << "\"/>\n";
        for (size_t v = 0; v < pl.points.size(); ++v)
            csv << pl.neuron.layer << "," << pl.neuron.index << "," << pid << "," << v << ","
                << fmt_double17(pl.points[v].first) << "," << fmt_double17(pl.points[v].second)
                << "\n";
    }
    svg << "</svg>\n";
    out.svg = svg.str();
    out.csv = csv.str();
    return out;
}

}  // namespace relex
