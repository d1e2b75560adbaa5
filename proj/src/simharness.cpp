#include "hnci/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "hnci/sfl.hpp"
#include "hnci/threads.hpp"

namespace hnci {

namespace {

double kahan_mean(const std::vector<double>& v) {
    double sum = 0.0, comp = 0.0;
    for (const auto x : v) {
        const double t = x - comp;
        const double s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

ExposureMapping staircase_mapping() {
    // ceil(p / 0.05) per depth with the 0/0 = 0 convention; the ceiling needs
    // the same representation-error guard as the floor bucketing.
    return ExposureMapping::custom(
        [](long long treated, long long total, int) -> long long {
            if (total == 0 || treated == 0) return 0;
            const double q =
                static_cast<double>(treated) / (static_cast<double>(total) * 0.05);
            return static_cast<long long>(std::ceil(q - 1e-9));
        },
        "ceil-prop-bucket(0.05)");
}

} // namespace

SimDesign SimDesign::table1() {
    SimDesign d;
    d.n = 1000;
    d.graphon = GraphonKind::er;
    d.er_p = 0.005;
    d.propensity_lo = d.propensity_hi = 0.2;
    d.tau_lo = d.tau_hi = 0.6;
    d.mapping = staircase_mapping();
    d.k0 = 3;
    d.interference.kind = InterferenceKind::staircase_k3;
    d.noise_sd = 0.2;
    d.repetitions = 300; // every repetition redraws graph and treatments
    d.replications = 1;
    d.seed = 1;
    return d;
}

SimDesign SimDesign::table2_setting1() {
    SimDesign d;
    d.n = 1000;
    d.graphon = GraphonKind::er;
    d.er_p = 0.02;
    d.propensity_lo = 0.03;
    d.propensity_hi = 0.06;
    d.tau_lo = 0.6;
    d.tau_hi = 0.8;
    d.mapping = ExposureMapping::treated_count_bucket(4);
    d.k0 = 2;
    d.interference.kind = InterferenceKind::linear_features;
    d.interference.coef = {5.0, 2.5};
    d.noise_sd = 0.5;
    d.repetitions = 20;
    d.replications = 200;
    d.seed = 2;
    return d;
}

SimDesign SimDesign::table3_setting1(int k0_true) {
    SimDesign d = table2_setting1();
    d.k0 = k0_true;
    d.repetitions = 100;
    d.replications = 1;
    d.seed = 3;
    switch (k0_true) {
        case 0:
            d.interference.kind = InterferenceKind::none;
            d.interference.coef.clear();
            break;
        case 1:
            d.interference.kind = InterferenceKind::linear_features;
            d.interference.coef = {1.5};
            break;
        default:
            d.interference.kind = InterferenceKind::linear_features;
            d.interference.coef = {10.0, 1.2};
            break;
    }
    return d;
}

InterferenceGraph generate_graph(const SimDesign& design, Rng& rng) {
    const std::size_t n = design.n;
    std::vector<double> xi(n, 0.0);
    if (design.graphon == GraphonKind::sbm_blocks)
        for (auto& v : xi) v = rng.uniform();

    auto edge_prob = [&](std::size_t i, std::size_t j) -> double {
        if (design.graphon == GraphonKind::er) return design.er_p;
        // Blockwise rule over six latent intervals: within block l the
        // probability is l/40, across blocks 0.3/40.
        const int bi = std::min<int>(5, static_cast<int>(xi[i] * 6.0));
        const int bj = std::min<int>(5, static_cast<int>(xi[j] * 6.0));
        if (bi == bj) return static_cast<double>(bi + 1) / 40.0;
        return 0.3 / 40.0;
    };

    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.bernoulli(edge_prob(i, j)))
                edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));

    std::vector<double> p(n);
    std::vector<std::uint8_t> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = design.propensity_lo == design.propensity_hi
                   ? design.propensity_lo
                   : rng.uniform(design.propensity_lo, design.propensity_hi);
        z[i] = rng.bernoulli(p[i]) ? 1 : 0;
    }
    return InterferenceGraph::build(n, edges, std::move(z), std::vector<double>(n, 0.0),
                                    std::move(p));
}

std::vector<double> interference_values(const InterferenceGraph& g, const SimDesign& design,
                                        bool* degenerate_max) {
    const std::size_t n = g.size();
    std::vector<double> f(n, 0.0);
    if (degenerate_max) *degenerate_max = false;
    if (design.interference.kind == InterferenceKind::none || design.k0 == 0) return f;

    const std::size_t k0 = static_cast<std::size_t>(design.k0);
    BfsWorkspace ws;

    if (design.interference.kind == InterferenceKind::staircase_k3) {
        // f_i = sum_l (1/2)^l * ceil(p_{i,l}/0.05) / max_i p_{i,l}, l = 1..3.
        std::vector<std::vector<double>> bucket(n), rawp(n);
        std::vector<double> maxp(k0, 0.0);
        const ExposureMapping cm = staircase_mapping();
        for (std::uint32_t i = 0; i < n; ++i) {
            const DepthProfile prof = bfs_depth_profile(g, i, k0, &ws);
            bucket[i].assign(k0, 0.0);
            rawp[i].assign(k0, 0.0);
            for (std::size_t d = 1; d <= k0; ++d) {
                long long total = 0, treated = 0;
                if (d <= prof.max_depth()) {
                    total = prof.levels[d - 1].first;
                    treated = prof.levels[d - 1].second;
                }
                bucket[i][d - 1] =
                    static_cast<double>(cm.entry(treated, total, static_cast<int>(d)).first);
                rawp[i][d - 1] =
                    total > 0 ? static_cast<double>(treated) / static_cast<double>(total) : 0.0;
                maxp[d - 1] = std::max(maxp[d - 1], rawp[i][d - 1]);
            }
        }
        for (std::size_t d = 0; d < k0; ++d) {
            if (maxp[d] <= 0.0) {
                if (degenerate_max) *degenerate_max = true;
                continue; // contributes 0, consistent with the 0/0 = 0 convention
            }
            const double w = std::pow(0.5, static_cast<double>(d + 1));
            for (std::size_t i = 0; i < n; ++i) f[i] += w * bucket[i][d] / maxp[d];
        }
        return f;
    }

    // linear_features: coefficients on the mapping's own feature coordinates,
    // normalized per depth by the realized maximum.
    std::vector<std::vector<double>> feat(n);
    std::vector<double> maxfeat(k0, 0.0);
    for (std::uint32_t i = 0; i < n; ++i) {
        const DepthProfile prof = bfs_depth_profile(g, i, k0, &ws);
        const FeatureKey key = feature_key(prof, design.mapping, k0);
        feat[i].resize(k0);
        for (std::size_t d = 0; d < k0; ++d) {
            feat[i][d] = static_cast<double>(key.entries[d].first) /
                         static_cast<double>(key.entries[d].second);
            maxfeat[d] = std::max(maxfeat[d], feat[i][d]);
        }
    }
    for (std::size_t d = 0; d < k0 && d < design.interference.coef.size(); ++d) {
        if (maxfeat[d] <= 0.0) {
            if (degenerate_max) *degenerate_max = true;
            continue;
        }
        for (std::size_t i = 0; i < n; ++i)
            f[i] += design.interference.coef[d] * feat[i][d] / maxfeat[d];
    }
    return f;
}

OutcomeDraw generate_outcomes(const InterferenceGraph& g, const SimDesign& design,
                              const std::vector<double>& tau_i,
                              const std::vector<double>& f_values, Rng& rng) {
    OutcomeDraw out;
    const std::size_t n = g.size();
    out.y.resize(n);
    double tau_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double eps = design.noise_sd > 0.0 ? design.noise_sd * rng.normal() : 0.0;
        out.y[i] = (g.treated(i) ? tau_i[i] : 0.0) + f_values[i] + eps;
        if (g.treated(i)) tau_sum += tau_i[i];
    }
    if (g.treated_count() > 0) out.true_tau = tau_sum / static_cast<double>(g.treated_count());
    return out;
}

namespace {

struct ReplicationOutcome {
    double width = 0.0;
    bool covered = false;
    bool ok = false;
    bool degenerate = false;
};

} // namespace

StudyResult run_adet_study(const SimDesign& design, const std::vector<MethodSpec>& methods,
                           const std::vector<int>& k_values, double alpha) {
    StudyResult result;
    result.seed = design.seed;
    const std::size_t n_cells = methods.size() * k_values.size();
    // outcome[cell][rep][repl]
    std::vector<std::vector<std::vector<ReplicationOutcome>>> cells(
        n_cells, std::vector<std::vector<ReplicationOutcome>>(
                     static_cast<std::size_t>(design.repetitions)));

    for (int rep = 0; rep < design.repetitions; ++rep) {
        Rng rep_rng = Rng::substream(design.seed, 0x5E7A11u, static_cast<std::uint64_t>(rep));
        const InterferenceGraph g0 = generate_graph(design, rep_rng);
        g0.validate();
        std::vector<double> tau_i(g0.size());
        for (auto& t : tau_i)
            t = design.tau_lo == design.tau_hi ? design.tau_lo
                                               : rep_rng.uniform(design.tau_lo, design.tau_hi);
        bool degenerate_max = false;
        const std::vector<double> f = interference_values(g0, design, &degenerate_max);

        std::vector<GroupPartition> parts;
        std::vector<FullGroups> full;
        bool need_pooled = false, need_grouped = false;
        for (const auto& ms : methods) {
            if (ms.method == Method::pooled) need_pooled = true;
            else need_grouped = true;
        }
        for (const auto k : k_values) {
            if (need_grouped) parts.push_back(build_partition(g0, design.mapping, k));
            if (need_pooled) full.push_back(build_full_groups(g0, design.mapping, k));
        }

        for (auto& cell : cells)
            cell[static_cast<std::size_t>(rep)].resize(
                static_cast<std::size_t>(design.replications));

        parallel_for(static_cast<std::size_t>(design.replications), [&](std::size_t repl) {
            Rng rng = Rng::substream(design.seed, 0x0D7A17u, static_cast<std::uint64_t>(rep),
                                     repl);
            const OutcomeDraw draw = generate_outcomes(g0, design, tau_i, f, rng);
            const InterferenceGraph g = g0.with_outcomes(draw.y);

            for (std::size_t kidx = 0; kidx < k_values.size(); ++kidx) {
                // Shared per-k work for the grouped methods.
                const GroupPartition* part = need_grouped ? &parts[kidx] : nullptr;
                OlsFit fit;
                bool fit_ok = false;
                SflSolution sfl_sol;
                bool sfl_ok = false;

                for (std::size_t midx = 0; midx < methods.size(); ++midx) {
                    auto& slot = cells[midx * k_values.size() + kidx]
                                      [static_cast<std::size_t>(rep)][repl];
                    try {
                        AdetReport r;
                        if (methods[midx].method == Method::pooled) {
                            r = pooled_adet_ci(g, full[kidx], alpha);
                        } else {
                            if (!fit_ok) {
                                fit = ols_fit(g, *part);
                                fit_ok = true;
                            }
                            if (methods[midx].method == Method::ols) {
                                r = methods[midx].estimator == Estimator::outcome_regression
                                        ? adet_or(g, *part, fit, alpha)
                                        : adet_dr(g, *part, fit, alpha);
                            } else {
                                if (!sfl_ok) {
                                    sfl_sol = dc_solve(part->gather(draw.y), *part,
                                                       SflConfig::defaults(g.size()));
                                    sfl_ok = true;
                                }
                                r = adet_sfl(g, *part, sfl_sol, alpha, methods[midx].estimator);
                            }
                        }
                        slot.ok = true;
                        slot.width = r.width();
                        slot.covered = r.ci_lo <= draw.true_tau && draw.true_tau <= r.ci_hi;
                        slot.degenerate = r.sigma2_hat == 0.0 || degenerate_max;
                    } catch (const error&) {
                        slot.ok = false;
                    }
                }
            }
        });
    }

    for (std::size_t midx = 0; midx < methods.size(); ++midx) {
        for (std::size_t kidx = 0; kidx < k_values.size(); ++kidx) {
            AdetCell cell;
            cell.method = methods[midx].label();
            cell.k = k_values[kidx];
            std::vector<double> widths, covers;
            for (int rep = 0; rep < design.repetitions; ++rep) {
                std::vector<double> rep_w, rep_c;
                for (const auto& slot :
                     cells[midx * k_values.size() + kidx][static_cast<std::size_t>(rep)]) {
                    if (!slot.ok) {
                        ++cell.n_err;
                        continue;
                    }
                    ++cell.n_ok;
                    rep_w.push_back(slot.width);
                    rep_c.push_back(slot.covered ? 1.0 : 0.0);
                    cell.degenerate = cell.degenerate || slot.degenerate;
                }
                if (!rep_w.empty()) {
                    cell.per_rep_mean_width.push_back(kahan_mean(rep_w));
                    cell.per_rep_coverage.push_back(kahan_mean(rep_c));
                    widths.insert(widths.end(), rep_w.begin(), rep_w.end());
                    covers.insert(covers.end(), rep_c.begin(), rep_c.end());
                }
            }
            cell.coverage = kahan_mean(covers);
            cell.mean_width = kahan_mean(widths);
            if (widths.size() > 1) {
                double ss = 0.0;
                for (const auto w : widths) ss += (w - cell.mean_width) * (w - cell.mean_width);
                cell.width_se = std::sqrt(ss / (static_cast<double>(widths.size()) - 1.0) /
                                          static_cast<double>(widths.size()));
            }
            result.adet_cells.push_back(std::move(cell));
        }
    }
    return result;
}

StudyResult run_k0_study(const SimDesign& design, const K0Config& config,
                         const K0StudyOptions& options) {
    StudyResult result;
    result.seed = design.seed;

    struct RepOutcome {
        bool range_cover = false, repro_cover = false;
        bool range_upper = false, repro_upper = false;
        std::size_t range_card = 0, repro_card = 0;
        bool ok = false;
    };
    std::vector<RepOutcome> reps(static_cast<std::size_t>(design.repetitions));

    parallel_for(static_cast<std::size_t>(design.repetitions), [&](std::size_t rep) {
        Rng rep_rng = Rng::substream(design.seed, 0x6E7A22u, rep);
        const InterferenceGraph g0 = generate_graph(design, rep_rng);
        std::vector<double> tau_i(g0.size());
        for (auto& t : tau_i)
            t = design.tau_lo == design.tau_hi ? design.tau_lo
                                               : rep_rng.uniform(design.tau_lo, design.tau_hi);
        const std::vector<double> f = interference_values(g0, design);
        Rng rng = Rng::substream(design.seed, 0x0D7A23u, rep);
        const OutcomeDraw draw = generate_outcomes(g0, design, tau_i, f, rng);
        const InterferenceGraph g = g0.with_outcomes(draw.y);

        const std::vector<GroupPartition> parts =
            build_partitions(g, design.mapping, config.k_max);

        K0Config cfg = config;
        cfg.seed = Rng::substream(design.seed, 0xC0F1D5u, rep).next_u64();

        auto& out = reps[rep];
        if (options.run_range) {
            std::vector<int> range_set(static_cast<std::size_t>(config.k_max) + 1);
            for (int k = 0; k <= config.k_max; ++k) range_set[static_cast<std::size_t>(k)] = k;
            const K0ConfidenceSet cs = confidence_set(draw.y, parts, range_set, cfg);
            out.range_cover = std::binary_search(cs.retained.begin(), cs.retained.end(),
                                                 design.k0);
            out.range_upper = design.k0 <= cs.k_alpha_star;
            out.range_card = cs.retained.size();
        }
        if (options.run_repro) {
            const std::vector<int> sb = build_candidate_set(draw.y, parts, cfg);
            const K0ConfidenceSet cs = confidence_set(draw.y, parts, sb, cfg);
            out.repro_cover = std::binary_search(cs.retained.begin(), cs.retained.end(),
                                                 design.k0);
            out.repro_upper = design.k0 <= cs.k_alpha_star;
            out.repro_card = cs.retained.size();
        }
        out.ok = true;
    });

    auto aggregate = [&](bool repro) {
        K0Cell cell;
        cell.mode = repro ? "repro" : "range";
        cell.k0_true = design.k0;
        std::size_t n_ok = 0, covered = 0, upper = 0, card = 0;
        for (const auto& r : reps) {
            if (!r.ok) continue;
            ++n_ok;
            covered += repro ? r.repro_cover : r.range_cover;
            upper += repro ? r.repro_upper : r.range_upper;
            card += repro ? r.repro_card : r.range_card;
        }
        cell.reps = n_ok;
        if (n_ok > 0) {
            cell.coverage = static_cast<double>(covered) / static_cast<double>(n_ok);
            cell.upper_bound_rate = static_cast<double>(upper) / static_cast<double>(n_ok);
            cell.mean_cardinality = static_cast<double>(card) / static_cast<double>(n_ok);
        }
        result.k0_cells.push_back(std::move(cell));
    };
    if (options.run_range) aggregate(false);
    if (options.run_repro) aggregate(true);
    return result;
}

std::string StudyResult::to_json_string() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["adet"] = nlohmann::json::array();
    for (const auto& c : adet_cells) {
        j["adet"].push_back({{"method", c.method},
                             {"k", c.k},
                             {"coverage", c.coverage},
                             {"mean_width", c.mean_width},
                             {"width_se", c.width_se},
                             {"n_ok", c.n_ok},
                             {"n_err", c.n_err},
                             {"degenerate", c.degenerate}});
    }
    j["k0"] = nlohmann::json::array();
    for (const auto& c : k0_cells) {
        j["k0"].push_back({{"mode", c.mode},
                           {"k0", c.k0_true},
                           {"coverage", c.coverage},
                           {"mean_cardinality", c.mean_cardinality},
                           {"upper_bound_rate", c.upper_bound_rate},
                           {"reps", c.reps}});
    }
    return j.dump(2);
}

std::string StudyResult::to_csv() const {
    std::ostringstream os;
    os << "kind,method_or_mode,k,coverage,mean_width,width_se,mean_cardinality,upper_bound_rate,"
          "n_ok,n_err\n";
    for (const auto& c : adet_cells)
        os << "adet," << c.method << "," << c.k << "," << c.coverage << "," << c.mean_width << ","
           << c.width_se << ",,," << c.n_ok << "," << c.n_err << "\n";
    for (const auto& c : k0_cells)
        os << "k0," << c.mode << "," << c.k0_true << "," << c.coverage << ",,,"
           << c.mean_cardinality << "," << c.upper_bound_rate << "," << c.reps << ",0\n";
    return os.str();
}

} // namespace hnci
