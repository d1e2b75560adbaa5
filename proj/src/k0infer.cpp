#include "hnci/k0infer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hnci/kernels.hpp"
#include "hnci/threads.hpp"

namespace hnci {

namespace {

constexpr double kTinyResidual = 1e-12;

void check_config(const K0Config& cfg) {
    if (cfg.B < 1 || cfg.J < 1) throw schema_error("B and J must be >= 1");
    if (cfg.k_max < 0) throw schema_error("k_max must be >= 0");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw schema_error("alpha must lie in (0,1)");
    for (const auto g : {&cfg.lambda_grid, &cfg.lambda_prime_grid})
        for (const auto v : *g)
            if (!(v > 0.0)) throw schema_error("penalty grids must be positive");
}

// Member-order scratch for one partition: gather, residualize, and reduce.
struct Residualizer {
    const GroupPartition* part;
    mutable std::vector<double> buf, means;

    explicit Residualizer(const GroupPartition& p) : part(&p), buf(p.n0), means(p.group_count()) {}

    // ||(I - H_k) v||^2 for a node-indexed vector.
    double rss(const std::vector<double>& v) const {
        gather(v);
        residualize();
        return kernels::nrm2sq(buf.data(), buf.size());
    }

    // Leaves the residual (member order) in buf and the group means in means.
    void gather(const std::vector<double>& v) const {
        for (std::size_t i = 0; i < part->members.size(); ++i) buf[i] = v[part->members[i]];
    }
    void residualize() const {
        kernels::segment_means(buf.data(), part->offsets.data(), part->group_count(), means.data());
        kernels::subtract_segment_means(buf.data(), part->offsets.data(), part->group_count(),
                                        means.data());
    }
};

std::vector<double> gaussian_on_untreated(const GroupPartition& any_part, std::size_t n, Rng& rng) {
    // Canonical order: ascending node id over untreated nodes, independent of
    // any partition's member order.
    std::vector<double> u(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (any_part.untreated_group_of[i] >= 0) u[i] = rng.normal();
    return u;
}

struct ModelStats {
    std::vector<double> rss;      // per k, on the observed y
    std::vector<std::size_t> df;  // d(k)
};

ModelStats model_stats(const std::vector<double>& y, const std::vector<GroupPartition>& parts) {
    ModelStats st;
    st.rss.reserve(parts.size());
    st.df.reserve(parts.size());
    for (const auto& p : parts) {
        st.rss.push_back(Residualizer(p).rss(y));
        st.df.push_back(p.group_count());
    }
    return st;
}

int penalized_argmin(const std::vector<double>& values, const std::vector<double>& ks,
                     double lambda) {
    int best = 0;
    double best_val = values[0] + lambda * ks[0];
    for (std::size_t i = 1; i < values.size(); ++i) {
        const double v = values[i] + lambda * ks[i];
        if (v < best_val) {
            best_val = v;
            best = static_cast<int>(i);
        }
    }
    return best;
}

} // namespace

std::vector<GroupPartition> build_partitions(const InterferenceGraph& g,
                                             const ExposureMapping& mapping, int k_max) {
    std::vector<GroupPartition> parts;
    parts.reserve(static_cast<std::size_t>(k_max) + 1);
    for (int k = 0; k <= k_max; ++k) parts.push_back(build_partition(g, mapping, k));
    return parts;
}

double bic_value(double rss, std::size_t n0, std::size_t df) {
    const double n = static_cast<double>(n0);
    return n * std::log(std::max(rss, 1e-300) / n) + static_cast<double>(df) * std::log(n);
}

std::size_t bic_select(const std::vector<double>& rss_by_model, std::size_t n0,
                       const std::vector<std::size_t>& df_by_model) {
    if (rss_by_model.empty() || rss_by_model.size() != df_by_model.size())
        throw mismatched_inputs_error("bic_select needs matching nonempty model vectors");
    std::size_t best = 0;
    double best_val = bic_value(rss_by_model[0], n0, df_by_model[0]);
    for (std::size_t i = 1; i < rss_by_model.size(); ++i) {
        const double v = bic_value(rss_by_model[i], n0, df_by_model[i]);
        const double tol = 1e-12 * (1.0 + std::fabs(best_val));
        if (v < best_val - tol ||
            (std::fabs(v - best_val) <= tol && df_by_model[i] < df_by_model[best])) {
            best_val = std::min(v, best_val);
            best = i;
        }
    }
    return best;
}

PenalizedFit penalized_fit_with_repro(const std::vector<double>& y,
                                      const std::vector<GroupPartition>& partitions,
                                      const std::vector<double>& u_star, double lambda) {
    PenalizedFit fit;
    fit.values.reserve(partitions.size());
    std::vector<double> ks;
    ks.reserve(partitions.size());
    for (const auto& p : partitions) {
        Residualizer rz(p);
        const double rss_y = rz.rss(y);
        rz.gather(u_star);
        rz.residualize();
        const double ru_norm2 = kernels::nrm2sq(rz.buf.data(), rz.buf.size());
        double value = rss_y;
        if (ru_norm2 > kTinyResidual) {
            // r_k^T y equals r_k^T (I-H_k) y, so dotting with the raw gathered
            // y is exact up to the projection identity.
            std::vector<double> ybuf(p.n0);
            for (std::size_t i = 0; i < p.members.size(); ++i) ybuf[i] = y[p.members[i]];
            const double ry = kernels::dot(rz.buf.data(), ybuf.data(), p.n0);
            value -= ry * ry / ru_norm2;
        } else {
            fit.degenerate = true;
        }
        fit.values.push_back(std::max(value, 0.0));
        ks.push_back(static_cast<double>(p.k));
    }
    fit.k_hat = partitions[static_cast<std::size_t>(
                               penalized_argmin(fit.values, ks, lambda))].k;
    return fit;
}

std::vector<double> auto_lambda_grid(const std::vector<double>& y,
                                     const std::vector<GroupPartition>& partitions) {
    const ModelStats st = model_stats(y, partitions);
    const std::size_t n0 = partitions.front().n0;

    // sigma-hat^2 from the largest model that still has residual dof.
    double sigma2 = 0.0;
    for (std::size_t i = partitions.size(); i-- > 0;) {
        if (n0 > st.df[i]) {
            sigma2 = st.rss[i] / static_cast<double>(n0 - st.df[i]);
            break;
        }
    }
    sigma2 = std::max(sigma2, 1e-12);

    // C-min estimated from the BIC-selected model; the fallback keeps the
    // upper end at the scale needed to prefer the empty model under the null
    // (roughly sigma^2 times the largest dimension jump).
    const std::size_t k_bic = bic_select(st.rss, n0, st.df);
    double cmin_term = 0.0;
    for (std::size_t k = 0; k < k_bic; ++k) {
        const double c = (st.rss[k] - st.rss[k_bic]) /
                         (static_cast<double>(n0) * static_cast<double>(k_bic - k));
        if (k == 0 || c < cmin_term) cmin_term = c;
    }
    const double hi = std::max({0.015 * cmin_term * static_cast<double>(n0),
                                2.0 * sigma2 * static_cast<double>(st.df.back() + 1),
                                10.0 * sigma2});
    const double lo = sigma2;
    const int points = 15;
    std::vector<double> grid(points);
    const double ratio = std::pow(hi / lo, 1.0 / (points - 1));
    double v = lo;
    for (int i = 0; i < points; ++i, v *= ratio) grid[i] = v;
    return grid;
}

std::vector<int> build_candidate_set(const std::vector<double>& y,
                                     const std::vector<GroupPartition>& partitions,
                                     const K0Config& config) {
    check_config(config);
    const std::vector<double> grid =
        config.lambda_grid.empty() ? auto_lambda_grid(y, partitions) : config.lambda_grid;
    const ModelStats st = model_stats(y, partitions);
    const std::size_t n0 = partitions.front().n0;
    const std::size_t n = partitions.front().n;

    // BIC of the model selected at each lambda, used to pick Lambda_b.
    auto bic_of_k = [&](int k) {
        return bic_value(st.rss[static_cast<std::size_t>(k)], n0,
                         st.df[static_cast<std::size_t>(k)]);
    };

    std::vector<std::vector<int>> per_draw(static_cast<std::size_t>(config.B));
    parallel_for(static_cast<std::size_t>(config.B), [&](std::size_t b) {
        Rng rng = Rng::substream(config.seed, 0xCA11D1DAu, b);
        const std::vector<double> u = gaussian_on_untreated(partitions.front(), n, rng);
        // Fit values are lambda-free; the argmin over the grid reuses them.
        const PenalizedFit fit = penalized_fit_with_repro(y, partitions, u, 0.0);
        std::vector<double> ks(partitions.size());
        for (std::size_t i = 0; i < partitions.size(); ++i)
            ks[i] = static_cast<double>(partitions[i].k);

        std::vector<int> chosen(grid.size());
        for (std::size_t j = 0; j < grid.size(); ++j)
            chosen[j] = partitions[static_cast<std::size_t>(
                                       penalized_argmin(fit.values, ks, grid[j]))].k;
        if (config.permissive_lambda) {
            per_draw[b] = std::move(chosen);
            return;
        }
        // Lambda_b: keep the lambdas whose selected model attains the best BIC
        // over the grid (usually a plateau selecting one k).
        double best = bic_of_k(chosen[0]);
        for (std::size_t j = 1; j < chosen.size(); ++j) best = std::min(best, bic_of_k(chosen[j]));
        std::vector<int> kept;
        for (std::size_t j = 0; j < chosen.size(); ++j)
            if (bic_of_k(chosen[j]) <= best + 1e-9 * (1.0 + std::fabs(best)))
                kept.push_back(chosen[j]);
        per_draw[b] = std::move(kept);
    });

    std::set<int> s;
    for (const auto& v : per_draw) s.insert(v.begin(), v.end());
    return {s.begin(), s.end()};
}

std::vector<double> conditional_repro_sample(const std::vector<double>& y,
                                             const GroupPartition& part, Rng& rng) {
    Residualizer rz(part);
    rz.gather(y);
    rz.residualize();
    const double b_k = std::sqrt(kernels::nrm2sq(rz.buf.data(), rz.buf.size()));
    if (b_k <= kTinyResidual)
        throw exact_fit_error("y lies in the column space of X_k at k = " +
                              std::to_string(part.k));
    const std::vector<double> a_means = rz.means; // H_k y group means

    // Draw u*, residualize, and rescale to the observed residual norm.
    double norm = 0.0;
    std::vector<double> ustar;
    for (int attempt = 0; attempt < 16 && norm <= kTinyResidual; ++attempt) {
        ustar.assign(part.n0, 0.0);
        for (auto& v : ustar) v = rng.normal();
        rz.buf = ustar;
        rz.residualize();
        norm = std::sqrt(kernels::nrm2sq(rz.buf.data(), rz.buf.size()));
    }
    const double scale = b_k / norm;

    std::vector<double> y_star(y.size(), 0.0);
    for (std::size_t l = 0; l < part.group_count(); ++l)
        for (std::size_t idx = part.offsets[l]; idx < part.offsets[l + 1]; ++idx)
            y_star[part.members[idx]] = a_means[l] + scale * rz.buf[idx];
    return y_star;
}

int nuclear_statistic(const std::vector<double>& y,
                      const std::vector<GroupPartition>& partitions,
                      const std::vector<int>& candidate_set,
                      const std::vector<double>& lambda_prime_grid) {
    if (candidate_set.empty()) throw error("empty candidate set");
    const std::size_t n0 = partitions.front().n0;
    std::vector<double> rss(candidate_set.size()), ks(candidate_set.size());
    std::vector<std::size_t> df(candidate_set.size());
    for (std::size_t i = 0; i < candidate_set.size(); ++i) {
        const auto& p = partitions[static_cast<std::size_t>(candidate_set[i])];
        rss[i] = Residualizer(p).rss(y);
        df[i] = p.group_count();
        ks[i] = static_cast<double>(candidate_set[i]);
    }
    // Stage 1: the lambda'-penalized argmin along the grid; stage 2: the BIC
    // pick among the stage-1 winners. Both stages are deterministic functions
    // of y, applied identically to observed and repro data.
    std::set<int> winners;
    for (const auto lam : lambda_prime_grid)
        winners.insert(static_cast<int>(penalized_argmin(rss, ks, lam)));
    if (winners.empty()) winners.insert(0);

    int best_idx = -1;
    double best_val = 0.0;
    for (const auto idx : winners) {
        const double v = bic_value(rss[static_cast<std::size_t>(idx)], n0,
                                   df[static_cast<std::size_t>(idx)]);
        if (best_idx < 0 || v < best_val - 1e-12 * (1.0 + std::fabs(best_val))) {
            best_idx = idx;
            best_val = v;
        }
    }
    return candidate_set[static_cast<std::size_t>(best_idx)];
}

K0ConfidenceSet confidence_set(const std::vector<double>& y,
                               const std::vector<GroupPartition>& partitions,
                               const std::vector<int>& candidate_set, const K0Config& config) {
    check_config(config);
    if (candidate_set.empty()) throw error("empty candidate set");
    K0ConfidenceSet out;
    out.candidate_set = candidate_set;
    std::sort(out.candidate_set.begin(), out.candidate_set.end());

    const std::vector<double> lgrid =
        config.lambda_prime_grid.empty() ? auto_lambda_grid(y, partitions)
                                         : config.lambda_prime_grid;
    out.k_hat_obs = nuclear_statistic(y, partitions, out.candidate_set, lgrid);

    const std::size_t m = out.candidate_set.size();
    out.p_hat.assign(m, std::vector<double>(m, 0.0));
    out.f_hat.assign(m, 0.0);

    for (std::size_t ki = 0; ki < m; ++ki) {
        const int k = out.candidate_set[ki];
        const auto& part = partitions[static_cast<std::size_t>(k)];

        Residualizer rz(part);
        const double b_k = std::sqrt(rz.rss(y));
        if (b_k <= kTinyResidual) {
            // Exact fit: the model at k explains y perfectly; excluding it
            // would be anti-conservative, so it is retained with F-hat = 1.
            out.exact_fit.push_back(k);
            out.f_hat[ki] = 1.0;
            continue;
        }

        std::vector<int> draws(static_cast<std::size_t>(config.J));
        parallel_for(static_cast<std::size_t>(config.J), [&](std::size_t j) {
            Rng rng = Rng::substream(config.seed, 0xC0FD5E7u,
                                     static_cast<std::uint64_t>(k), j);
            const std::vector<double> y_star = conditional_repro_sample(y, part, rng);
            draws[j] = nuclear_statistic(y_star, partitions, out.candidate_set, lgrid);
        });

        auto& mass = out.p_hat[ki];
        for (const auto khat : draws) {
            const auto it =
                std::lower_bound(out.candidate_set.begin(), out.candidate_set.end(), khat);
            mass[static_cast<std::size_t>(it - out.candidate_set.begin())] +=
                1.0 / static_cast<double>(config.J);
        }
        const auto obs_it =
            std::lower_bound(out.candidate_set.begin(), out.candidate_set.end(), out.k_hat_obs);
        const double p_obs = mass[static_cast<std::size_t>(obs_it - out.candidate_set.begin())];
        double f = 0.0;
        for (const auto pm : mass)
            if (pm <= p_obs) f += pm;
        out.f_hat[ki] = f;
    }

    for (std::size_t ki = 0; ki < m; ++ki)
        if (out.f_hat[ki] >= config.alpha) out.retained.push_back(out.candidate_set[ki]);
    out.k_alpha_star = out.retained.empty() ? -1 : out.retained.back();
    return out;
}

} // namespace hnci
