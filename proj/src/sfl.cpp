#include "hnci/sfl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hnci/kernels.hpp"

namespace hnci {

SflConfig SflConfig::defaults(std::size_t n_total) { return SflConfig{}.resolved(n_total); }

SflConfig SflConfig::resolved(std::size_t n_total) const {
    SflConfig c = *this;
    const double lam = (1.0 / 30.0) / std::sqrt(static_cast<double>(n_total));
    if (c.lambda1 < 0.0) c.lambda1 = lam;
    if (c.lambda2 < 0.0) c.lambda2 = lam;
    if (c.group_merge_tol < 0.0) c.group_merge_tol = c.lambda2 / 2.0;
    if (!(c.rho > 0.0)) throw schema_error("rho must be positive");
    if (!(c.tol_primal > 0.0 && c.tol_dual > 0.0 && c.tol_dc > 0.0))
        throw schema_error("solver tolerances must be positive");
    if (c.dc_max_iter < 1 || c.admm_max_iter < 1)
        throw schema_error("iteration caps must be >= 1");
    return c;
}

namespace {

// Sufficient statistics of the indicator-design fit: the residual sum of
// squares is sum_l (ssq_l - 2 beta_l s_l + m_l beta_l^2).
struct GroupStats {
    std::vector<double> m, s, ssq;
    std::size_t n0 = 0;

    double rss(const std::vector<double>& beta) const {
        double acc = 0.0;
        for (std::size_t l = 0; l < m.size(); ++l)
            acc += ssq[l] + beta[l] * (m[l] * beta[l] - 2.0 * s[l]);
        return std::max(acc, 0.0);
    }
    double rss_min() const {
        double acc = 0.0;
        for (std::size_t l = 0; l < m.size(); ++l) acc += ssq[l] - s[l] * s[l] / m[l];
        return std::max(acc, 0.0);
    }
    std::vector<double> means() const {
        std::vector<double> b(m.size());
        for (std::size_t l = 0; l < m.size(); ++l) b[l] = s[l] / m[l];
        return b;
    }
};

GroupStats group_stats(const std::vector<double>& y_obs, const GroupPartition& p) {
    if (y_obs.size() != p.n0) throw mismatched_inputs_error("y_obs must align with partition members");
    GroupStats st;
    const std::size_t d = p.group_count();
    st.m.resize(d);
    st.s.assign(d, 0.0);
    st.ssq.assign(d, 0.0);
    st.n0 = p.n0;
    for (std::size_t l = 0; l < d; ++l) {
        st.m[l] = static_cast<double>(p.group_size(l));
        for (std::size_t idx = p.offsets[l]; idx < p.offsets[l + 1]; ++idx) {
            st.s[l] += y_obs[idx];
            st.ssq[l] += y_obs[idx] * y_obs[idx];
        }
    }
    return st;
}

double clipped_penalty(const std::vector<double>& beta, double lambda1, double lambda2) {
    const std::size_t d = beta.size();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            acc += std::min(std::fabs(beta[i] - beta[j]), lambda2);
    return lambda1 * acc;
}

double objective(const GroupStats& st, const std::vector<double>& beta, double lambda1,
                 double lambda2) {
    return std::sqrt(st.rss(beta) / (2.0 * st.n0)) + clipped_penalty(beta, lambda1, lambda2);
}

// Subgradient of S2 at beta: lambda1 * sum_{j != i} sign(beta_i - beta_j) on
// pairs past the clip; zero exactly at |diff| == lambda2.
void s2_subgradient(const std::vector<double>& beta, double lambda1, double lambda2,
                    std::vector<double>& g) {
    const std::size_t d = beta.size();
    g.assign(d, 0.0);
    for (std::size_t i = 0; i + 1 < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            const double diff = beta[i] - beta[j];
            if (diff > lambda2) {
                g[i] += lambda1;
                g[j] -= lambda1;
            } else if (diff < -lambda2) {
                g[i] -= lambda1;
                g[j] += lambda1;
            }
        }
    }
}

// The beta update couples beta only through the scalar c = ||y - X beta||.
// For fixed c the stationarity system is (diag(m_l/(sqrt(2 n0) c)) +
// rho T^T T) beta = s/(sqrt(2 n0) c) + w, and T^T T = d I - 1 1^T gives a
// Sherman-Morrison solve in O(d). The root of ||y - X beta(c)|| = c is then
// bracketed and bisected.
class BetaUpdate {
public:
    BetaUpdate(const GroupStats& st, double rho) : st_(st), rho_(rho) {}

    // w = g + T^T (rho p - nu), fixed during one update.
    std::vector<double> solve(const std::vector<double>& w, double c_hint) const {
        const double c_lo_base = std::sqrt(st_.rss_min());
        double lo = std::max(c_lo_base, 1e-300);
        double hi = std::max({c_hint, 2.0 * lo, 1e-12});
        std::vector<double> beta;
        // Expand hi until phi(hi) < hi.
        for (int it = 0; it < 200; ++it) {
            beta = solve_at(w, hi);
            if (std::sqrt(st_.rss(beta)) <= hi) break;
            hi *= 4.0;
        }
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            beta = solve_at(w, mid);
            const double phi = std::sqrt(st_.rss(beta));
            if (phi > mid)
                lo = mid;
            else
                hi = mid;
            if (hi - lo <= 1e-14 * (1.0 + hi)) break;
        }
        return solve_at(w, 0.5 * (lo + hi));
    }

private:
    std::vector<double> solve_at(const std::vector<double>& w, double c) const {
        const std::size_t d = st_.m.size();
        const double inv = 1.0 / (std::sqrt(2.0 * st_.n0) * c);
        std::vector<double> x(d), inva(d);
        double dot_xa = 0.0, delta = 0.0;
        for (std::size_t l = 0; l < d; ++l) {
            const double mt = st_.m[l] * inv;
            const double a = mt + rho_ * static_cast<double>(d);
            inva[l] = 1.0 / a;
            x[l] = (st_.s[l] * inv + w[l]) * inva[l];
            dot_xa += x[l];
            delta += mt * inva[l];
        }
        delta /= static_cast<double>(d); // 1 - rho * sum(1/a), rewritten stably
        const double corr = rho_ * dot_xa / delta;
        for (std::size_t l = 0; l < d; ++l) x[l] += corr * inva[l];
        return x;
    }

    const GroupStats& st_;
    double rho_;
};

double min_eigenvalue_jacobi(std::vector<double> a, std::size_t n) {
    // Cyclic Jacobi on a symmetric matrix stored row-major; adequate for the
    // small merged-design diagnostics this backs.
    auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double cth = 1.0 / std::sqrt(t * t + 1.0);
                const double sth = t * cth;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = cth * aip - sth * aiq;
                    at(i, q) = sth * aip + cth * aiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double apj = at(p, j), aqj = at(q, j);
                    at(p, j) = cth * apj - sth * aqj;
                    at(q, j) = sth * apj + cth * aqj;
                }
            }
        }
    }
    double mn = at(0, 0);
    for (std::size_t i = 1; i < n; ++i) mn = std::min(mn, at(i, i));
    return mn;
}

std::vector<double> refit_eta(const GroupStats& st,
                              const std::vector<std::vector<std::uint32_t>>& merged) {
    std::vector<double> eta(merged.size());
    for (std::size_t m = 0; m < merged.size(); ++m) {
        double s = 0.0, w = 0.0;
        for (const auto l : merged[m]) {
            s += st.s[l];
            w += st.m[l];
        }
        eta[m] = s / w;
    }
    return eta;
}

} // namespace

double sfl_objective(const std::vector<double>& beta, const std::vector<double>& y_obs,
                     const GroupPartition& p, double lambda1, double lambda2) {
    if (beta.size() != p.group_count()) throw mismatched_inputs_error("beta has wrong length");
    return objective(group_stats(y_obs, p), beta, lambda1, lambda2);
}

std::vector<std::vector<std::uint32_t>> extract_groups(const std::vector<double>& beta_grp,
                                                       double merge_tol) {
    const std::size_t d = beta_grp.size();
    std::vector<std::uint32_t> order(d);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return beta_grp[a] < beta_grp[b]; });
    std::vector<std::vector<std::uint32_t>> merged;
    for (std::size_t i = 0; i < d; ++i) {
        if (i == 0 || beta_grp[order[i]] - beta_grp[order[i - 1]] >= merge_tol)
            merged.emplace_back();
        merged.back().push_back(order[i]);
    }
    for (auto& grp : merged) std::sort(grp.begin(), grp.end());
    return merged;
}

SflSolution dc_solve(const std::vector<double>& y_obs, const GroupPartition& p,
                     const SflConfig& config_in) {
    const SflConfig cfg = config_in.resolved(p.n);
    const std::size_t d = p.group_count();
    if (p.n0 <= d)
        throw insufficient_dof_error("SFL requires n0 > d(k): n0 = " + std::to_string(p.n0) +
                                     ", d = " + std::to_string(d));
    const GroupStats st = group_stats(y_obs, p);

    SflSolution sol;
    std::vector<double> beta = st.means();

    auto finalize = [&](const std::vector<double>& b) {
        sol.merged = extract_groups(b, cfg.group_merge_tol);
        sol.eta_grp = refit_eta(st, sol.merged);
        double ymax = 0.0;
        for (const auto v : y_obs) ymax = std::max(ymax, std::fabs(v));
        for (auto& v : sol.eta_grp) {
            if (std::fabs(v) > 10.0 * ymax) {
                sol.box_violation = true;
                v = std::clamp(v, -10.0 * ymax, 10.0 * ymax);
            }
        }
        sol.beta_grp.assign(d, 0.0);
        for (std::size_t m = 0; m < sol.merged.size(); ++m)
            for (const auto l : sol.merged[m]) sol.beta_grp[l] = sol.eta_grp[m];
        return sol;
    };

    if (st.rss_min() <= 0.0 || d == 1) {
        // Exact within-group fit (or a single group): the square-root loss is
        // non-differentiable at zero residual and the group means already
        // minimize the fit term, so return them directly.
        sol.degenerate_fit = st.rss_min() <= 0.0;
        sol.converged = true;
        sol.objective_trace.push_back(objective(st, beta, cfg.lambda1, cfg.lambda2));
        return finalize(beta);
    }

    const std::size_t npairs = kernels::pair_count(d);
    std::vector<double> g(d), w(d), tb(npairs), pvec(npairs), pold(npairs), nu(npairs, 0.0),
        scratch(npairs), adj(d);
    const BetaUpdate update(st, cfg.rho);

    sol.objective_trace.push_back(objective(st, beta, cfg.lambda1, cfg.lambda2));
    bool admm_clean = true;

    for (int s = 0; s < cfg.dc_max_iter; ++s) {
        s2_subgradient(beta, cfg.lambda1, cfg.lambda2, g);

        // ADMM on the convex subproblem, warm-started at the current iterate.
        std::vector<double> b = beta;
        kernels::pairwise_differences(b.data(), d, pvec.data());
        std::fill(nu.begin(), nu.end(), 0.0);
        double c_hint = std::sqrt(st.rss(b));
        admm_clean = false;
        for (int it = 0; it < cfg.admm_max_iter; ++it) {
            // w = g + T^T (rho p - nu)
            for (std::size_t i = 0; i < npairs; ++i) scratch[i] = cfg.rho * pvec[i] - nu[i];
            kernels::pairwise_adjoint(scratch.data(), d, adj.data());
            for (std::size_t l = 0; l < d; ++l) w[l] = g[l] + adj[l];
            b = update.solve(w, c_hint);
            c_hint = std::sqrt(st.rss(b));

            kernels::pairwise_differences(b.data(), d, tb.data());
            pold.swap(pvec);
            for (std::size_t i = 0; i < npairs; ++i) scratch[i] = tb[i] + nu[i] / cfg.rho;
            kernels::soft_threshold(scratch.data(), cfg.lambda1 / cfg.rho, pvec.data(), npairs);

            double primal = 0.0;
            for (std::size_t i = 0; i < npairs; ++i) {
                const double r = tb[i] - pvec[i];
                nu[i] += cfg.rho * r;
                primal = std::max(primal, std::fabs(r));
            }
            for (std::size_t i = 0; i < npairs; ++i) scratch[i] = pvec[i] - pold[i];
            kernels::pairwise_adjoint(scratch.data(), d, adj.data());
            double dual = 0.0;
            for (std::size_t l = 0; l < d; ++l) dual = std::max(dual, cfg.rho * std::fabs(adj[l]));
            sol.admm_primal_residual = primal;
            sol.admm_dual_residual = dual;
            if (primal < cfg.tol_primal && dual < cfg.tol_dual) {
                admm_clean = true;
                break;
            }
        }

        const double obj = objective(st, b, cfg.lambda1, cfg.lambda2);
        const double prev = sol.objective_trace.back();
        if (obj > prev + 1e-12 * (1.0 + std::fabs(prev))) {
            // Subproblem failed to descend; keep the previous iterate. This is
            // a converged stall when the inner solver was clean, otherwise a
            // genuine non-convergence.
            sol.converged = admm_clean;
            break;
        }
        beta = std::move(b);
        sol.objective_trace.push_back(std::min(obj, prev));
        if (prev - obj < cfg.tol_dc) {
            sol.converged = admm_clean;
            break;
        }
    }
    return finalize(beta);
}

AdetReport adet_sfl(const InterferenceGraph& g, const GroupPartition& p,
                    const SflSolution& solution, double alpha, Estimator estimator,
                    double boundary_eps) {
    if (p.n1 == 0) throw no_treated_nodes_error();
    if (!p.violations.empty())
        throw unmatched_treated_error(std::to_string(p.violations.size()) +
                                      " treated node(s) unmatched under this partition");
    const std::size_t M = solution.merged.size();
    if (p.n0 <= M)
        throw insufficient_dof_error("merged design leaves no residual dof");

    const double n1 = static_cast<double>(p.n1);
    std::vector<std::uint32_t> merged_of(p.group_count());
    std::vector<double> msize(M, 0.0);
    for (std::size_t m = 0; m < M; ++m)
        for (const auto l : solution.merged[m]) {
            merged_of[l] = static_cast<std::uint32_t>(m);
            msize[m] += static_cast<double>(p.group_size(l));
        }

    // Merged-design residual variance with dof n0 - M.
    double rss = 0.0;
    for (std::size_t l = 0; l < p.group_count(); ++l) {
        const double eta = solution.eta_grp[merged_of[l]];
        for (const auto id : p.group_members(l)) {
            const double r = g.outcome(id) - eta;
            rss += r * r;
        }
    }
    const double sigma2 = rss / static_cast<double>(p.n0 - M);

    std::vector<double> coef(M, 0.0); // v-tilde or u-tilde, scaled by n1 below
    double tau = 0.0, dr_term = 0.0;
    for (std::size_t t = 0; t < p.treated_nodes.size(); ++t) {
        const auto i = p.treated_nodes[t];
        const auto m = merged_of[p.treated_group[t]];
        tau += g.outcome(i) - solution.eta_grp[m];
        coef[m] += 1.0;
    }
    if (estimator == Estimator::doubly_robust) {
        const auto& prop = g.p();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (prop[i] < boundary_eps || prop[i] > 1.0 - boundary_eps)
                throw propensity_at_boundary_error("propensity at node " + std::to_string(i) +
                                                   " violates the overlap margin");
        for (std::size_t l = 0; l < p.group_count(); ++l) {
            const auto m = merged_of[l];
            const double eta = solution.eta_grp[m];
            for (const auto id : p.group_members(l)) {
                const double w = prop[id] / (1.0 - prop[id]);
                tau -= w * (g.outcome(id) - eta);
                coef[m] -= w;
                dr_term += w * w;
            }
        }
        dr_term /= n1 * n1;
    }
    tau /= n1;

    double quad = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double v = coef[m] / n1;
        quad += v * v / msize[m];
    }

    AdetReport r;
    r.tau_hat = tau;
    r.alpha = alpha;
    r.method = Method::sfl;
    r.estimator = estimator;
    r.k = p.k;
    r.w_group_quad = quad;
    r.w_treated = 1.0 / n1;
    r.w_dr_propensity = dr_term;
    r.sigma2_hat = sigma2;
    r.group_count_used = M;
    r.kappa_d32 = kappa_diagnostic(p);
    r.violations = p.violations;
    const double w = std::sqrt((quad + 1.0 / n1 + dr_term) * sigma2);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    r.ci_lo = tau - z * w;
    r.ci_hi = tau + z * w;
    return r;
}

double restricted_eigenvalue_diag(const std::vector<double>& y_obs, const GroupPartition& p,
                                  const std::vector<std::vector<std::uint32_t>>& merged) {
    const GroupStats st = group_stats(y_obs, p);
    const std::size_t M = merged.size();
    const std::vector<double> eta = refit_eta(st, merged);

    std::vector<double> msize(M, 0.0), w(M, 0.0);
    double rss = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        for (const auto l : merged[m]) {
            msize[m] += st.m[l];
            w[m] += st.s[l] - st.m[l] * eta[m];
            rss += st.ssq[l] + eta[m] * (st.m[l] * eta[m] - 2.0 * st.s[l]);
        }
    }
    if (rss <= 0.0)
        throw degenerate_residual_error("refit residual is zero; y lies in the design span");

    const double n0 = static_cast<double>(st.n0);
    const double scale = 4.0 * n0 * n0 * std::pow(rss / (2.0 * n0), 1.5);
    std::vector<double> a(M * M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < M; ++j) a[i * M + j] = -w[i] * w[j] / scale;
        a[i * M + i] += msize[i] * rss / scale;
    }
    return min_eigenvalue_jacobi(std::move(a), M);
}

} // namespace hnci
