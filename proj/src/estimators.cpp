#include "hnci/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace hnci {

std::string to_string(Method m) {
    switch (m) {
        case Method::ols: return "ols";
        case Method::sfl: return "sfl";
        case Method::pooled: return "pooled";
    }
    return "?";
}

std::string to_string(Estimator e) {
    return e == Estimator::outcome_regression ? "or" : "dr";
}

double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw error("normal_quantile requires prob in (0,1)");
    // Acklam coefficients.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double x;
    if (prob < plow) {
        const double q = std::sqrt(-2 * std::log(prob));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (prob <= phigh) {
        const double q = prob - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log(1 - prob));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    // One Halley step against the exact CDF via erfc.
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - prob;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x -= u / (1 + x * u / 2);
    return x;
}

OlsFit ols_fit(const InterferenceGraph& g, const GroupPartition& p) {
    const std::size_t d = p.group_count();
    if (p.n0 <= d)
        throw insufficient_dof_error("n0 = " + std::to_string(p.n0) + " groups = " +
                                     std::to_string(d) + ": residual dof would be <= 0");
    OlsFit fit;
    fit.beta_hat.resize(d);
    fit.rss = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        const auto mem = p.group_members(l);
        double s = 0.0;
        for (const auto id : mem) s += g.outcome(id);
        const double mean = s / static_cast<double>(mem.size());
        fit.beta_hat[l] = mean;
        for (const auto id : mem) {
            const double r = g.outcome(id) - mean;
            fit.rss += r * r;
        }
    }
    fit.dof = p.n0 - d;
    fit.sigma2_hat = fit.rss / static_cast<double>(fit.dof);
    return fit;
}

namespace {

void require_matched(const GroupPartition& p) {
    if (p.n1 == 0) throw no_treated_nodes_error();
    if (!p.violations.empty())
        throw unmatched_treated_error(std::to_string(p.violations.size()) +
                                      " treated node(s) have no untreated feature match "
                                      "(balanced-features violation); first offender: node " +
                                      std::to_string(p.violations.front()));
}

AdetReport finish_report(double tau, double group_quad, double treated_term, double dr_term,
                         double sigma2, double alpha, Method method, Estimator estimator,
                         const GroupPartition& p, std::size_t groups_used) {
    AdetReport r;
    r.tau_hat = tau;
    r.alpha = alpha;
    r.method = method;
    r.estimator = estimator;
    r.k = p.k;
    r.w_group_quad = group_quad;
    r.w_treated = treated_term;
    r.w_dr_propensity = dr_term;
    r.sigma2_hat = sigma2;
    r.group_count_used = groups_used;
    r.kappa_d32 = kappa_diagnostic(p);
    r.violations = p.violations;
    const double w = std::sqrt((group_quad + treated_term + dr_term) * sigma2);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    r.ci_lo = tau - z * w;
    r.ci_hi = tau + z * w;
    return r;
}

} // namespace

AdetReport adet_or(const InterferenceGraph& g, const GroupPartition& p, const OlsFit& fit,
                   double alpha) {
    require_matched(p);
    const std::size_t d = p.group_count();
    const double n1 = static_cast<double>(p.n1);

    std::vector<double> c(d, 0.0); // treated counts per matched group
    double tau = 0.0;
    for (std::size_t t = 0; t < p.treated_nodes.size(); ++t) {
        const auto i = p.treated_nodes[t];
        const auto l = p.treated_group[t];
        tau += g.outcome(i) - fit.beta_hat[l];
        c[l] += 1.0;
    }
    tau /= n1;

    double quad = 0.0; // v^T (X^T X)^{-1} v with diagonal Gram
    for (std::size_t l = 0; l < d; ++l) {
        const double v = c[l] / n1;
        quad += v * v / static_cast<double>(p.group_size(l));
    }
    return finish_report(tau, quad, 1.0 / n1, 0.0, fit.sigma2_hat, alpha, Method::ols,
                         Estimator::outcome_regression, p, d);
}

AdetReport adet_dr(const InterferenceGraph& g, const GroupPartition& p, const OlsFit& fit,
                   double alpha, double boundary_eps, const std::vector<double>* p_override) {
    require_matched(p);
    const std::size_t d = p.group_count();
    const double n1 = static_cast<double>(p.n1);
    const std::vector<double>& prop = p_override ? *p_override : g.p();
    if (prop.size() != g.size()) throw schema_error("propensity override has wrong length");

    for (std::size_t i = 0; i < g.size(); ++i)
        if (prop[i] < boundary_eps || prop[i] > 1.0 - boundary_eps)
            throw propensity_at_boundary_error("propensity at node " + std::to_string(i) +
                                               " violates the overlap margin " +
                                               std::to_string(boundary_eps));

    // u_l sums over ALL nodes carrying feature g_{k,l} (E_{k,l}), not only the
    // untreated members.
    std::vector<double> u(d, 0.0);
    double tau = 0.0, dr_term = 0.0;
    for (std::size_t t = 0; t < p.treated_nodes.size(); ++t) {
        const auto i = p.treated_nodes[t];
        const auto l = p.treated_group[t];
        tau += g.outcome(i) - fit.beta_hat[l];
        u[l] += 1.0;
    }
    for (std::size_t l = 0; l < d; ++l) {
        for (const auto i : p.group_members(l)) {
            const double w = prop[i] / (1.0 - prop[i]);
            tau -= w * (g.outcome(i) - fit.beta_hat[l]);
            u[l] -= w;
            dr_term += w * w;
        }
    }
    tau /= n1;
    dr_term /= n1 * n1;

    double quad = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        const double ul = u[l] / n1;
        quad += ul * ul / static_cast<double>(p.group_size(l));
    }
    return finish_report(tau, quad, 1.0 / n1, dr_term, fit.sigma2_hat, alpha, Method::ols,
                         Estimator::doubly_robust, p, d);
}

AdetReport pooled_adet_ci(const InterferenceGraph& g, const ExposureMapping& mapping, int k,
                          double alpha) {
    return pooled_adet_ci(g, build_full_groups(g, mapping, k), alpha);
}

AdetReport pooled_adet_ci(const InterferenceGraph& g, const FullGroups& f, double alpha) {
    const int k = f.k;
    const std::size_t n = g.size(), d = f.group_count();
    const std::size_t n1 = g.treated_count();
    if (n1 == 0) throw no_treated_nodes_error();
    if (n <= d + 1)
        throw insufficient_dof_error("pooled design leaves no residual dof: n = " +
                                     std::to_string(n) + ", d(k) = " + std::to_string(d));

    // Arrow-structured normal equations: with t_l = sum of z within group l,
    // N_l = group size, the Schur complement of the diagonal block is
    // ||(I - H_X) z||^2 = n1 - sum_l t_l^2 / N_l.
    std::vector<double> t(d, 0.0), ybar(d, 0.0);
    double zy = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        double s = 0.0;
        for (std::size_t idx = f.offsets[l]; idx < f.offsets[l + 1]; ++idx) {
            const auto i = f.members[idx];
            s += g.outcome(i);
            if (g.treated(i)) {
                t[l] += 1.0;
                zy += g.outcome(i);
            }
        }
        ybar[l] = s / static_cast<double>(f.group_size(l));
    }
    double schur = static_cast<double>(n1);
    double num = zy;
    for (std::size_t l = 0; l < d; ++l) {
        schur -= t[l] * t[l] / static_cast<double>(f.group_size(l));
        num -= t[l] * ybar[l];
    }
    if (schur <= 1e-9 * static_cast<double>(n1)) {
        // z lies (numerically) in the span of the indicators: every group is
        // pure. Report the first pure group.
        std::string offender = "all groups pure";
        for (std::size_t l = 0; l < d; ++l) {
            const auto nl = static_cast<double>(f.group_size(l));
            if (t[l] == 0.0 || t[l] == nl) {
                offender = "group " + std::to_string(l) + " (key " + f.keys[l].to_string() +
                           ") is entirely " + (t[l] == 0.0 ? "untreated" : "treated");
                break;
            }
        }
        throw rank_deficient_error("pooled design is rank deficient: " + offender);
    }
    const double tau = num / schur;

    double rss = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
        const double beta_l = ybar[l] - tau * t[l] / static_cast<double>(f.group_size(l));
        for (std::size_t idx = f.offsets[l]; idx < f.offsets[l + 1]; ++idx) {
            const auto i = f.members[idx];
            const double r = g.outcome(i) - beta_l - (g.treated(i) ? tau : 0.0);
            rss += r * r;
        }
    }
    const double sigma2 = rss / static_cast<double>(n - d - 1);

    AdetReport r;
    r.tau_hat = tau;
    r.alpha = alpha;
    r.method = Method::pooled;
    r.estimator = Estimator::outcome_regression;
    r.k = k;
    r.w_group_quad = 1.0 / schur; // e_1^T (D^T D)^{-1} e_1
    r.sigma2_hat = sigma2;
    r.group_count_used = d;
    const double w = std::sqrt(sigma2 / schur);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    r.ci_lo = tau - z * w;
    r.ci_hi = tau + z * w;
    return r;
}

} // namespace hnci
