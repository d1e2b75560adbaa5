#pragma once

#include <string>
#include <vector>

#include "hnci/partition.hpp"

namespace hnci {

// OLS on the indicator design reduces to per-group means; sigma2_hat is the
// unbiased residual variance with dof = n0 - d(k).
struct OlsFit {
    std::vector<double> beta_hat; // group means, length d(k)
    double rss = 0.0;
    std::size_t dof = 0;
    double sigma2_hat = 0.0;
};

enum class Method { ols, sfl, pooled };
enum class Estimator { outcome_regression, doubly_robust };

std::string to_string(Method m);
std::string to_string(Estimator e);

struct AdetReport {
    double tau_hat = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    double alpha = 0.05;
    Method method = Method::ols;
    Estimator estimator = Estimator::outcome_regression;
    int k = 0;
    // w^2 = (group_quad + treated + dr_propensity) * sigma2_hat
    double w_group_quad = 0.0;
    double w_treated = 0.0;
    double w_dr_propensity = 0.0;
    double sigma2_hat = 0.0;
    std::size_t group_count_used = 0;
    double kappa_d32 = 0.0;
    std::vector<std::uint32_t> violations;

    double width() const { return ci_hi - ci_lo; }
};

// Inverse standard normal CDF. Acklam rational approximation refined by one
// Halley step against erfc; absolute error well under 1e-9 (documented
// because CI endpoints feed the acceptance tolerances).
double normal_quantile(double prob);

OlsFit ols_fit(const InterferenceGraph& g, const GroupPartition& p);

AdetReport adet_or(const InterferenceGraph& g, const GroupPartition& p, const OlsFit& fit,
                   double alpha);

// p_override injects externally estimated propensities (same length as the
// graph); by default the known per-node propensities are used.
AdetReport adet_dr(const InterferenceGraph& g, const GroupPartition& p, const OlsFit& fit,
                   double alpha, double boundary_eps = 1e-6,
                   const std::vector<double>* p_override = nullptr);

// Homogeneous-effect pooled OLS over all n nodes with the augmented design
// [z X_tilde_k]; exploits the arrow structure of the Gram matrix, so nothing
// dense is ever formed. sigma2 uses dof n - d(k) - 1.
AdetReport pooled_adet_ci(const InterferenceGraph& g, const ExposureMapping& mapping, int k,
                          double alpha);
// Overload for callers that reuse the all-node grouping across replications.
AdetReport pooled_adet_ci(const InterferenceGraph& g, const FullGroups& groups, double alpha);

} // namespace hnci
