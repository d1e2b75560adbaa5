#pragma once

#include <cstdint>
#include <vector>

#include "hnci/estimators.hpp"
#include "hnci/partition.hpp"

namespace hnci {

// Tuning for the square-root fused clipped Lasso solved by DC programming
// with an ADMM inner solver. Negative lambda/merge values mean "resolve from
// the network size": lambda1 = lambda2 = (1/30)/sqrt(n), merge tol lambda2/2.
struct SflConfig {
    double lambda1 = -1.0;
    double lambda2 = -1.0;
    double rho = 1.0;
    int dc_max_iter = 50;
    int admm_max_iter = 2000;
    double tol_primal = 1e-8;
    double tol_dual = 1e-8;
    double tol_dc = 1e-8;
    double group_merge_tol = -1.0;

    static SflConfig defaults(std::size_t n_total);
    // Fills any negative field from n_total.
    SflConfig resolved(std::size_t n_total) const;
};

struct SflSolution {
    std::vector<double> beta_grp;                // length d(k); exact merged values after refit
    std::vector<std::vector<std::uint32_t>> merged; // partition of group indices
    std::vector<double> eta_grp;                 // length M, distinct values (OLS refit)
    std::vector<double> objective_trace;         // per accepted DC iteration, non-increasing
    bool converged = false;
    bool degenerate_fit = false; // residual hit zero; OLS means returned
    bool box_violation = false;  // implicit-boundedness box was active
    double admm_primal_residual = 0.0; // ||T beta - p||_inf at the last inner solve
    double admm_dual_residual = 0.0;
};

// Objective of the square-root fused clipped Lasso at beta. y_obs is aligned
// with partition.members (use GroupPartition::gather).
double sfl_objective(const std::vector<double>& beta, const std::vector<double>& y_obs,
                     const GroupPartition& p, double lambda1, double lambda2);

SflSolution dc_solve(const std::vector<double>& y_obs, const GroupPartition& p,
                     const SflConfig& config);

// Single-linkage merge of coefficient values: sorted adjacent gaps below
// merge_tol collapse into one group.
std::vector<std::vector<std::uint32_t>> extract_groups(const std::vector<double>& beta_grp,
                                                       double merge_tol);

// OR/DR reports on the merged design D_G with Gram diag(merged untreated
// sizes) and dof n0 - M.
AdetReport adet_sfl(const InterferenceGraph& g, const GroupPartition& p,
                    const SflSolution& solution, double alpha, Estimator estimator,
                    double boundary_eps = 1e-6);

// Smallest eigenvalue of the square-root-loss curvature restricted to the
// merged design, evaluated at the OLS refit residual. Diagnostic for the
// restricted-eigenvalue condition; compare against lambda1/lambda2*(2M*+1).
double restricted_eigenvalue_diag(const std::vector<double>& y_obs, const GroupPartition& p,
                                  const std::vector<std::vector<std::uint32_t>>& merged);

} // namespace hnci
