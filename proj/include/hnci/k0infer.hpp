#pragma once

#include <cstdint>
#include <vector>

#include "hnci/partition.hpp"
#include "hnci/rng.hpp"

namespace hnci {

// Repro-samples inference for the interference neighborhood size on the
// untreated nodes. All vectors are node-indexed (length n); only untreated
// entries are read, gathered per partition.

struct K0Config {
    int k_max = 5; // model grid is k = 0..k_max
    int B = 200;   // Monte Carlo copies for the candidate set
    int J = 100;   // Monte Carlo copies per F-hat estimate
    std::vector<double> lambda_grid;       // empty: auto geometric grid
    std::vector<double> lambda_prime_grid; // empty: same auto grid
    double alpha = 0.05;
    std::uint64_t seed = 0;
    // Keep every grid lambda in Lambda_b instead of the BIC-filtered subset.
    bool permissive_lambda = false;
};

struct K0ConfidenceSet {
    std::vector<int> candidate_set; // S_B, ascending
    std::vector<int> retained;      // subset with F-hat >= alpha
    std::vector<double> f_hat;      // per candidate k: F-hat_k(k_hat_obs | w_obs)
    std::vector<std::vector<double>> p_hat; // per candidate k: repro mass over candidate_set
    int k_hat_obs = 0;
    int k_alpha_star = -1; // max retained; -1 when retained is empty
    std::vector<int> exact_fit; // candidate k with b_k = 0, retained by convention
    bool degenerate_repro = false;
};

// Partitions for k = 0..k_max under one mapping.
std::vector<GroupPartition> build_partitions(const InterferenceGraph& g,
                                             const ExposureMapping& mapping, int k_max);

struct PenalizedFit {
    int k_hat = 0;
    bool degenerate = false;      // some (I - H_k) u* vanished
    std::vector<double> values;   // per k: min over (beta, sigma) of the augmented fit
};

// For each k the inner minimum over (beta, sigma) is the squared residual of
// projecting y onto span(X_k, u*): ||(I-H_k)y||^2 - (r_k^T y)^2 / ||r_k||^2
// with r_k = (I-H_k)u*. Returns argmin_k of value + lambda*k, ties to the
// smallest k.
PenalizedFit penalized_fit_with_repro(const std::vector<double>& y,
                                      const std::vector<GroupPartition>& partitions,
                                      const std::vector<double>& u_star, double lambda);

std::vector<int> build_candidate_set(const std::vector<double>& y,
                                     const std::vector<GroupPartition>& partitions,
                                     const K0Config& config);

// Conditional repro sample preserving the sufficient statistics of model k:
// H_k y* = H_k y and ||(I-H_k) y*|| = ||(I-H_k) y|| exactly. Throws
// exact_fit_error when the observed residual is zero.
std::vector<double> conditional_repro_sample(const std::vector<double>& y,
                                             const GroupPartition& partition_k, Rng& rng);

K0ConfidenceSet confidence_set(const std::vector<double>& y,
                               const std::vector<GroupPartition>& partitions,
                               const std::vector<int>& candidate_set, const K0Config& config);

// BIC over fitted models: argmin n0*log(rss/n0) + df*log(n0); near-ties go to
// the smaller df.
std::size_t bic_select(const std::vector<double>& rss_by_model, std::size_t n0,
                       const std::vector<std::size_t>& df_by_model);
double bic_value(double rss, std::size_t n0, std::size_t df);

// The lambda'-penalized nuclear statistic restricted to the candidate set,
// with the information-criterion stage applied identically to observed and
// repro data.
int nuclear_statistic(const std::vector<double>& y,
                      const std::vector<GroupPartition>& partitions,
                      const std::vector<int>& candidate_set,
                      const std::vector<double>& lambda_prime_grid);

// Default geometric penalty grid spanning sigma-hat^2 up to the feasibility
// scale estimated from the fitted models.
std::vector<double> auto_lambda_grid(const std::vector<double>& y,
                                     const std::vector<GroupPartition>& partitions);

} // namespace hnci
