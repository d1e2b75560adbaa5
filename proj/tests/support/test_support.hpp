#pragma once

// Shared fixtures and the dense-algebra reference used as the independent
// oracle: everything here materializes the indicator designs explicitly and
// goes through Eigen, deliberately avoiding the library's diagonal-Gram fast
// paths.

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "hnci/estimators.hpp"
#include "hnci/partition.hpp"
#include "hnci/rng.hpp"

namespace hnci_test {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

inline hnci::InterferenceGraph make_graph(std::size_t n, const std::vector<Edge>& edges,
                                          std::vector<std::uint8_t> z, std::vector<double> y,
                                          double p_const = 0.5) {
    return hnci::InterferenceGraph::build(n, edges, std::move(z), std::move(y),
                                          std::vector<double>(n, p_const));
}

inline std::vector<Edge> er_edges(std::size_t n, double p, hnci::Rng& rng) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.bernoulli(p))
                edges.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    return edges;
}

// Random graph with guaranteed treated and untreated nodes.
inline hnci::InterferenceGraph random_instance(std::size_t n, double edge_p, double treat_p,
                                               hnci::Rng& rng, double p_lo = 0.2,
                                               double p_hi = 0.8) {
    std::vector<std::uint8_t> z(n, 0);
    for (auto& v : z) v = rng.bernoulli(treat_p) ? 1 : 0;
    z[0] = 1;
    z[1] = 0;
    std::vector<double> y(n), p(n);
    for (auto& v : y) v = rng.normal();
    for (auto& v : p) v = rng.uniform(p_lo, p_hi);
    return hnci::InterferenceGraph::build(n, er_edges(n, edge_p, rng), std::move(z), std::move(y),
                                          std::move(p));
}

// Dense indicator design over the untreated nodes, column order = group order.
inline Eigen::MatrixXd dense_design(const hnci::GroupPartition& part) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(part.n0),
                                              static_cast<Eigen::Index>(part.group_count()));
    Eigen::Index row = 0;
    for (std::size_t l = 0; l < part.group_count(); ++l)
        for (std::size_t idx = part.offsets[l]; idx < part.offsets[l + 1]; ++idx, ++row)
            X(row, static_cast<Eigen::Index>(l)) = 1.0;
    return X;
}

inline Eigen::VectorXd member_vector(const hnci::GroupPartition& part,
                                     const std::vector<double>& node_values) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(part.n0));
    for (std::size_t i = 0; i < part.members.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = node_values[part.members[i]];
    return v;
}

struct DenseCiReference {
    double tau = 0.0;
    double w = 0.0; // half-width divisor of the normal quantile
    double sigma2 = 0.0;
};

// Fully dense evaluation of the OR/DR CI ingredients (explicit X, explicit
// Gram inverse, explicit hat matrix).
inline DenseCiReference dense_or_dr(const hnci::InterferenceGraph& g,
                                    const hnci::GroupPartition& part, bool doubly_robust) {
    const Eigen::MatrixXd X = dense_design(part);
    const Eigen::VectorXd y = member_vector(part, g.y());
    const Eigen::MatrixXd gram_inv = (X.transpose() * X).inverse();
    const Eigen::VectorXd beta = gram_inv * X.transpose() * y;
    const Eigen::MatrixXd H = X * gram_inv * X.transpose();
    const Eigen::VectorXd resid = y - H * y;
    const double n0 = static_cast<double>(part.n0);
    const double dref = static_cast<double>(part.group_count());
    const double sigma2 = y.dot(resid) / (n0 - dref);

    const double n1 = static_cast<double>(part.n1);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(part.group_count()));
    double tau = 0.0;
    for (std::size_t t = 0; t < part.treated_nodes.size(); ++t) {
        const auto i = part.treated_nodes[t];
        const auto l = part.treated_group[t];
        tau += g.outcome(i) - beta(static_cast<Eigen::Index>(l));
        v(static_cast<Eigen::Index>(l)) += 1.0 / n1;
    }
    double extra = 0.0;
    if (doubly_robust) {
        for (std::size_t l = 0; l < part.group_count(); ++l) {
            for (const auto id : part.group_members(l)) {
                const double wgt = g.propensity(id) / (1.0 - g.propensity(id));
                tau -= wgt * (g.outcome(id) - beta(static_cast<Eigen::Index>(l)));
                v(static_cast<Eigen::Index>(l)) -= wgt / n1;
                extra += wgt * wgt / (n1 * n1);
            }
        }
    }
    DenseCiReference ref;
    ref.tau = tau / n1;
    ref.sigma2 = sigma2;
    ref.w = std::sqrt((v.dot(gram_inv * v) + 1.0 / n1 + extra) * sigma2);
    return ref;
}

// Dense pooled-design reference: D = [z X_tilde] over all n nodes.
inline DenseCiReference dense_pooled(const hnci::InterferenceGraph& g,
                                     const hnci::FullGroups& groups) {
    const auto n = static_cast<Eigen::Index>(g.size());
    const auto d = static_cast<Eigen::Index>(groups.group_count());
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, d + 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        D(i, 0) = g.treated(static_cast<std::size_t>(i)) ? 1.0 : 0.0;
        D(i, 1 + static_cast<Eigen::Index>(groups.group_of[static_cast<std::size_t>(i)])) = 1.0;
        y(i) = g.outcome(static_cast<std::size_t>(i));
    }
    const Eigen::MatrixXd gram_inv = (D.transpose() * D).inverse();
    const Eigen::VectorXd theta = gram_inv * D.transpose() * y;
    const Eigen::VectorXd resid = y - D * theta;
    const double sigma2 =
        resid.squaredNorm() / (static_cast<double>(n) - static_cast<double>(d) - 1.0);
    DenseCiReference ref;
    ref.tau = theta(0);
    ref.sigma2 = sigma2;
    ref.w = std::sqrt(sigma2 * gram_inv(0, 0));
    return ref;
}

} // namespace hnci_test
