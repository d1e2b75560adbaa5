#pragma once

#include <cstdint>
#include <vector>

#include "hnci/graph.hpp"

namespace hnci {

// Exposure-group partition of the untreated nodes at neighborhood size k,
// plus the treated-node matching. Groups are ordered lexicographically by
// feature key, which fixes the column indexing for all downstream algebra;
// the indicator design X_k is never materialized, only its group structure
// (X_k^T X_k is diagonal with the group sizes).
struct GroupPartition {
    int k = 0;
    std::size_t n = 0;   // total nodes in the source graph
    std::size_t n0 = 0;  // untreated
    std::size_t n1 = 0;  // treated

    std::vector<FeatureKey> keys;              // one per group, ascending
    std::vector<std::size_t> offsets;          // d+1, segments into members
    std::vector<std::uint32_t> members;        // untreated node ids, grouped
    std::vector<std::uint32_t> treated_nodes;  // matched treated node ids
    std::vector<std::uint32_t> treated_group;  // parallel group index
    std::vector<std::uint32_t> violations;     // treated ids whose key is not in E_hat_k
    std::vector<std::size_t> all_member_counts; // |E_{k,l}| = untreated + matched treated

    std::size_t group_count() const { return keys.size(); }
    std::size_t group_size(std::size_t l) const { return offsets[l + 1] - offsets[l]; }
    std::span<const std::uint32_t> group_members(std::size_t l) const {
        return {members.data() + offsets[l], group_size(l)};
    }

    // Group index of an untreated node, -1 otherwise. Size n.
    std::vector<std::int32_t> untreated_group_of;

    // Outcomes (or any per-node values) gathered into member order.
    std::vector<double> gather(const std::vector<double>& node_values) const;
    // Inverse scatter into a node-indexed vector (treated entries untouched).
    void scatter(const std::vector<double>& member_values, std::vector<double>& node_values) const;
};

GroupPartition build_partition(const InterferenceGraph& g, const ExposureMapping& mapping, int k);

// True iff every group of the finer partition is contained in one group of
// the coarser partition. Inputs must come from the same graph.
bool refinement_check(const GroupPartition& coarse, const GroupPartition& fine);

// kappa * d(k)^{3/2} with kappa = max_l 1/|S_{k,l}|; large values signal that
// the CI asymptotics are strained.
double kappa_diagnostic(const GroupPartition& p);

// Grouping of ALL n nodes by feature key (used by the pooled design, whose
// augmented matrix is [z X_tilde_k] over every node).
struct FullGroups {
    int k = 0;
    std::size_t n = 0;
    std::vector<FeatureKey> keys;
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> members;
    std::vector<std::uint32_t> group_of; // size n

    std::size_t group_count() const { return keys.size(); }
    std::size_t group_size(std::size_t l) const { return offsets[l + 1] - offsets[l]; }
};

FullGroups build_full_groups(const InterferenceGraph& g, const ExposureMapping& mapping, int k);

} // namespace hnci
