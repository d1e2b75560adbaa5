#include "hnci/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hnci {

namespace {

std::vector<FeatureKey> keys_for_all_nodes(const InterferenceGraph& g,
                                           const ExposureMapping& mapping, int k) {
    std::vector<FeatureKey> keys(g.size());
    BfsWorkspace ws;
    for (std::uint32_t i = 0; i < g.size(); ++i)
        keys[i] = feature_key(bfs_depth_profile(g, i, static_cast<std::size_t>(k), &ws), mapping,
                              static_cast<std::size_t>(k));
    return keys;
}

} // namespace

std::vector<double> GroupPartition::gather(const std::vector<double>& node_values) const {
    std::vector<double> out(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) out[i] = node_values[members[i]];
    return out;
}

void GroupPartition::scatter(const std::vector<double>& member_values,
                             std::vector<double>& node_values) const {
    for (std::size_t i = 0; i < members.size(); ++i) node_values[members[i]] = member_values[i];
}

GroupPartition build_partition(const InterferenceGraph& g, const ExposureMapping& mapping, int k) {
    if (g.untreated_count() == 0) throw all_treated_error();
    const auto keys = keys_for_all_nodes(g, mapping, k);

    // std::map gives the lexicographic group order directly.
    std::map<FeatureKey, std::vector<std::uint32_t>> groups;
    for (std::uint32_t i = 0; i < g.size(); ++i)
        if (!g.treated(i)) groups[keys[i]].push_back(i);

    GroupPartition p;
    p.k = k;
    p.n = g.size();
    p.n0 = g.untreated_count();
    p.n1 = g.treated_count();
    p.keys.reserve(groups.size());
    p.offsets.reserve(groups.size() + 1);
    p.members.reserve(p.n0);
    p.offsets.push_back(0);
    p.untreated_group_of.assign(g.size(), -1);
    for (auto& [key, ids] : groups) {
        const auto l = static_cast<std::int32_t>(p.keys.size());
        p.keys.push_back(key);
        for (const auto id : ids) {
            p.members.push_back(id);
            p.untreated_group_of[id] = l;
        }
        p.offsets.push_back(p.members.size());
    }
    p.all_member_counts.assign(p.group_count(), 0);
    for (std::size_t l = 0; l < p.group_count(); ++l) p.all_member_counts[l] = p.group_size(l);

    for (std::uint32_t i = 0; i < g.size(); ++i) {
        if (!g.treated(i)) continue;
        const auto it = std::lower_bound(p.keys.begin(), p.keys.end(), keys[i]);
        if (it == p.keys.end() || !(*it == keys[i])) {
            p.violations.push_back(i);
            continue;
        }
        const auto l = static_cast<std::uint32_t>(it - p.keys.begin());
        p.treated_nodes.push_back(i);
        p.treated_group.push_back(l);
        ++p.all_member_counts[l];
    }
    return p;
}

bool refinement_check(const GroupPartition& coarse, const GroupPartition& fine) {
    if (coarse.n != fine.n || coarse.n0 != fine.n0)
        throw mismatched_inputs_error("partitions come from different graphs");
    for (std::size_t i = 0; i < coarse.untreated_group_of.size(); ++i)
        if ((coarse.untreated_group_of[i] < 0) != (fine.untreated_group_of[i] < 0))
            throw mismatched_inputs_error("partitions disagree on the untreated node set");
    for (std::size_t l = 0; l < fine.group_count(); ++l) {
        const auto mem = fine.group_members(l);
        const auto g0 = coarse.untreated_group_of[mem.front()];
        for (const auto id : mem)
            if (coarse.untreated_group_of[id] != g0) return false;
    }
    return true;
}

double kappa_diagnostic(const GroupPartition& p) {
    std::size_t min_size = p.n0;
    for (std::size_t l = 0; l < p.group_count(); ++l) min_size = std::min(min_size, p.group_size(l));
    const double d = static_cast<double>(p.group_count());
    return d * std::sqrt(d) / static_cast<double>(min_size);
}

FullGroups build_full_groups(const InterferenceGraph& g, const ExposureMapping& mapping, int k) {
    const auto keys = keys_for_all_nodes(g, mapping, k);
    std::map<FeatureKey, std::vector<std::uint32_t>> groups;
    for (std::uint32_t i = 0; i < g.size(); ++i) groups[keys[i]].push_back(i);

    FullGroups f;
    f.k = k;
    f.n = g.size();
    f.group_of.assign(g.size(), 0);
    f.offsets.push_back(0);
    for (auto& [key, ids] : groups) {
        const auto l = static_cast<std::uint32_t>(f.keys.size());
        f.keys.push_back(key);
        for (const auto id : ids) {
            f.members.push_back(id);
            f.group_of[id] = l;
        }
        f.offsets.push_back(f.members.size());
    }
    return f;
}

} // namespace hnci
