#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnci/errors.hpp"

namespace hnci {

// Undirected interference network over nodes 0..n-1 with per-node treatment,
// outcome and propensity. Immutable after construction; BFS over distinct
// egos is safe to run concurrently.
class InterferenceGraph {
public:
    InterferenceGraph() = default;

    // Builds from an undirected edge list and validates all invariants:
    // dense ids, no self loops, no duplicate edges, z binary, p in (0,1).
    static InterferenceGraph build(std::size_t n,
                                   const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                                   std::vector<std::uint8_t> z, std::vector<double> y,
                                   std::vector<double> p);

    std::size_t size() const { return n_; }
    std::span<const std::uint32_t> neighbors(std::size_t i) const {
        return {topo_->adj.data() + topo_->offsets[i], topo_->offsets[i + 1] - topo_->offsets[i]};
    }
    std::size_t degree(std::size_t i) const { return topo_->offsets[i + 1] - topo_->offsets[i]; }
    std::size_t edge_count() const { return topo_->adj.size() / 2; }

    bool treated(std::size_t i) const { return z_[i] != 0; }
    double outcome(std::size_t i) const { return y_[i]; }
    double propensity(std::size_t i) const { return p_[i]; }

    const std::vector<std::uint8_t>& z() const { return z_; }
    const std::vector<double>& y() const { return y_; }
    const std::vector<double>& p() const { return p_; }

    std::size_t treated_count() const { return n1_; }
    std::size_t untreated_count() const { return n_ - n1_; }

    // Copy with fresh outcomes; the adjacency is shared, so this is cheap and
    // the replication loops of the simulation harness amortize the topology.
    InterferenceGraph with_outcomes(std::vector<double> y) const;

    // Re-checks the structural invariants (used by the simulation harness
    // after generation).
    void validate() const;

private:
    struct Topology {
        std::vector<std::size_t> offsets; // n+1
        std::vector<std::uint32_t> adj;   // sorted per node
    };
    std::size_t n_ = 0;
    std::size_t n1_ = 0;
    std::shared_ptr<const Topology> topo_;
    std::vector<std::uint8_t> z_;
    std::vector<double> y_;
    std::vector<double> p_;
};

// Per-depth neighborhood counts of one ego: levels[d-1] = (total nodes,
// treated nodes) at depth d. `complete` means BFS exhausted the ego's
// component within the cap, so the profile saturates and deeper depths are
// empty by convention.
struct DepthProfile {
    std::uint32_t ego = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> levels; // (total, treated)
    bool complete = true;

    std::size_t max_depth() const { return levels.size(); }
};

// Scratch space so that the all-ego sweeps avoid O(n) clearing per BFS.
class BfsWorkspace {
public:
    void reserve(std::size_t n) {
        if (stamp_.size() < n) stamp_.assign(n, 0);
        frontier_.reserve(n);
        next_.reserve(n);
    }

private:
    friend DepthProfile bfs_depth_profile(const InterferenceGraph&, std::uint32_t, std::size_t,
                                          BfsWorkspace*);
    std::vector<std::uint32_t> stamp_;
    std::uint32_t epoch_ = 0;
    std::vector<std::uint32_t> frontier_, next_;
};

DepthProfile bfs_depth_profile(const InterferenceGraph& g, std::uint32_t ego, std::size_t k_cap,
                               BfsWorkspace* ws = nullptr);

// Canonical exposure feature: one exact value per depth. Integer-valued
// mappings use denominator 1; the raw-proportion mapping stores reduced
// fractions with the 0/0 = 0 convention encoded as 0/1. Exactness matters
// because keys drive hash-free ordered grouping.
struct FeatureKey {
    std::vector<std::pair<long long, long long>> entries; // (num, den), den >= 1

    friend bool operator==(const FeatureKey& a, const FeatureKey& b) {
        return a.entries == b.entries;
    }
    // Lexicographic by exact fraction value.
    friend bool operator<(const FeatureKey& a, const FeatureKey& b) {
        const std::size_t m = std::min(a.entries.size(), b.entries.size());
        for (std::size_t i = 0; i < m; ++i) {
            const auto [an, ad] = a.entries[i];
            const auto [bn, bd] = b.entries[i];
            const long long lhs = an * bd, rhs = bn * ad; // counts <= n, no overflow
            if (lhs != rhs) return lhs < rhs;
        }
        return a.entries.size() < b.entries.size();
    }
    std::string to_string() const;
};

// Registry of exposure mappings applied per depth; all built-ins are
// per-depth functions of (treated, total), which makes the nested-matching
// prefix property hold by construction.
class ExposureMapping {
public:
    enum class Kind { treated_count_bucket, treated_proportion_bucket, raw_treated_proportion, custom };
    using CustomFn = std::function<long long(long long treated, long long total, int depth)>;

    static ExposureMapping treated_count_bucket(long long bucket_width);
    static ExposureMapping treated_proportion_bucket(double step);
    static ExposureMapping raw_treated_proportion();
    static ExposureMapping custom(CustomFn fn, std::string name = "custom");

    Kind kind() const { return kind_; }
    long long bucket_width() const { return bucket_width_; }
    double step() const { return step_; }
    const std::string& name() const { return name_; }

    // Key entry for one depth; (0, 0) encodes an empty depth.
    std::pair<long long, long long> entry(long long treated, long long total, int depth) const;

private:
    Kind kind_ = Kind::raw_treated_proportion;
    long long bucket_width_ = 1;
    double step_ = 1.0;
    CustomFn custom_;
    std::string name_ = "raw";
};

// gamma_0 of the ego's k-hop labeled neighborhood. Depths past the profile
// are padded with the mapping's empty-depth value so keys at the same k are
// always length k; requires the profile to either cover depth k or be
// saturated.
FeatureKey feature_key(const DepthProfile& profile, const ExposureMapping& mapping, std::size_t k);

// Test/simulation helper: sum_j T_j / 2^j over rational proportion entries.
double example_interference_value(const FeatureKey& key);

} // namespace hnci
