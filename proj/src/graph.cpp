#include "hnci/graph.hpp"

#include <algorithm>
#include <cmath>

namespace hnci {

InterferenceGraph InterferenceGraph::build(
    std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
    std::vector<std::uint8_t> z, std::vector<double> y, std::vector<double> p) {
    if (z.size() != n || y.size() != n || p.size() != n)
        throw schema_error("node attribute vectors must have length n");
    InterferenceGraph g;
    g.n_ = n;
    g.z_ = std::move(z);
    g.y_ = std::move(y);
    g.p_ = std::move(p);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.z_[i] > 1) throw schema_error("treatment must be 0/1 at node " + std::to_string(i));
        if (!(g.p_[i] > 0.0) || !(g.p_[i] < 1.0) || !std::isfinite(g.p_[i]))
            throw schema_error("propensity must lie strictly in (0,1) at node " +
                               std::to_string(i));
        if (!std::isfinite(g.y_[i]))
            throw schema_error("outcome must be finite at node " + std::to_string(i));
        g.n1_ += g.z_[i];
    }

    auto topo = std::make_shared<Topology>();
    std::vector<std::size_t> deg(n, 0);
    for (const auto& [u, v] : edges) {
        if (u >= n || v >= n)
            throw schema_error("edge endpoint out of range: (" + std::to_string(u) + "," +
                               std::to_string(v) + ")");
        if (u == v) throw schema_error("self loop at node " + std::to_string(u));
        ++deg[u];
        ++deg[v];
    }
    topo->offsets.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) topo->offsets[i + 1] = topo->offsets[i] + deg[i];
    topo->adj.resize(topo->offsets[n]);
    std::vector<std::size_t> cursor(topo->offsets.begin(), topo->offsets.end() - 1);
    for (const auto& [u, v] : edges) {
        topo->adj[cursor[u]++] = v;
        topo->adj[cursor[v]++] = u;
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto b = topo->adj.begin() + static_cast<std::ptrdiff_t>(topo->offsets[i]);
        auto e = topo->adj.begin() + static_cast<std::ptrdiff_t>(topo->offsets[i + 1]);
        std::sort(b, e);
        if (std::adjacent_find(b, e) != e)
            throw schema_error("duplicate edge incident to node " + std::to_string(i));
    }
    g.topo_ = std::move(topo);
    return g;
}

InterferenceGraph InterferenceGraph::with_outcomes(std::vector<double> y) const {
    if (y.size() != n_) throw schema_error("outcome vector must have length n");
    for (const auto v : y)
        if (!std::isfinite(v)) throw schema_error("outcome must be finite");
    InterferenceGraph g = *this;
    g.y_ = std::move(y);
    return g;
}

void InterferenceGraph::validate() const {
    for (std::size_t i = 0; i < n_; ++i) {
        for (const auto j : neighbors(i)) {
            if (j == i) throw schema_error("self loop at node " + std::to_string(i));
            const auto nb = neighbors(j);
            if (!std::binary_search(nb.begin(), nb.end(), static_cast<std::uint32_t>(i)))
                throw schema_error("adjacency not symmetric at edge (" + std::to_string(i) + "," +
                                   std::to_string(j) + ")");
        }
        const auto nb = neighbors(i);
        if (std::adjacent_find(nb.begin(), nb.end()) != nb.end())
            throw schema_error("duplicate edge incident to node " + std::to_string(i));
    }
}

DepthProfile bfs_depth_profile(const InterferenceGraph& g, std::uint32_t ego, std::size_t k_cap,
                               BfsWorkspace* ws) {
    if (ego >= g.size()) throw error("BFS ego out of range");
    DepthProfile profile;
    profile.ego = ego;
    if (k_cap == 0) {
        profile.complete = g.degree(ego) == 0;
        return profile;
    }

    BfsWorkspace local;
    if (!ws) ws = &local;
    ws->reserve(g.size());
    if (++ws->epoch_ == 0) { // stamp wrap-around
        std::fill(ws->stamp_.begin(), ws->stamp_.end(), 0);
        ws->epoch_ = 1;
    }
    const std::uint32_t epoch = ws->epoch_;
    auto& stamp = ws->stamp_;
    auto& frontier = ws->frontier_;
    auto& next = ws->next_;
    frontier.clear();
    next.clear();

    stamp[ego] = epoch;
    frontier.push_back(ego);
    std::size_t depth = 0;
    while (!frontier.empty() && depth < k_cap) {
        ++depth;
        next.clear();
        std::uint32_t total = 0, treated = 0;
        for (const auto u : frontier) {
            for (const auto v : g.neighbors(u)) {
                if (stamp[v] == epoch) continue;
                stamp[v] = epoch;
                next.push_back(v);
                ++total;
                treated += g.treated(v);
            }
        }
        if (total == 0) break;
        profile.levels.emplace_back(total, treated);
        frontier.swap(next);
    }
    // Saturated if the last processed frontier had no unvisited neighbors.
    profile.complete = profile.max_depth() < k_cap;
    if (!profile.complete) {
        bool more = false;
        for (const auto u : frontier) {
            for (const auto v : g.neighbors(u))
                if (stamp[v] != epoch) {
                    more = true;
                    break;
                }
            if (more) break;
        }
        profile.complete = !more;
    }
    return profile;
}

std::string FeatureKey::to_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(entries[i].first);
        if (entries[i].second != 1) s += "/" + std::to_string(entries[i].second);
    }
    s += ")";
    return s;
}

ExposureMapping ExposureMapping::treated_count_bucket(long long bucket_width) {
    if (bucket_width < 1) throw schema_error("bucket width must be a positive integer");
    ExposureMapping m;
    m.kind_ = Kind::treated_count_bucket;
    m.bucket_width_ = bucket_width;
    m.name_ = "count-bucket(" + std::to_string(bucket_width) + ")";
    return m;
}

ExposureMapping ExposureMapping::treated_proportion_bucket(double step) {
    if (!(step > 0.0) || !(step <= 1.0)) throw schema_error("step must lie in (0,1]");
    ExposureMapping m;
    m.kind_ = Kind::treated_proportion_bucket;
    m.step_ = step;
    m.name_ = "prop-bucket(" + std::to_string(step) + ")";
    return m;
}

ExposureMapping ExposureMapping::raw_treated_proportion() {
    ExposureMapping m;
    m.kind_ = Kind::raw_treated_proportion;
    m.name_ = "raw";
    return m;
}

ExposureMapping ExposureMapping::custom(CustomFn fn, std::string name) {
    ExposureMapping m;
    m.kind_ = Kind::custom;
    m.custom_ = std::move(fn);
    m.name_ = std::move(name);
    return m;
}

std::pair<long long, long long> ExposureMapping::entry(long long treated, long long total,
                                                       int depth) const {
    switch (kind_) {
        case Kind::treated_count_bucket:
            return {treated / bucket_width_, 1};
        case Kind::treated_proportion_bucket: {
            if (total == 0) return {0, 1}; // 0/0 = 0 convention
            // floor((t/m)/s); the epsilon absorbs representation error of s so
            // exact multiples (e.g. (1/20)/0.05) do not round down.
            const double q = static_cast<double>(treated) / (static_cast<double>(total) * step_);
            return {static_cast<long long>(std::floor(q + 1e-9)), 1};
        }
        case Kind::raw_treated_proportion: {
            if (total == 0 || treated == 0) return {0, 1};
            const long long g = std::gcd(treated, total);
            return {treated / g, total / g};
        }
        case Kind::custom:
            return {custom_(treated, total, depth), 1};
    }
    return {0, 1};
}

FeatureKey feature_key(const DepthProfile& profile, const ExposureMapping& mapping,
                       std::size_t k) {
    if (k > profile.max_depth() && !profile.complete)
        throw error("profile too shallow for requested k; raise the BFS cap");
    FeatureKey key;
    key.entries.reserve(k);
    for (std::size_t d = 1; d <= k; ++d) {
        long long total = 0, treated = 0;
        if (d <= profile.max_depth()) {
            total = profile.levels[d - 1].first;
            treated = profile.levels[d - 1].second;
        }
        key.entries.push_back(mapping.entry(treated, total, static_cast<int>(d)));
    }
    return key;
}

double example_interference_value(const FeatureKey& key) {
    double v = 0.0;
    double w = 0.5;
    for (const auto& [num, den] : key.entries) {
        v += w * static_cast<double>(num) / static_cast<double>(den);
        w *= 0.5;
    }
    return v;
}

} // namespace hnci
