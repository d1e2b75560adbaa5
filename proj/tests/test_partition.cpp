#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "support/test_support.hpp"

#include "hnci/partition.hpp"

using namespace hnci;
using hnci_test::make_graph;

TEST_CASE("k = 0 puts all untreated nodes in one group and matches every treated node") {
    Rng rng(1);
    const auto g = hnci_test::random_instance(25, 0.2, 0.4, rng);
    const auto p = build_partition(g, ExposureMapping::raw_treated_proportion(), 0);
    REQUIRE(p.group_count() == 1);
    CHECK(p.group_size(0) == g.untreated_count());
    CHECK(p.treated_nodes.size() == g.treated_count());
    CHECK(p.violations.empty());
    CHECK(p.all_member_counts[0] == g.size());
}

TEST_CASE("three-node path exposes a balanced-features violation") {
    // 0 - 1 - 2, node 1 treated: untreated keys at k=1 are (1); treated key (0).
    const auto g = make_graph(3, {{0, 1}, {1, 2}}, {0, 1, 0}, {0, 0, 0});
    const auto p = build_partition(g, ExposureMapping::raw_treated_proportion(), 1);
    REQUIRE(p.group_count() == 1);
    CHECK(p.keys[0].entries[0] == std::pair<long long, long long>{1, 1});
    CHECK(p.group_size(0) == 2);
    REQUIRE(p.violations.size() == 1);
    CHECK(p.violations[0] == 1);
    CHECK(p.treated_nodes.empty());
}

TEST_CASE("five-node star matches treated leaves to the untreated-leaf group") {
    // center 0 untreated, leaves 1..4 with 1,2 treated.
    const auto g = make_graph(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}, {0, 1, 1, 0, 0},
                              {0, 0, 0, 0, 0});
    const auto p = build_partition(g, ExposureMapping::raw_treated_proportion(), 1);
    REQUIRE(p.group_count() == 2); // leaf key (0) and center key (1/2)
    CHECK(p.keys[0].entries[0] == std::pair<long long, long long>{0, 1});
    CHECK(p.keys[1].entries[0] == std::pair<long long, long long>{1, 2});
    CHECK(p.group_size(0) == 2); // untreated leaves 3, 4
    CHECK(p.group_size(1) == 1); // center
    REQUIRE(p.treated_nodes.size() == 2);
    CHECK(p.treated_group[0] == 0);
    CHECK(p.treated_group[1] == 0);
    CHECK(p.violations.empty());
    CHECK(p.all_member_counts[0] == 4);
    CHECK(p.all_member_counts[1] == 1);
}

TEST_CASE("all-treated graph is rejected") {
    const auto g = make_graph(2, {{0, 1}}, {1, 1}, {0, 0});
    CHECK_THROWS_AS(build_partition(g, ExposureMapping::raw_treated_proportion(), 1),
                    all_treated_error);
}

TEST_CASE("groups are ordered lexicographically and sizes add up") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = hnci_test::random_instance(60, 0.1, 0.3, rng);
        const auto p = build_partition(g, ExposureMapping::raw_treated_proportion(), 2);
        CHECK(std::is_sorted(p.keys.begin(), p.keys.end()));
        std::size_t total = 0;
        for (std::size_t l = 0; l < p.group_count(); ++l) {
            CHECK(p.group_size(l) > 0);
            total += p.group_size(l);
        }
        CHECK(total == g.untreated_count());
        // sum over groups of matched treated equals matched count
        std::size_t matched = 0;
        for (std::size_t l = 0; l < p.group_count(); ++l)
            matched += p.all_member_counts[l] - p.group_size(l);
        CHECK(matched == p.treated_nodes.size());
        CHECK(matched + p.violations.size() == g.treated_count());
    }
}

TEST_CASE("refinement holds between consecutive k for nested mappings") {
    Rng rng(3);
    const auto m = ExposureMapping::treated_count_bucket(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 20 + static_cast<std::size_t>(rng.uniform() * 40);
        const auto g = hnci_test::random_instance(n, rng.uniform(0.05, 0.25), 0.3, rng);
        const auto p0 = build_partition(g, m, 0);
        const auto p1 = build_partition(g, m, 1);
        const auto p2 = build_partition(g, m, 2);
        CHECK(refinement_check(p0, p1));
        CHECK(refinement_check(p1, p2));
        CHECK(refinement_check(p0, p2));
        // d(k) non-decreasing in k
        CHECK(p0.group_count() <= p1.group_count());
        CHECK(p1.group_count() <= p2.group_count());
    }
}

TEST_CASE("a corrupted fine partition fails the refinement check") {
    Rng rng(4);
    // Find an instance with a fine group of size >= 2 living in a different
    // coarse group than some other fine group; moving one node across then
    // makes that fine group straddle coarse groups.
    for (int attempt = 0; attempt < 100; ++attempt) {
        const auto g = hnci_test::random_instance(30, 0.15, 0.3, rng);
        const auto coarse = build_partition(g, ExposureMapping::treated_count_bucket(1), 1);
        auto fine = build_partition(g, ExposureMapping::treated_count_bucket(1), 2);
        std::size_t a = 0, b = 0;
        bool found = false;
        for (std::size_t l1 = 0; !found && l1 < fine.group_count(); ++l1) {
            if (fine.group_size(l1) < 2) continue;
            for (std::size_t l2 = 0; !found && l2 < fine.group_count(); ++l2) {
                if (l1 == l2) continue;
                const auto u = fine.group_members(l1).front();
                const auto v = fine.group_members(l2).front();
                if (coarse.untreated_group_of[u] != coarse.untreated_group_of[v]) {
                    a = fine.offsets[l1];
                    b = fine.offsets[l2];
                    found = true;
                }
            }
        }
        if (!found) continue;
        CHECK(refinement_check(coarse, fine));
        std::swap(fine.members[a], fine.members[b]);
        CHECK_FALSE(refinement_check(coarse, fine));
        return;
    }
    FAIL("no suitable instance found");
}

TEST_CASE("refinement rejects partitions from different graphs") {
    Rng rng(5);
    const auto g1 = hnci_test::random_instance(20, 0.2, 0.3, rng);
    const auto g2 = hnci_test::random_instance(25, 0.2, 0.3, rng);
    const auto p1 = build_partition(g1, ExposureMapping::raw_treated_proportion(), 1);
    const auto p2 = build_partition(g2, ExposureMapping::raw_treated_proportion(), 1);
    CHECK_THROWS_AS(refinement_check(p1, p2), mismatched_inputs_error);
}

TEST_CASE("kappa diagnostic arithmetic") {
    GroupPartition p;
    p.n0 = 400;
    p.keys.resize(4);
    p.offsets = {0, 100, 200, 300, 400};
    p.members.resize(400);
    CHECK(kappa_diagnostic(p) == doctest::Approx(0.08));

    GroupPartition single;
    single.n0 = 77;
    single.keys.resize(1);
    single.offsets = {0, 77};
    single.members.resize(77);
    CHECK(kappa_diagnostic(single) == doctest::Approx(1.0 / 77.0));

    GroupPartition warn;
    warn.n0 = 100;
    warn.keys.resize(9);
    warn.offsets = {0, 1, 20, 40, 50, 60, 70, 80, 90, 100};
    warn.members.resize(100);
    CHECK(kappa_diagnostic(warn) == doctest::Approx(27.0));
}

TEST_CASE("partition is invariant under node relabeling") {
    Rng rng(6);
    const std::size_t n = 30;
    const auto edges = hnci_test::er_edges(n, 0.2, rng);
    std::vector<std::uint8_t> z(n);
    std::vector<double> y(n), p(n, 0.4);
    for (auto& v : z) v = rng.bernoulli(0.3) ? 1 : 0;
    z[0] = 0;
    for (auto& v : y) v = rng.normal();
    const auto g = InterferenceGraph::build(n, edges, z, y, p);

    // Relabel nodes by a random permutation.
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform() * double(i))]);
    std::vector<hnci_test::Edge> pedges;
    for (const auto& [u, v] : edges) pedges.emplace_back(perm[u], perm[v]);
    std::vector<std::uint8_t> pz(n);
    std::vector<double> py(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
        pz[perm[i]] = z[i];
        py[perm[i]] = y[i];
        pp[perm[i]] = p[i];
    }
    const auto gp = InterferenceGraph::build(n, pedges, pz, py, pp);

    const auto m = ExposureMapping::raw_treated_proportion();
    const auto part = build_partition(g, m, 2);
    const auto partp = build_partition(gp, m, 2);
    REQUIRE(part.group_count() == partp.group_count());
    for (std::size_t l = 0; l < part.group_count(); ++l) {
        CHECK(part.keys[l] == partp.keys[l]);
        // Same member sets up to the relabeling.
        std::vector<std::uint32_t> lhs;
        for (const auto id : part.group_members(l)) lhs.push_back(perm[id]);
        std::sort(lhs.begin(), lhs.end());
        std::vector<std::uint32_t> rhs(partp.group_members(l).begin(),
                                       partp.group_members(l).end());
        CHECK(lhs == rhs);
    }
}

TEST_CASE("full groups cover every node exactly once") {
    Rng rng(7);
    const auto g = hnci_test::random_instance(40, 0.15, 0.35, rng);
    const auto f = build_full_groups(g, ExposureMapping::treated_count_bucket(2), 2);
    CHECK(f.members.size() == g.size());
    std::vector<int> seen(g.size(), 0);
    for (const auto id : f.members) ++seen[id];
    for (const auto c : seen) CHECK(c == 1);
    for (std::size_t l = 0; l < f.group_count(); ++l)
        for (std::size_t idx = f.offsets[l]; idx < f.offsets[l + 1]; ++idx)
            CHECK(f.group_of[f.members[idx]] == l);
}
