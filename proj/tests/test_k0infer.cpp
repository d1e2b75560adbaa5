#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/test_support.hpp"

#include "hnci/k0infer.hpp"
#include "hnci/kernels.hpp"
#include "hnci/simharness.hpp"

using namespace hnci;

namespace {

// Residual of v against the group means of partition p, node-indexed inputs.
std::vector<double> residual_member_order(const GroupPartition& p, const std::vector<double>& v) {
    std::vector<double> buf = p.gather(v), means(p.group_count());
    kernels::segment_means(buf.data(), p.offsets.data(), p.group_count(), means.data());
    kernels::subtract_segment_means(buf.data(), p.offsets.data(), p.group_count(), means.data());
    return buf;
}

// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    const double lambda = (ne + 0.12 + 0.11 / ne) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

// Simulation instance with k0 = 1 signal through the count-bucket mapping.
struct K0Instance {
    InterferenceGraph g;
    std::vector<double> y;
    std::vector<GroupPartition> parts;
};

K0Instance make_k0_instance(std::uint64_t seed, double signal, double sigma, int k_max) {
    SimDesign d;
    d.n = 300;
    d.er_p = 0.05;
    d.propensity_lo = 0.05;
    d.propensity_hi = 0.10;
    d.tau_lo = d.tau_hi = 0.6;
    d.mapping = ExposureMapping::treated_count_bucket(2);
    d.k0 = signal > 0.0 ? 1 : 0;
    if (signal > 0.0) {
        d.interference.kind = InterferenceKind::linear_features;
        d.interference.coef = {signal};
    }
    d.noise_sd = sigma;
    Rng rng(seed);
    K0Instance inst{generate_graph(d, rng), {}, {}};
    std::vector<double> tau(inst.g.size(), 0.6);
    const auto f = interference_values(inst.g, d);
    Rng rng2 = Rng::substream(seed, 1);
    inst.y = generate_outcomes(inst.g, d, tau, f, rng2).y;
    inst.parts = build_partitions(inst.g.with_outcomes(inst.y), d.mapping, k_max);
    return inst;
}

} // namespace

TEST_CASE("bic_select behavior") {
    SUBCASE("equal rss prefers fewer parameters") {
        CHECK(bic_select({10.0, 10.0}, 50, {2, 5}) == 0);
        CHECK(bic_select({10.0, 10.0}, 50, {5, 2}) == 1);
    }
    SUBCASE("exact penalty trade-off ties to the smaller model") {
        const std::size_t n0 = 40;
        const double rss1 = 7.0;
        const std::size_t df1 = 3, df2 = 6;
        const double rss2 =
            rss1 * std::exp(-std::log(static_cast<double>(n0)) *
                            static_cast<double>(df2 - df1) / static_cast<double>(n0));
        CHECK(bic_select({rss1, rss2}, n0, {df1, df2}) == 0);
    }
    SUBCASE("matches a brute-force scan of the same criterion") {
        Rng rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> rss(6);
            std::vector<std::size_t> df(6);
            double r = 50.0 + rng.uniform() * 10.0;
            for (std::size_t i = 0; i < 6; ++i) {
                rss[i] = r;
                r *= rng.uniform(0.75, 0.999);
                df[i] = 1 + 3 * i;
            }
            std::size_t best = 0;
            double best_v = bic_value(rss[0], 100, df[0]);
            for (std::size_t i = 1; i < 6; ++i) {
                const double v = bic_value(rss[i], 100, df[i]);
                if (v < best_v) {
                    best_v = v;
                    best = i;
                }
            }
            CHECK(bic_select(rss, 100, df) == best);
        }
    }
}

TEST_CASE("penalized fit with repro copies") {
    const auto inst = make_k0_instance(11, 0.0, 0.05, 3);
    const std::size_t n = inst.g.size();

    SUBCASE("constant-signal data selects k = 0 at moderate lambda") {
        Rng rng(5);
        std::vector<double> u(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (!inst.g.treated(i)) u[i] = rng.normal();
        // noise_sd = 0.05: everything beyond k=0 is pure overfit.
        const auto fit = penalized_fit_with_repro(inst.y, inst.parts, u, 50.0);
        CHECK(fit.k_hat == 0);
        CHECK_FALSE(fit.degenerate);
        REQUIRE(fit.values.size() == 4);
        for (std::size_t k = 1; k < 4; ++k) CHECK(fit.values[k] <= fit.values[k - 1] + 1e-9);
    }
    SUBCASE("lambda = 0 selects the finest partition") {
        Rng rng(7);
        std::vector<double> u(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (!inst.g.treated(i)) u[i] = rng.normal();
        const auto fit = penalized_fit_with_repro(inst.y, inst.parts, u, 0.0);
        CHECK(fit.k_hat == 3);
    }
    SUBCASE("a repro copy inside the design span flags degeneracy") {
        std::vector<double> u(n, 1.0); // constant vector lies in C(X_k) for every k
        const auto fit = penalized_fit_with_repro(inst.y, inst.parts, u, 1.0);
        CHECK(fit.degenerate);
    }
}

TEST_CASE("candidate set basics") {
    const auto inst = make_k0_instance(13, 3.0, 0.3, 3);
    SUBCASE("B = 1 with a single lambda is a singleton") {
        K0Config cfg;
        cfg.B = 1;
        cfg.lambda_grid = {25.0};
        cfg.permissive_lambda = true;
        cfg.seed = 99;
        const auto sb = build_candidate_set(inst.y, inst.parts, cfg);
        CHECK(sb.size() == 1);
    }
    SUBCASE("default grid recovers k0 = 1 in the candidate set") {
        K0Config cfg;
        cfg.B = 50;
        cfg.seed = 7;
        const auto sb = build_candidate_set(inst.y, inst.parts, cfg);
        CHECK(std::binary_search(sb.begin(), sb.end(), 1));
    }
}

TEST_CASE("conditional repro samples preserve the sufficient statistics") {
    const auto inst = make_k0_instance(17, 3.0, 0.4, 2);
    const auto& part = inst.parts[1];
    Rng rng(23);
    const auto r_obs = residual_member_order(part, inst.y);
    const double b_obs = std::sqrt(kernels::nrm2sq(r_obs.data(), r_obs.size()));
    std::vector<double> means_obs = part.gather(inst.y);
    std::vector<double> mo(part.group_count());
    kernels::segment_means(means_obs.data(), part.offsets.data(), part.group_count(), mo.data());

    for (int j = 0; j < 200; ++j) {
        const auto y_star = conditional_repro_sample(inst.y, part, rng);
        auto buf = part.gather(y_star);
        std::vector<double> ms(part.group_count());
        kernels::segment_means(buf.data(), part.offsets.data(), part.group_count(), ms.data());
        for (std::size_t l = 0; l < part.group_count(); ++l)
            CHECK(ms[l] == doctest::Approx(mo[l]).epsilon(1e-8));
        const auto r_star = residual_member_order(part, y_star);
        const double b_star = std::sqrt(kernels::nrm2sq(r_star.data(), r_star.size()));
        CHECK(b_star == doctest::Approx(b_obs).epsilon(1e-8));
    }
}

TEST_CASE("repro residual directions look uniform on the sphere") {
    const auto inst = make_k0_instance(19, 3.0, 0.4, 1);
    const auto& part = inst.parts[1];
    Rng rng(29);

    // Fixed reference direction in the residual space.
    std::vector<double> e1(inst.g.size(), 0.0);
    for (std::size_t i = 0; i < inst.g.size(); ++i)
        if (!inst.g.treated(i)) {
            e1[i] = 1.0;
            break;
        }
    const auto ref = residual_member_order(part, e1);
    const double ref_norm = std::sqrt(kernels::nrm2sq(ref.data(), ref.size()));
    REQUIRE(ref_norm > 0.0);

    std::vector<double> sample_repro, sample_oracle;
    for (int j = 0; j < 2000; ++j) {
        const auto y_star = conditional_repro_sample(inst.y, part, rng);
        const auto r = residual_member_order(part, y_star);
        const double rn = std::sqrt(kernels::nrm2sq(r.data(), r.size()));
        sample_repro.push_back(kernels::dot(r.data(), ref.data(), r.size()) / (rn * ref_norm));
    }
    // Oracle: direct simulation of uniform directions in the residual space.
    for (int j = 0; j < 2000; ++j) {
        std::vector<double> u(inst.g.size(), 0.0);
        for (std::size_t i = 0; i < inst.g.size(); ++i)
            if (!inst.g.treated(i)) u[i] = rng.normal();
        const auto r = residual_member_order(part, u);
        const double rn = std::sqrt(kernels::nrm2sq(r.data(), r.size()));
        sample_oracle.push_back(kernels::dot(r.data(), ref.data(), r.size()) / (rn * ref_norm));
    }
    CHECK(ks_two_sample_p(sample_repro, sample_oracle) > 0.01);
}

TEST_CASE("exact fit at some k is retained with F = 1") {
    // Zero noise and no interference: y is constant on every group, so b_k = 0
    // for all k.
    const auto inst = make_k0_instance(31, 0.0, 0.0, 2);
    K0Config cfg;
    cfg.J = 10;
    cfg.lambda_prime_grid = {1.0};
    cfg.seed = 3;
    const auto cs = confidence_set(inst.y, inst.parts, {0, 1, 2}, cfg);
    CHECK(cs.exact_fit.size() == 3);
    CHECK(cs.retained == std::vector<int>{0, 1, 2});
    for (const auto f : cs.f_hat) CHECK(f == 1.0);
}

TEST_CASE("J = 1 makes F-hat zero-one") {
    const auto inst = make_k0_instance(37, 3.0, 0.4, 2);
    K0Config cfg;
    cfg.J = 1;
    cfg.seed = 11;
    const auto cs = confidence_set(inst.y, inst.parts, {0, 1, 2}, cfg);
    for (std::size_t i = 0; i < cs.f_hat.size(); ++i) {
        CHECK((cs.f_hat[i] == 0.0 || cs.f_hat[i] == 1.0));
        // retained exactly when the single repro draw reproduces k_hat_obs
        const bool in = std::find(cs.retained.begin(), cs.retained.end(),
                                  cs.candidate_set[i]) != cs.retained.end();
        CHECK(in == (cs.f_hat[i] >= cfg.alpha));
    }
}

TEST_CASE("raising alpha can only shrink the retained set") {
    const auto inst = make_k0_instance(41, 3.0, 0.4, 3);
    K0Config lo, hi;
    lo.alpha = 0.01;
    hi.alpha = 0.10;
    lo.J = hi.J = 40;
    lo.seed = hi.seed = 5;
    const std::vector<int> sb = {0, 1, 2, 3};
    const auto cs_lo = confidence_set(inst.y, inst.parts, sb, lo);
    const auto cs_hi = confidence_set(inst.y, inst.parts, sb, hi);
    for (const auto k : cs_hi.retained)
        CHECK(std::find(cs_lo.retained.begin(), cs_lo.retained.end(), k) !=
              cs_lo.retained.end());
}

TEST_CASE("confidence set is deterministic under a fixed seed") {
    const auto inst = make_k0_instance(43, 3.0, 0.4, 2);
    K0Config cfg;
    cfg.J = 25;
    cfg.B = 40;
    cfg.seed = 77;
    const auto sb1 = build_candidate_set(inst.y, inst.parts, cfg);
    const auto sb2 = build_candidate_set(inst.y, inst.parts, cfg);
    CHECK(sb1 == sb2);
    const auto cs1 = confidence_set(inst.y, inst.parts, sb1, cfg);
    const auto cs2 = confidence_set(inst.y, inst.parts, sb1, cfg);
    CHECK(cs1.retained == cs2.retained);
    CHECK(cs1.f_hat == cs2.f_hat);
    CHECK(cs1.k_hat_obs == cs2.k_hat_obs);
}

TEST_CASE("k0 = 1 signal is retained and k = 0 rejected by the nuclear statistic") {
    int retained_k0 = 0, runs = 0;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const auto inst = make_k0_instance(seed, 4.0, 0.3, 2);
        K0Config cfg;
        cfg.J = 50;
        cfg.seed = seed;
        const auto cs = confidence_set(inst.y, inst.parts, {0, 1, 2}, cfg);
        ++runs;
        if (std::find(cs.retained.begin(), cs.retained.end(), 1) != cs.retained.end())
            ++retained_k0;
        CHECK(cs.k_hat_obs == 1);
    }
    CHECK(retained_k0 == runs);
}

TEST_CASE("penalized fit recovers k0 = 2 on the two-depth design at a feasible lambda") {
    // ER(0.02) network with the count-bucket mapping and a two-depth
    // interference signal; the feasible lambda is the grid point whose fitted
    // model minimizes the BIC.
    SimDesign d = SimDesign::table3_setting1(2);
    d.seed = 404;
    Rng rep_rng = Rng::substream(d.seed, 1);
    const auto g = generate_graph(d, rep_rng);
    std::vector<double> tau(g.size(), 0.7);
    const auto f = interference_values(g, d);
    Rng orng = Rng::substream(d.seed, 2);
    const auto y = generate_outcomes(g, d, tau, f, orng).y;
    const auto parts = build_partitions(g.with_outcomes(y), d.mapping, 4);

    const auto grid = auto_lambda_grid(y, parts);
    // Zero repro copy degenerates to the plain per-model residuals.
    const std::vector<double> zero(g.size(), 0.0);
    const std::vector<double> rss = penalized_fit_with_repro(y, parts, zero, 0.0).values;
    std::vector<std::size_t> df;
    for (const auto& p : parts) df.push_back(p.group_count());
    double feasible = grid.front();
    double best_bic = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        std::vector<double> ks(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) ks[i] = static_cast<double>(parts[i].k);
        std::size_t pick = 0;
        double best = rss[0] + grid[j] * ks[0];
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const double v = rss[i] + grid[j] * ks[i];
            if (v < best) {
                best = v;
                pick = i;
            }
        }
        const double b = bic_value(rss[pick], parts.front().n0, df[pick]);
        if (j == 0 || b < best_bic) {
            best_bic = b;
            feasible = grid[j];
        }
    }

    int hits = 0;
    const int draws = 100;
    for (int b = 0; b < draws; ++b) {
        Rng rng = Rng::substream(777, static_cast<std::uint64_t>(b));
        std::vector<double> u(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!g.treated(i)) u[i] = rng.normal();
        hits += penalized_fit_with_repro(y, parts, u, feasible).k_hat == 2;
    }
    CHECK(hits >= draws * 95 / 100);
}

TEST_CASE("config invariants are enforced") {
    const auto inst = make_k0_instance(51, 0.0, 0.2, 1);
    K0Config bad;
    bad.B = 0;
    CHECK_THROWS_AS(build_candidate_set(inst.y, inst.parts, bad), schema_error);
    bad = K0Config{};
    bad.J = 0;
    CHECK_THROWS_AS(confidence_set(inst.y, inst.parts, {0, 1}, bad), schema_error);
    bad = K0Config{};
    bad.alpha = 1.5;
    CHECK_THROWS_AS(confidence_set(inst.y, inst.parts, {0, 1}, bad), schema_error);
    bad = K0Config{};
    bad.lambda_grid = {1.0, -2.0};
    CHECK_THROWS_AS(build_candidate_set(inst.y, inst.parts, bad), schema_error);
}
