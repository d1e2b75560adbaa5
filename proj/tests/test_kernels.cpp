#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hnci/kernels.hpp"
#include "hnci/rng.hpp"

using namespace hnci;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <typename Fn>
void with_each_backend(Fn&& fn) {
    kernels::force_backend(kernels::Backend::scalar);
    fn();
    kernels::force_backend(kernels::Backend::avx2);
    fn();
    kernels::reset_backend();
}

} // namespace

TEST_CASE("backend equivalence on reductions") {
    Rng rng(42);
    for (const std::size_t n : {std::size_t{1}, std::size_t{3}, std::size_t{17}, std::size_t{256},
                                std::size_t{1001}}) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);
        kernels::force_backend(kernels::Backend::scalar);
        const double dot_s = kernels::dot(a.data(), b.data(), n);
        const double sum_s = kernels::sum(a.data(), n);
        const double nrm_s = kernels::nrm2sq(a.data(), n);
        kernels::force_backend(kernels::Backend::avx2);
        const double dot_v = kernels::dot(a.data(), b.data(), n);
        const double sum_v = kernels::sum(a.data(), n);
        const double nrm_v = kernels::nrm2sq(a.data(), n);
        kernels::reset_backend();
        CHECK(dot_v == doctest::Approx(dot_s).epsilon(1e-12));
        CHECK(sum_v == doctest::Approx(sum_s).epsilon(1e-12));
        CHECK(nrm_v == doctest::Approx(nrm_s).epsilon(1e-12));
    }
}

TEST_CASE("backend equivalence on elementwise ops") {
    Rng rng(7);
    const std::size_t n = 533;
    const auto x = random_vec(n, rng);
    auto run = [&](kernels::Backend b) {
        kernels::force_backend(b);
        std::vector<double> y = x, out(n);
        kernels::axpy(0.3, x.data(), y.data(), n);
        kernels::sub_inplace(y.data(), x.data(), n);
        kernels::add_scalar(y.data(), -1.5, n);
        kernels::soft_threshold(y.data(), 0.2, out.data(), n);
        kernels::reset_backend();
        return out;
    };
    const auto s = run(kernels::Backend::scalar);
    const auto v = run(kernels::Backend::avx2);
    for (std::size_t i = 0; i < n; ++i) CHECK(s[i] == doctest::Approx(v[i]).epsilon(1e-14));
}

TEST_CASE("soft threshold definition") {
    const double x[] = {-1.0, -0.1, 0.0, 0.1, 1.0};
    double out[5];
    with_each_backend([&] {
        kernels::soft_threshold(x, 0.5, out, 5);
        CHECK(out[0] == doctest::Approx(-0.5));
        CHECK(out[1] == 0.0);
        CHECK(out[2] == 0.0);
        CHECK(out[3] == 0.0);
        CHECK(out[4] == doctest::Approx(0.5));
    });
}

TEST_CASE("pairwise operator matches naive double loop and adjoint identity") {
    Rng rng(3);
    for (const std::size_t d : {std::size_t{2}, std::size_t{4}, std::size_t{9}, std::size_t{33}}) {
        const auto beta = random_vec(d, rng);
        const std::size_t P = kernels::pair_count(d);
        CHECK(P == d * (d - 1) / 2);
        std::vector<double> t(P), naive(P);
        std::size_t idx = 0;
        for (std::size_t i = 0; i + 1 < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) naive[idx++] = beta[i] - beta[j];

        const auto v = random_vec(P, rng);
        std::vector<double> adj(d), adj_naive(d, 0.0);
        idx = 0;
        for (std::size_t i = 0; i + 1 < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j, ++idx) {
                adj_naive[i] += v[idx];
                adj_naive[j] -= v[idx];
            }

        with_each_backend([&] {
            kernels::pairwise_differences(beta.data(), d, t.data());
            for (std::size_t i = 0; i < P; ++i) CHECK(t[i] == doctest::Approx(naive[i]));
            kernels::pairwise_adjoint(v.data(), d, adj.data());
            for (std::size_t i = 0; i < d; ++i)
                CHECK(adj[i] == doctest::Approx(adj_naive[i]).epsilon(1e-12));
        });

        // <T beta, v> == <beta, T^T v>
        kernels::pairwise_differences(beta.data(), d, t.data());
        kernels::pairwise_adjoint(v.data(), d, adj.data());
        CHECK(kernels::dot(t.data(), v.data(), P) ==
              doctest::Approx(kernels::dot(beta.data(), adj.data(), d)).epsilon(1e-12));
    }
}

TEST_CASE("segment means subtract to zero group sums") {
    Rng rng(11);
    const std::vector<std::size_t> offsets = {0, 4, 4, 9, 30};
    const auto x = random_vec(30, rng);
    std::vector<double> means(4);
    with_each_backend([&] {
        auto xc = x;
        kernels::segment_means(xc.data(), offsets.data(), 4, means.data());
        CHECK(means[1] == 0.0); // empty segment convention
        kernels::subtract_segment_means(xc.data(), offsets.data(), 4, means.data());
        for (std::size_t l = 0; l < 4; ++l) {
            const double s = kernels::sum(xc.data() + offsets[l], offsets[l + 1] - offsets[l]);
            CHECK(std::fabs(s) < 1e-10);
        }
    });
}
