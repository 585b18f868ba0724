#include <cmath>
#include <numeric>

#include "doctest.h"

#include "flatlab/error.hpp"
#include "flatlab/rng.hpp"
#include "flatlab/theory.hpp"
#include "helpers.hpp"

using namespace flatlab;
using namespace flatlab::theory;
using testing::rel_err;

namespace {

ScalarChainSpec chain(double eta, double h, double sigma2, double alpha, std::size_t k) {
    ScalarChainSpec s;
    s.eta = eta;
    s.h = h;
    s.sigma2 = sigma2;
    s.alpha = alpha;
    s.k = k;
    return s;
}

// Direct transcription of the stationary-variance series for the averaged
// update, summed term by term in long double.
long double avg_reference(const ScalarChainSpec& s) {
    const auto beta = s.weights();
    const long double m = 1.0L - static_cast<long double>(s.eta) * s.h;
    auto idx = [&](std::size_t n) {
        return s.index_convention == IndexConvention::include_start ? n : n + 1;
    };
    long double y = 0.0L;
    long double mean = 0.0L;
    for (std::size_t a = 0; a < beta.size(); ++a) {
        const long double i = idx(a);
        y += beta[a] * beta[a] * (1.0L - std::pow(m, 2 * i));
        mean += beta[a] * std::pow(m, i);
        for (std::size_t b = 0; b < a; ++b) {
            const long double j = idx(b);
            y += 2.0L * beta[a] * beta[b] * std::pow(m, i - j) * (1.0L - std::pow(m, 2 * j));
        }
    }
    if (y == 0.0L) return 0.0L;  // only the start iterate is averaged
    const long double f = (1.0L - s.alpha) + s.alpha * mean;
    const long double eh = static_cast<long double>(s.eta) * s.h;
    return s.alpha * s.alpha * y / (1.0L - f * f) * eh * eh * s.sigma2 / (1.0L - m * m);
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("sgd_stable threshold") {
    CHECK(sgd_stable(0.1, 19.0));
    CHECK_FALSE(sgd_stable(0.1, 21.0));
    CHECK_FALSE(sgd_stable(0.1, 20.0));
}

TEST_CASE("lookahead_paper_threshold") {
    CHECK(lookahead_paper_threshold(0.1, 1.0, 7) == doctest::Approx(20.0).epsilon(1e-15));
    CHECK(lookahead_paper_threshold(0.1, 0.5, 3) == doctest::Approx(22.5992104989487).epsilon(1e-12));
    double prev = 0.0;
    for (int i = 100; i >= 1; --i) {
        const double t = lookahead_paper_threshold(0.1, i / 100.0, 5);
        CHECK(t > prev);
        prev = t;
    }
}

TEST_CASE("mean map factor") {
    auto s = chain(0.1, 22.0, 1.0, 0.5, 3);
    CHECK(lookahead_mean_map_factor(s) == doctest::Approx(-0.364).epsilon(1e-12));
    CHECK(lookahead_mean_stable(s));
    CHECK_FALSE(sgd_stable(0.1, 22.0));
    s = chain(0.1, 3.0, 1.0, 1.0, 1);
    CHECK(lookahead_mean_map_factor(s) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("v_star_erm") {
    CHECK(v_star_erm(0.1, 1.0, 0.0) == 0.0);
    CHECK(v_star_erm(0.1, 1.0, 1.0) == doctest::Approx(0.01 / 0.19).epsilon(1e-14));
    CHECK(v_star_erm(0.5, 2.0, 3.0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK_THROWS_AS((void)v_star_erm(0.1, 25.0, 1.0), Error);
}

TEST_CASE("v_star_lookahead against the ratio expression") {
    for (const double alpha : {1.0, 0.5, 0.05}) {
        for (const std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{15}}) {
            const auto s = chain(0.1, 1.0, 1.0, alpha, k);
            const double m = 0.9;
            const double mk = std::pow(m, static_cast<double>(k));
            const double ratio = alpha * alpha * (1 - mk * mk) /
                                 (alpha * alpha * (1 - mk * mk) + 2 * alpha * (1 - alpha) * (1 - mk));
            CHECK(rel_err(v_star_lookahead(s), ratio * v_star_erm(0.1, 1.0, 1.0)) < 1e-13);
        }
    }
    CHECK(rel_err(v_star_lookahead(chain(0.1, 1.0, 1.0, 1.0, 4)), v_star_erm(0.1, 1.0, 1.0)) < 1e-14);
    const double tiny = v_star_lookahead(chain(0.1, 1.0, 1.0, 1e-9, 4));
    CHECK(tiny / v_star_erm(0.1, 1.0, 1.0) < 1e-8);
}

TEST_CASE("v_star_avglookahead against the direct series") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = chain(rng.uniform(0.01, 0.5), 0.0, rng.uniform(0.1, 3.0), rng.uniform(0.05, 1.0),
                       1 + static_cast<std::size_t>(rng.uniform(0.0, 19.999)));
        s.h = rng.uniform(0.1, 1.9) / s.eta;
        s.index_convention = trial % 2 ? IndexConvention::include_start : IndexConvention::post_step;
        if (trial % 3 == 0) {
            s.beta.resize(s.k);
            for (auto& b : s.beta) b = rng.uniform(0.1, 1.0);
            const double sum = std::accumulate(s.beta.begin(), s.beta.end(), 0.0);
            for (auto& b : s.beta) b /= sum;
        }
        const double want = static_cast<double>(avg_reference(s));
        const double got = v_star_avglookahead(s);
        if (want == 0.0) {
            CHECK(got == 0.0);
        } else {
            CHECK(rel_err(got, want) < 1e-10);
        }
    }
}

TEST_CASE("include_start with k=1 has zero variance") {
    auto s = chain(0.1, 1.0, 1.0, 0.5, 1);
    s.index_convention = IndexConvention::include_start;
    CHECK(v_star_avglookahead(s) == 0.0);
}

TEST_CASE("generic stationary variance matches the closed forms") {
    Rng rng(2);
    for (int trial = 0; trial < 60; ++trial) {
        auto s = chain(rng.uniform(0.01, 0.5), 0.0, rng.uniform(0.1, 3.0), rng.uniform(0.05, 1.0),
                       1 + static_cast<std::size_t>(rng.uniform(0.0, 14.999)));
        s.h = rng.uniform(0.1, 1.9) / s.eta;
        CHECK(rel_err(generic_stationary_variance(s, OuterRule::plain), v_star_lookahead(s)) < 1e-10);
        for (const auto conv : {IndexConvention::include_start, IndexConvention::post_step}) {
            s.index_convention = conv;
            const double closed = v_star_avglookahead(s);
            const double generic = generic_stationary_variance(s, OuterRule::avg);
            if (closed == 0.0) {
                CHECK(std::abs(generic) < 1e-14);
            } else {
                CHECK(rel_err(generic, closed) < 1e-10);
            }
        }
    }
    const auto one = chain(0.1, 3.0, 2.0, 1.0, 1);
    CHECK(std::abs(generic_stationary_variance(one, OuterRule::plain) - v_star_erm(0.1, 3.0, 2.0)) < 1e-12);
}

TEST_CASE("generic stationary variance rejects an expansive map") {
    const auto s = chain(0.1, 30.0, 1.0, 0.5, 2);
    CHECK_THROWS_AS((void)generic_stationary_variance(s, OuterRule::plain), Error);
}

TEST_CASE("variance inequality chain over random stable specs") {
    Rng rng(3);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto s = chain(rng.uniform(0.01, 0.5), 0.0, rng.uniform(0.1, 3.0), rng.uniform(0.01, 1.0),
                       1 + static_cast<std::size_t>(rng.uniform(0.0, 19.999)));
        s.h = rng.uniform(0.05, 1.95) / s.eta;
        const double erm = v_star_erm(s.eta, s.h, s.sigma2);
        const double la = v_star_lookahead(s);
        const double avg = v_star_avglookahead(s);
        const double slack = 1e-12 * erm;
        CHECK(avg <= la + slack);
        CHECK(la <= erm + slack);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("odd k: paper region is mean-stable while sgd is not") {
    const double eta = 0.1;
    for (const std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{5}, std::size_t{15}}) {
        for (int ia = 0; ia < 100; ++ia) {
            const double alpha = (ia + 0.5) / 100.0;
            const double lo = 2.0 / eta;
            const double hi = lookahead_paper_threshold(eta, alpha, k);
            for (int ih = 0; ih < 100; ++ih) {
                const double h = lo + (hi - lo) * (ih + 0.5) / 100.0;
                CHECK_FALSE(sgd_stable(eta, h));
                CHECK(lookahead_mean_stable(chain(eta, h, 1.0, alpha, k)));
            }
        }
    }
}

TEST_CASE("entropy gibbs mean") {
    EntropyQuery q{{1.0}, {2.0}, 1.0, {0.0}};
    CHECK(entropy_gibbs_mean(q)[0] == doctest::Approx(1.0).epsilon(1e-15));
    q = EntropyQuery{{1.0, 4.0}, {3.0, -2.0}, 1e12, {0.5, 7.0}};
    const auto e = entropy_gibbs_mean(q);
    CHECK(rel_err(e[0], 0.5) < 1e-6);
    CHECK(rel_err(e[1], 7.0) < 1e-6);
    q.gamma = 0.0;
    CHECK_THROWS_AS((void)entropy_gibbs_mean(q), Error);
    q = EntropyQuery{{1.0}, {2.0, 3.0}, 1.0, {0.0}};
    CHECK_THROWS_AS((void)entropy_value(q), Error);
}

TEST_CASE("entropy gradient matches finite differences of the value") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        EntropyQuery q;
        q.gamma = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        for (int i = 0; i < 4; ++i) {
            q.h.push_back(rng.uniform(0.1, 10.0));
            q.c.push_back(rng.normal());
            q.theta.push_back(2.0 * rng.normal());
        }
        const auto g = entropy_grad(q);
        for (std::size_t i = 0; i < 4; ++i) {
            const double step = 1e-5 * std::max(1.0, std::abs(q.theta[i]));
            EntropyQuery up = q;
            EntropyQuery down = q;
            up.theta[i] += step;
            down.theta[i] -= step;
            const double fd = (entropy_value(up) - entropy_value(down)) / (2 * step);
            CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(1.0, std::abs(g[i])));
        }
    }
}

TEST_CASE("entropy descent fixed point has zero gradient") {
    EntropyQuery q{{0.5, 3.0, 8.0}, {1.0, -2.0, 0.25}, 0.7, {4.0, 4.0, -4.0}};
    for (int it = 0; it < 100000; ++it) {
        const auto e = entropy_gibbs_mean(q);
        double change = 0.0;
        for (std::size_t i = 0; i < q.theta.size(); ++i) {
            const double next = 0.5 * q.theta[i] + 0.5 * e[i];
            change = std::max(change, std::abs(next - q.theta[i]));
            q.theta[i] = next;
        }
        if (change < 1e-14) break;
    }
    double norm = 0.0;
    for (const double g : entropy_grad(q)) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-10);
    for (std::size_t i = 0; i < q.theta.size(); ++i) CHECK(q.theta[i] == doctest::Approx(q.c[i]).epsilon(1e-10));
}

}  // TEST_SUITE
