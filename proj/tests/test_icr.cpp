#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "icr/icr_score.hpp"
#include "icr/oracle.hpp"

using namespace icr;
using icr::test::small_record;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(n);
    for (auto& v : p) v = e(rng);
    const double s = sum(p);
    for (auto& v : p) v /= s;
    return p;
}

// Two-point JSD in bits, straight from the definition.
double jsd2(double p0, double q0) {
    auto h = [](double a, double m) { return a > 0 ? a * std::log2(a / m) : 0.0; };
    const double p1 = 1 - p0, q1 = 1 - q0, m0 = (p0 + q0) / 2, m1 = (p1 + q1) / 2;
    return 0.5 * (h(p0, m0) + h(p1, m1)) + 0.5 * (h(q0, m0) + h(q1, m1));
}

}  // namespace

TEST_CASE("softmax is stable and normalized") {
    const std::vector<double> z{1000.0, 1000.0, -1000.0};
    const auto p = softmax(z);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    CHECK(p[2] == 0.0);
}

TEST_CASE("causal attention distribution ignores the upper triangle") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const std::vector<float> row{0.0f, std::log(3.0f), nan, nan};
    const auto a = causal_attention_distribution(row, 1);
    REQUIRE(a.size() == 2);
    CHECK(a[0] == doctest::Approx(0.25));
    CHECK(a[1] == doctest::Approx(0.75));

    const std::vector<float> post{0.2f, 0.6f, 0.9f};
    const auto b = causal_attention_distribution(post, 1, AttnKind::post_softmax);
    CHECK(b[0] == doctest::Approx(0.25));
    CHECK(b[1] == doctest::Approx(0.75));

    CHECK_THROWS_AS(causal_attention_distribution(row, 4), IcrError);
    CHECK_THROWS_AS(causal_attention_distribution(std::vector<float>{1.0f, -0.5f}, 1, AttnKind::post_softmax),
                    IcrError);
}

TEST_CASE("delta and projections by hand") {
    const std::vector<float> prev{-1.0f, 1.0f}, curr{0.0f, 1.0f};
    const auto delta = delta_hidden(prev, curr);
    CHECK(delta == std::vector<double>{1.0, 0.0});
    // context states (2, 0) and (0, 3)
    const std::vector<float> layer{2.0f, 0.0f, 0.0f, 3.0f};
    const auto p = raw_projections(delta, layer, 2, 1);
    CHECK(p == std::vector<double>{1.0, 0.0});
    const auto q = projection_distribution(delta, layer, 2, 1);
    CHECK(q[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
    const std::vector<float> zero{0.0f, 0.0f, 0.0f, 3.0f};
    CHECK_THROWS_AS(raw_projections(delta, zero, 2, 1), IcrError);
}

TEST_CASE("jsd properties") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 30;
        const auto p = random_distribution(rng, n), q = random_distribution(rng, n);
        const double a = jsd(p, q), b = jsd(q, p);
        CHECK(a == b);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        CHECK(jsd(p, p) == 0.0);
    }
    CHECK(jsd(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
    for (double p0 : {0.1, 0.5, 0.73, 1.0})
        for (double q0 : {0.0, 0.2, 0.9})
            CHECK(jsd(std::vector<double>{p0, 1 - p0}, std::vector<double>{q0, 1 - q0}) ==
                  doctest::Approx(jsd2(p0, q0)).epsilon(1e-12));
    CHECK_THROWS_AS(jsd(std::vector<double>{0.5, 0.6}, std::vector<double>{0.5, 0.5}), IcrError);
    CHECK_THROWS_AS(jsd(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), IcrError);
}

TEST_CASE("top-k restriction") {
    const std::vector<double> attn{0.1, 0.3, 0.3, 0.2, 0.1};
    const std::vector<double> proj{0.2, 0.2, 0.2, 0.2, 0.2};
    const auto t = top_k_restrict(attn, proj, 2);
    CHECK(t.indices == std::vector<std::size_t>{1, 2});
    CHECK(t.attn == std::vector<double>{0.5, 0.5});
    CHECK(t.proj == std::vector<double>{0.5, 0.5});

    // ties at the cut go to the lower index
    const auto u = top_k_restrict(attn, proj, 4);
    CHECK(u.indices == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(sum(u.attn) == doctest::Approx(1.0));

    const auto all = top_k_restrict(attn, proj, 20);
    CHECK(all.indices.size() == 5);
    CHECK(all.attn == attn);
    CHECK(all.proj == proj);
    CHECK_THROWS_AS(top_k_restrict(attn, proj, 0), IcrError);
}

TEST_CASE("two-token record by hand") {
    ActivationRecord r;
    r.resize(2, 1, 2);
    r.answer_span = {1, 2};
    // slice 1 context states (1,0), (0,1); token 1 moves by (1,0)
    r.hidden_row(0, 0)[0] = 1.0f;
    r.hidden_row(1, 0)[0] = 1.0f;
    r.hidden_row(0, 1)[0] = -1.0f;
    r.hidden_row(0, 1)[1] = 1.0f;
    r.hidden_row(1, 1)[1] = 1.0f;
    const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(icr_score_token(r, 1, 1, {}) == doctest::Approx(jsd2(p0, 0.5)).epsilon(1e-12));
    CHECK(icr_score_token(r, 1, 0, {}) == 0.0);
    CHECK(icr_score_token(r, 1, 1, {IcrMode::none, 20}) == 0.0);
    // k = 1 leaves a single point mass on both sides
    CHECK(icr_score_token(r, 1, 1, {IcrMode::full, 1}) == 0.0);
}

TEST_CASE("hs-only uses a uniform attention distribution") {
    auto r = small_record(4, 10, 2, 8);
    const auto a = icr_matrix(r, {IcrMode::hs_only, 3});
    // scrambling the attention scores cannot change hs-only scores
    for (auto& v : r.attn) v = -v * 3.0f + 1.0f;
    const auto b = icr_matrix(r, {IcrMode::hs_only, 3});
    CHECK(a.scores == b.scores);
    const auto full = icr_matrix(r, {IcrMode::full, 3});
    CHECK_FALSE(full.scores == a.scores);
}

TEST_CASE("icr_matrix agrees with the oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = small_record(seed, 5 + seed, 1 + seed % 4, 4 + seed);
        for (auto mode : {IcrMode::full, IcrMode::hs_only, IcrMode::none}) {
            for (std::size_t k : {1, 3, 20}) {
                const IcrSetting s{mode, k};
                const auto got = icr_matrix(r, s), want = oracle_icr(r, s);
                REQUIRE(got.n_tokens() == r.n_tokens);
                REQUIRE(got.n_layers() == r.n_layers);
                for (std::size_t i = 0; i < r.n_tokens; ++i) {
                    for (std::size_t l = 1; l <= r.n_layers; ++l) {
                        CHECK(std::abs(got.at(i, l) - want.at(i, l)) <= 1e-9);
                        CHECK(got.at(i, l) == icr_score_token(r, l, i, s));
                    }
                }
            }
        }
    }
}

TEST_CASE("scores lie in [0,1]; the first token scores zero") {
    const auto r = small_record(17, 12, 3, 10);
    const auto m = icr_matrix(r, {});
    for (std::size_t l = 1; l <= 3; ++l) {
        CHECK(m.at(0, l) == 0.0);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(m.at(i, l) >= 0.0);
            CHECK(m.at(i, l) <= 1.0);
        }
    }
}

TEST_CASE("NaN upper triangle leaves scores bit-identical") {
    auto r = small_record(8, 9, 2, 5);
    const auto before = icr_matrix(r, {});
    for (std::size_t l = 1; l <= r.n_layers; ++l)
        for (std::size_t i = 0; i < r.n_tokens; ++i)
            for (std::size_t j = i + 1; j < r.n_tokens; ++j)
                r.attn_row(l, i)[j] = std::numeric_limits<float>::quiet_NaN();
    CHECK(icr_matrix(r, {}).scores == before.scores);
}

TEST_CASE("zero-norm context state is an error") {
    auto r = small_record(2, 4, 1, 3);
    for (auto& v : r.hidden_row(1, 0)) v = 0.0f;
    CHECK_THROWS_WITH_AS(icr_matrix(r, {}), "zero-norm context hidden state at token 0", IcrError);
}

TEST_CASE("pooling") {
    IcrMatrix m{Matrix(4, 2, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7})};
    CHECK(pool_features(m, {1, 3}) == IcrFeature{3.0, 4.0});
    CHECK(pool_features(m, {0, 4}) == IcrFeature{3.0, 4.0});
    CHECK(pool_features(m, {3, 4}) == IcrFeature{6.0, 7.0});
    CHECK_THROWS_AS(pool_features(m, {2, 2}), IcrError);
    CHECK_THROWS_AS(pool_features(m, {2, 5}), IcrError);

    const auto r = small_record(3, 8, 2, 5);
    const auto full = icr_matrix(r, {});
    CHECK(record_features(r, {}) == pool_features(full, r.answer_span));
    CHECK(record_features(r, {}, PoolScope::all) == pool_features(full, {0, 8}));
}

TEST_CASE("mode names") {
    for (auto mode : {IcrMode::full, IcrMode::hs_only, IcrMode::none})
        CHECK(icr_mode_from_string(to_string(mode)) == mode);
    CHECK(to_string(IcrMode::hs_only) == "hs-only");
    CHECK_THROWS_AS(icr_mode_from_string("attn-only"), IcrError);
}

TEST_CASE("invalid settings and records") {
    auto r = small_record(1);
    CHECK_THROWS_AS(icr_matrix(r, {IcrMode::full, 0}), IcrError);
    CHECK_THROWS_AS(icr_score_token(r, 0, 1, {}), IcrError);
    CHECK_THROWS_AS(icr_score_token(r, 4, 1, {}), IcrError);
    r.label = 3;
    CHECK_THROWS_AS(icr_matrix(r, {}), IcrError);
}
