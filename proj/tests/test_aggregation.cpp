#include "oracles.hpp"
#include "uac/aggregation.hpp"
#include "uac/diffcore/ops.hpp"
#include "uac/diffcore/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace uac;
using namespace uac::aggregation;

namespace {

Prediction pred(std::vector<double> p)
{
    Prediction out;
    out.probs = std::move(p);
    out.entropy = entropy(out.probs);
    return out;
}

std::vector<Prediction> random_preds(std::size_t k, std::size_t c, diffcore::RngStream& rng)
{
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> z(c);
        for (auto& v : z)
            v = 2.0 * rng.normal();
        out.push_back(pred(diffcore::softmax(z)));
    }
    return out;
}

}  // namespace

TEST_CASE("entropy")
{
    CHECK(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(entropy(std::vector<double>{0, 1, 0}) == 0.0);
    CHECK(entropy(std::vector<double>{0.5, 0.5, 0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS(entropy(std::vector<double>{0.5, 0.6}));
    CHECK_THROWS(entropy(std::vector<double>{1.1, -0.1}));
}

TEST_CASE("entropy weight")
{
    const double lc = std::log(5.0);
    CHECK(entropy_weight(0.0, 5) == 1.0);
    CHECK(entropy_weight(lc, 5) == 0.0);
    CHECK(entropy_weight(lc / 2, 5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS(entropy_weight(lc + 1e-6, 5));
    CHECK_THROWS(entropy_weight(-1e-6, 5));
    // Affine and strictly decreasing.
    double prev = 2.0;
    for (int i = 0; i <= 20; ++i) {
        const double h = lc * i / 20.0;
        const double w = entropy_weight(h, 5);
        CHECK(w < prev);
        CHECK(w == doctest::Approx(1.0 - i / 20.0).epsilon(1e-12));
        prev = w;
    }
}

TEST_CASE("entropy-weighted aggregation")
{
    SUBCASE("degenerate weights")
    {
        const std::vector<Prediction> ps{pred({1, 0}), pred({0.5, 0.5})};
        const auto raw = aggregate_entropy_weighted(ps, nullptr, {false});
        CHECK(raw.probs == std::vector<double>{0.5, 0.0});
        CHECK_FALSE(raw.calibrated);
        const auto s = aggregate_entropy_weighted(ps);
        CHECK(s.probs == std::vector<double>{1.0, 0.0});
        CHECK(s.weights == std::vector<double>{1.0, 0.0});
        CHECK(s.predicted_label == 0);
    }
    SUBCASE("identical one-hots")
    {
        const std::vector<Prediction> ps(4, pred({0, 0, 1}));
        CHECK(aggregate_entropy_weighted(ps).probs == std::vector<double>{0, 0, 1});
    }
    SUBCASE("matches the direct formula on a K=3 fixture")
    {
        const std::vector<std::vector<double>> raw{{0.7, 0.2, 0.1}, {0.3, 0.4, 0.3}, {0.1, 0.1, 0.8}};
        std::vector<Prediction> ps;
        for (const auto& p : raw)
            ps.push_back(pred(p));
        const auto got = aggregate_entropy_weighted(ps);
        const auto want = oracle::entropy_weighted(raw);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(std::abs(got.probs[c] - want[c]) < 1e-12);
    }
    SUBCASE("all weights zero falls back to the mean")
    {
        Warnings w;
        const std::vector<Prediction> ps{pred({0.5, 0.5}), pred({0.5, 0.5})};
        const auto s = aggregate_entropy_weighted(ps, &w);
        CHECK(s.probs == std::vector<double>{0.5, 0.5});
        CHECK(w.count("aggregate_all_weights_zero") == 1);
    }
    CHECK_THROWS(aggregate_entropy_weighted(std::vector<Prediction>{}));
    CHECK_THROWS(aggregate_entropy_weighted(std::vector<Prediction>{pred({1, 0}), pred({1, 0, 0})}));
}

TEST_CASE("mean and sum-argmax aggregation")
{
    const std::vector<Prediction> ps{pred({1, 0}), pred({0, 1})};
    CHECK(aggregate_mean(ps).probs == std::vector<double>{0.5, 0.5});
    const std::vector<Prediction> single{pred({0.2, 0.3, 0.5})};
    CHECK(aggregate_mean(single).probs == single[0].probs);
    CHECK_THROWS(aggregate_mean(std::vector<Prediction>{}));
    CHECK_THROWS(aggregate_sum_argmax(std::vector<Prediction>{}));

    const std::vector<Prediction> sums{pred({0.5, 0.5}), pred({0.4, 0.6})};
    const auto s = aggregate_sum_argmax(sums);
    CHECK(s.probs[0] == doctest::Approx(0.9));
    CHECK(s.probs[1] == doctest::Approx(1.1));
    CHECK(s.predicted_label == 1);
    CHECK_FALSE(s.calibrated);
    // Tie -> lowest class id.
    CHECK(aggregate_sum_argmax(std::vector<Prediction>{pred({0.5, 0.5})}).predicted_label == 0);
}

TEST_CASE("aggregator properties on random inputs")
{
    diffcore::RngStream rng(404);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t k = 1 + rng.below(8), c = 2 + rng.below(5);
        auto ps = random_preds(k, c, rng);
        const auto ew = aggregate_entropy_weighted(ps);
        const auto raw = aggregate_entropy_weighted(ps, nullptr, {false});
        const auto mean = aggregate_mean(ps);
        const auto sum = aggregate_sum_argmax(ps);

        double total = 0.0, mtotal = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            total += ew.probs[j];
            mtotal += mean.probs[j];
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        CHECK(std::abs(mtotal - 1.0) < 1e-9);
        for (double w : ew.weights) {
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
        }
        CHECK(ew.predicted_label == raw.predicted_label);
        CHECK(sum.predicted_label == mean.predicted_label);

        auto reversed = ps;
        std::reverse(reversed.begin(), reversed.end());
        const auto ew2 = aggregate_entropy_weighted(reversed);
        const auto mean2 = aggregate_mean(reversed);
        for (std::size_t j = 0; j < c; ++j) {
            CHECK(std::abs(ew2.probs[j] - ew.probs[j]) < 1e-12);
            CHECK(std::abs(mean2.probs[j] - mean.probs[j]) < 1e-12);
        }
    }
}

TEST_CASE("equal weights reduce to the mean; shared argmax is preserved")
{
    diffcore::RngStream rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        // Permutations of one vector share an entropy, hence a weight.
        std::vector<double> base = random_preds(1, 4, rng)[0].probs;
        std::vector<Prediction> ps;
        for (int r = 0; r < 4; ++r) {
            std::rotate(base.begin(), base.begin() + 1, base.end());
            ps.push_back(pred(base));
        }
        const auto ew = aggregate_entropy_weighted(ps);
        const auto mean = aggregate_mean(ps);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(std::abs(ew.probs[j] - mean.probs[j]) < 1e-12);
    }
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Prediction> ps;
        for (int i = 0; i < 5; ++i) {
            std::vector<double> p{rng.uniform(), rng.uniform(), 2.5 + rng.uniform()};
            const double s = p[0] + p[1] + p[2];
            for (auto& v : p)
                v /= s;
            ps.push_back(pred(p));
        }
        CHECK(aggregate_entropy_weighted(ps).predicted_label == 2);
        CHECK(aggregate_mean(ps).predicted_label == 2);
        CHECK(aggregate_sum_argmax(ps).predicted_label == 2);
    }
}
