#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "wattgan/evalr.hpp"

using namespace wattgan;

namespace {

std::vector<std::int64_t> random_set(std::mt19937_64& rng, std::size_t max_size, std::int64_t hi) {
    std::uniform_int_distribution<std::size_t> n(0, max_size);
    std::uniform_int_distribution<std::int64_t> v(0, hi);
    std::set<std::int64_t> s;
    const std::size_t k = n(rng);
    while (s.size() < k) s.insert(v(rng));
    return {s.begin(), s.end()};
}

}  // namespace

TEST(Match, Examples) {
    std::vector<std::int64_t> gt{100};
    auto r = match(gt, std::vector<std::int64_t>{110}, {12});
    EXPECT_EQ(r.tp, 1);
    EXPECT_EQ(r.fn, 0);
    EXPECT_EQ(r.fp, 0);
    EXPECT_EQ(r.f1, 1.0);

    r = match(gt, std::vector<std::int64_t>{130}, {24});
    EXPECT_EQ(r.tp, 0);
    EXPECT_EQ(r.fn, 1);
    EXPECT_EQ(r.fp, 1);
    EXPECT_EQ(r.f1, 0.0);

    r = match({}, {}, {24});
    EXPECT_EQ(r.tp + r.fn + r.fp, 0);
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_EQ(r.recall, 0.0);
    EXPECT_EQ(r.f1, 0.0);
}

TEST(Match, BoundaryAndDegenerateSides) {
    std::vector<std::int64_t> gt{100};
    EXPECT_EQ(match(gt, std::vector<std::int64_t>{124}, {24}).tp, 1);
    EXPECT_EQ(match(gt, std::vector<std::int64_t>{125}, {24}).tp, 0);
    auto r = match(gt, {}, {24});
    EXPECT_EQ(r.fn, 1);
    EXPECT_EQ(r.recall, 0.0);
    r = match({}, std::vector<std::int64_t>{5, 6}, {24});
    EXPECT_EQ(r.fp, 2);
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_THROW(match(std::vector<std::int64_t>{3, 1}, {}, {24}), ArgumentError);
    EXPECT_THROW(match({}, {}, {-1}), ArgumentError);
}

TEST(Match, PerTimestampPredictionsCountSeparately) {
    std::vector<std::int64_t> gt{50, 51, 52};
    std::vector<std::int64_t> pred{49, 50, 51, 52, 53, 200, 201};
    auto r = match(gt, pred, {2});
    EXPECT_EQ(r.tp, 3);
    EXPECT_EQ(r.fp, 2);
    EXPECT_DOUBLE_EQ(r.precision, 3.0 / 5.0);
    EXPECT_DOUBLE_EQ(r.recall, 1.0);
}

TEST(Match, AgreesWithPairwiseOracleAndIsMonotone) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        auto gt = random_set(rng, 8, 200), pred = random_set(rng, 8, 200);
        MatchResult prev;
        for (std::int64_t rt = 0; rt <= 60; rt += 6) {
            auto r = match(gt, pred, {rt});
            auto o = oracle::match_by_pairs(gt, pred, rt);
            EXPECT_EQ(r.tp, o.tp);
            EXPECT_EQ(r.fn, o.fn);
            EXPECT_EQ(r.fp, o.fp);
            EXPECT_EQ(r.tp + r.fn, static_cast<std::int64_t>(gt.size()));
            EXPECT_LE(r.fp, static_cast<std::int64_t>(pred.size()));
            for (double m : {r.precision, r.recall, r.f1}) {
                EXPECT_GE(m, 0.0);
                EXPECT_LE(m, 1.0);
            }
            if (r.tp == 0) EXPECT_EQ(r.f1, 0.0);
            if (rt > 0) {
                EXPECT_GE(r.tp, prev.tp);
                EXPECT_LE(r.fp, prev.fp);
                EXPECT_GE(r.f1, prev.f1 - 1e-15);
            }
            prev = r;
        }
    }
}

TEST(Match, ShiftInvariant) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::int64_t> off(-1000, 1000);
    for (int trial = 0; trial < 200; ++trial) {
        auto gt = random_set(rng, 8, 200), pred = random_set(rng, 8, 200);
        const std::int64_t d = off(rng);
        auto gs = gt, ps = pred;
        for (auto& v : gs) v += d;
        for (auto& v : ps) v += d;
        auto a = match(gt, pred, {24}), b = match(gs, ps, {24});
        EXPECT_EQ(a.tp, b.tp);
        EXPECT_EQ(a.fn, b.fn);
        EXPECT_EQ(a.fp, b.fp);
        EXPECT_EQ(a.f1, b.f1);
    }
}

TEST(Aggregate, Examples) {
    MatchResult a;
    a.precision = 0.5;
    a.recall = 0.25;
    a.f1 = 0.8;
    auto one = aggregate(std::vector<MatchResult>{a});
    EXPECT_EQ(one.precision, 0.5);
    EXPECT_EQ(one.recall, 0.25);
    EXPECT_EQ(one.f1, 0.8);
    EXPECT_EQ(one.count, 1u);

    MatchResult b;
    b.f1 = 0.6;
    EXPECT_NEAR(aggregate(std::vector<MatchResult>{a, b}).f1, 0.7, 1e-15);
    EXPECT_THROW(aggregate({}), ArgumentError);
}
