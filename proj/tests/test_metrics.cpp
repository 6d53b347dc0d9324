#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "flagfed/errors.hpp"
#include "flagfed/metrics.hpp"

using namespace flagfed;

namespace {

// O(M^2) oracle: each positive's precision is the share of positives among
// items ranked at or above it (same tie rule: equal scores rank by index).
double ap_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& targets) {
    auto ranks_before = [&](std::size_t i) {
        std::size_t r = 0;
        for (std::size_t j = 0; j < scores.size(); ++j)
            if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++r;
        return r;
    };
    std::vector<std::pair<std::size_t, double>> by_rank;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!targets[i]) continue;
        std::size_t rank = ranks_before(i) + 1;
        std::size_t pos_at_or_above = 0;
        for (std::size_t j = 0; j < scores.size(); ++j)
            if (targets[j] && (scores[j] > scores[i] || (scores[j] == scores[i] && j <= i)))
                ++pos_at_or_above;
        by_rank.emplace_back(rank,
                             static_cast<double>(pos_at_or_above) / static_cast<double>(rank));
    }
    std::sort(by_rank.begin(), by_rank.end());  // accumulate in rank order
    double sum = 0.0;
    for (const auto& [rank, precision] : by_rank) sum += precision;
    return sum / static_cast<double>(by_rank.size());
}

RoundRecord record(std::size_t round, std::vector<double> maps) {
    RoundRecord r;
    r.round = round;
    r.per_client_map = std::move(maps);
    return r;
}

}  // namespace

TEST_CASE("average_precision on the worked example") {
    CHECK(average_precision({0.9, 0.8, 0.7}, {1, 0, 1}) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("perfect ranking scores one") {
    CHECK(average_precision({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    CHECK(average_precision({0.5}, {1}) == doctest::Approx(1.0));
}

TEST_CASE("average_precision requires a positive") {
    CHECK_THROWS_AS(average_precision({0.1, 0.2}, {0, 0}), DegenerateError);
}

TEST_CASE("average_precision matches the brute-force oracle") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t m = 1 + rng() % 50;
        std::vector<double> scores(m);
        std::vector<std::uint8_t> targets(m);
        bool any = false;
        for (std::size_t i = 0; i < m; ++i) {
            // coarse grid so score ties actually happen
            scores[i] = (rng() % 8) / 8.0 + (trial % 2 ? 0.0 : u(rng) * 1e-3);
            targets[i] = rng() % 2;
            any = any || targets[i];
        }
        if (!any) targets[rng() % m] = 1;
        CHECK(average_precision(scores, targets) == ap_oracle(scores, targets));
    }
}

TEST_CASE("mAP skips zero-positive labels and reduces to AP at L=1") {
    Matrix probs(3, 2);
    LabelMatrix targets(3, 2);
    probs.at(0, 0) = 0.9;
    probs.at(1, 0) = 0.8;
    probs.at(2, 0) = 0.7;
    targets.set(0, 0, 1);
    targets.set(2, 0, 1);
    // label 1 has no positives and must be excluded
    probs.at(0, 1) = 0.4;
    CHECK(mean_average_precision(probs, targets) ==
          doctest::Approx(average_precision({0.9, 0.8, 0.7}, {1, 0, 1})));

    LabelMatrix empty(3, 2);
    CHECK_THROWS_AS(mean_average_precision(probs, empty), DegenerateError);
}

TEST_CASE("mAP is invariant under joint label permutation") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix probs(20, 5);
    LabelMatrix targets(20, 5);
    for (auto& v : probs.data) v = u(rng);
    for (auto& b : targets.bits) b = rng() % 2;
    for (std::size_t j = 0; j < 5; ++j) targets.set(j, j, 1);

    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Matrix probs2(20, 5);
    LabelMatrix targets2(20, 5);
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            probs2.at(i, perm[j]) = probs.at(i, j);
            targets2.set(i, perm[j], targets.at(i, j));
        }
    CHECK(mean_average_precision(probs, targets) ==
          doctest::Approx(mean_average_precision(probs2, targets2)).epsilon(1e-12));
}

TEST_CASE("random scores on balanced labels land near the positive rate") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t m = 20000;
    Matrix probs(m, 2);
    LabelMatrix targets(m, 2);
    for (auto& v : probs.data) v = u(rng);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < 2; ++j) targets.set(i, j, u(rng) < 0.5);
    CHECK(mean_average_precision(probs, targets) == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("WmAP is never above AmAP") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> maps(1 + rng() % 8);
        for (auto& v : maps) v = u(rng);
        auto rec = record(1, maps);
        CHECK(rec.wmap() <= rec.amap());
        CHECK(rec.amap() >= 0.0);
        CHECK(rec.amap() <= 1.0);
    }
}

TEST_CASE("convergence finds the first crossing") {
    std::vector<RoundRecord> log{record(1, {0.30}), record(2, {0.45}), record(3, {0.50})};
    auto res = convergence(log, 0.8, 0.60, 4);
    CHECK(res.target_map == doctest::Approx(0.48));
    CHECK(res.rounds_to_target == 3);
    CHECK(res.epochs_to_target == 12);
    CHECK(res.best_map == doctest::Approx(0.50));
    CHECK(res.best_round == 3);
}

TEST_CASE("unreached target falls back to the best round") {
    std::vector<RoundRecord> log{record(1, {0.30}), record(2, {0.42}), record(3, {0.41})};
    auto res = convergence(log, 0.8, 0.60, 4);
    CHECK_FALSE(res.reached());
    CHECK(res.best_round == 2);
    CHECK(res.best_map == doctest::Approx(0.42));
}

TEST_CASE("a lower target never converges later") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<RoundRecord> log;
        for (std::size_t r = 1; r <= 10; ++r) log.push_back(record(r, {u(rng)}));
        auto hi = convergence(log, 0.9, 0.8, 4);
        auto lo = convergence(log, 0.5, 0.8, 4);
        CHECK(lo.rounds_to_target <= hi.rounds_to_target);
    }
}
