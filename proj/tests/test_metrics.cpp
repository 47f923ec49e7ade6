// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "growlearn/metrics.hpp"

using namespace growlearn;
using Catch::Matchers::WithinAbs;

namespace {

/// Dense 1-based copy of a random result matrix, filled independently of
/// ResultMatrix so the oracles below never read through the class.
struct Filled {
    std::size_t T;
    std::vector<std::vector<double>> R; // R[i][j], 1-based, (T+1) x (T+1)
    std::vector<double> b;              // b[i], 1-based
    ResultMatrix matrix;
};

Filled random_filled(std::mt19937& gen) {
    std::uniform_int_distribution<std::size_t> tdist(2, 12);
    std::uniform_real_distribution<double> acc(0.0, 1.0);
    Filled f{tdist(gen), {}, {}, ResultMatrix(0)};
    f.R.assign(f.T + 1, std::vector<double>(f.T + 1, -1.0));
    f.b.assign(f.T + 1, -1.0);
    f.matrix = ResultMatrix(f.T);
    for (std::size_t i = 1; i <= f.T; ++i) {
        f.b[i] = acc(gen);
        f.matrix.record_baseline(i - 1, f.b[i]);
        for (std::size_t j = 1; j <= std::min(i + 1, f.T); ++j) {
            f.R[i][j] = acc(gen);
            f.matrix.record(i - 1, j - 1, f.R[i][j]);
        }
    }
    return f;
}

long double oracle_aac(const Filled& f) {
    long double s = 0;
    for (std::size_t i = 1; i <= f.T; ++i) s += f.R[f.T][i];
    return s / f.T;
}

long double oracle_bwt(const Filled& f) {
    long double s = 0;
    for (std::size_t i = 1; i <= f.T - 1; ++i) s += f.R[f.T][i] - f.R[i][i];
    return s / (f.T - 1);
}

long double oracle_fwt(const Filled& f, std::size_t upper) {
    long double s = 0;
    for (std::size_t i = 2; i <= upper; ++i) s += f.R[i - 1][i] - f.b[i];
    return s / (f.T - 1);
}

ResultMatrix two_by_two() {
    ResultMatrix r(2);
    r.record(0, 0, 0.9);
    r.record(0, 1, 0.3);
    r.record(1, 0, 0.8);
    r.record(1, 1, 0.85);
    r.record_baseline(0, 0.1);
    r.record_baseline(1, 0.1);
    return r;
}

} // namespace

TEST_CASE("hand examples", "[metrics]") {
    const auto r = two_by_two();
    CHECK(aac(r) == 0.825);
    CHECK_THAT(bwt(r), WithinAbs(-0.1, 1e-15));
    CHECK_THAT(fwt(r), WithinAbs(0.2, 1e-15));
    CHECK(format_metric(aac(r)) == "0.825");
    CHECK(format_metric(bwt(r)) == "-0.1");
    CHECK(format_metric(fwt(r)) == "0.2");
}

TEST_CASE("metrics match summation oracles on random matrices", "[metrics][property]") {
    std::mt19937 gen(2026);
    for (int trial = 0; trial < 50; ++trial) {
        const auto f = random_filled(gen);
        CHECK_THAT(aac(f.matrix), WithinAbs(static_cast<double>(oracle_aac(f)), 1e-9));
        CHECK_THAT(bwt(f.matrix), WithinAbs(static_cast<double>(oracle_bwt(f)), 1e-9));
        CHECK_THAT(fwt(f.matrix), WithinAbs(static_cast<double>(oracle_fwt(f, f.T)), 1e-9));
        CHECK_THAT(fwt(f.matrix, FwtBounds::literal), WithinAbs(static_cast<double>(oracle_fwt(f, f.T - 1)), 1e-9));
    }
}

TEST_CASE("bwt is nonpositive when nothing improves", "[metrics][property]") {
    std::mt19937 gen(7);
    std::uniform_real_distribution<double> acc(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 2 + trial % 6;
        ResultMatrix r(T);
        std::vector<double> diag(T);
        for (std::size_t i = 0; i < T; ++i) {
            diag[i] = acc(gen);
            r.record(i, i, diag[i]);
        }
        for (std::size_t j = 0; j + 1 < T; ++j) r.record(T - 1, j, diag[j] * acc(gen));
        CHECK(bwt(r) <= 0.0);
    }
}

TEST_CASE("metrics are covariant under a consistent reordering", "[metrics][property]") {
    // With T = 2 and both rows complete, swapping tasks in R and b_bar maps
    // aac to the mean of the other row; checked against direct arithmetic.
    ResultMatrix r(2), s(2);
    r.record(0, 0, 0.6);
    r.record(0, 1, 0.2);
    r.record(1, 0, 0.5);
    r.record(1, 1, 0.7);
    s.record(0, 0, 0.7);
    s.record(0, 1, 0.3);
    s.record(1, 0, 0.65);
    s.record(1, 1, 0.5);
    CHECK_THAT(aac(r), WithinAbs((0.5 + 0.7) / 2, 1e-15));
    CHECK_THAT(aac(s), WithinAbs((0.65 + 0.5) / 2, 1e-15));
    CHECK_THAT(bwt(r), WithinAbs(0.5 - 0.6, 1e-15));
    CHECK_THAT(bwt(s), WithinAbs(0.65 - 0.7, 1e-15));
}

TEST_CASE("undefined and incomplete metrics", "[metrics][errors]") {
    ResultMatrix one(1);
    one.record(0, 0, 0.7);
    CHECK(aac(one) == 0.7);
    CHECK_THROWS_AS(bwt(one), UndefinedMetric);
    CHECK_THROWS_AS(fwt(one), UndefinedMetric);

    ResultMatrix partial(3);
    partial.record(0, 0, 0.5);
    partial.record(2, 0, 0.5);
    CHECK_THROWS_AS(aac(partial), StateError);
    CHECK_FALSE(partial.row_complete(2));

    auto missing_base = ResultMatrix(2);
    missing_base.record(0, 0, 0.9);
    missing_base.record(0, 1, 0.3);
    missing_base.record(1, 0, 0.8);
    missing_base.record(1, 1, 0.85);
    CHECK_THROWS_AS(fwt(missing_base), StateError);
    CHECK(fwt(missing_base, FwtBounds::literal) == 0.0);
}

TEST_CASE("record validates entries", "[metrics][errors]") {
    ResultMatrix r(3);
    CHECK_THROWS_AS(r.record(0, 0, 1.5), InputError);
    CHECK_THROWS_AS(r.record(0, 0, -0.01), InputError);
    CHECK_THROWS_AS(r.record(0, 2, 0.5), InputError); // beyond the probe column
    CHECK_THROWS_AS(r.record(3, 0, 0.5), InputError);
    r.record(0, 1, 0.5);
    CHECK_THROWS_AS(r.record(0, 1, 0.6), StateError);
    CHECK_THROWS_AS(r.record_baseline(0, 2.0), InputError);
    CHECK_THROWS_AS(r.require(1, 1), StateError);
}

TEST_CASE("results csv round trip", "[metrics][csv]") {
    std::mt19937 gen(11);
    for (int trial = 0; trial < 10; ++trial) {
        const auto f = random_filled(gen);
        const auto text = to_csv(f.matrix);
        const auto back = from_csv(text);
        REQUIRE(back.tasks() == f.T);
        for (std::size_t i = 0; i < f.T; ++i) {
            CHECK(back.baseline(i) == f.matrix.baseline(i));
            for (std::size_t j = 0; j < f.T; ++j) CHECK(back.at(i, j) == f.matrix.at(i, j));
        }
        CHECK(to_csv(back) == text);
        CHECK(aac(back) == aac(f.matrix));
    }
    SECTION("layout") {
        CHECK(to_csv(two_by_two()) == "row,task1,task2\nafter_task1,0.9,0.3\nafter_task2,0.8,0.85\nb_bar,0.1,0.1\n");
    }
    SECTION("malformed input") {
        CHECK_THROWS_AS(from_csv(""), FormatError);
        CHECK_THROWS_AS(from_csv("col,task1\nafter_task1,0.5\nb_bar,\n"), FormatError);
        CHECK_THROWS_AS(from_csv("row,task1\nafter_task1,abc\nb_bar,\n"), FormatError);
        CHECK_THROWS_AS(from_csv("row,task1\nafter_task1,1.5\nb_bar,\n"), FormatError);
        CHECK_THROWS_AS(from_csv("row,task1,task2\nafter_task1,0.5,0.1\nb_bar,,\n"), FormatError);
        CHECK_THROWS_AS(from_csv("row,task1\nafter_task1,0.5,0.2\nb_bar,\n"), FormatError);
        CHECK_NOTHROW(from_csv("row,task1\nafter_task1,0.5\nb_bar,\n"));
    }
}
