#include <cmath>
#include <vector>

#include "diveup/rng.hpp"
#include "doctest.h"

using diveup::Rng;

TEST_CASE("equal seeds reproduce identical byte streams") {
    Rng a(123, 4), b(123, 4);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("distinct streams differ") {
    Rng a(123, 0), b(123, 1);
    int equal = 0;
    for (int i = 0; i < 64; ++i) {
        if (a.next_u64() == b.next_u64()) equal++;
    }
    CHECK(equal == 0);
}

TEST_CASE("fork does not disturb the parent sequence") {
    Rng a(55, 7), b(55, 7);
    a.uniform();
    Rng child = a.fork(3);
    (void)child;
    b.uniform();
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forked streams are reproducible and distinct") {
    Rng a(9, 0);
    Rng c1 = a.fork(1), c2 = a.fork(1), c3 = a.fork(2);
    bool all_equal = true;
    bool any_cross_equal = false;
    for (int i = 0; i < 100; ++i) {
        const uint64_t v1 = c1.next_u64(), v2 = c2.next_u64(), v3 = c3.next_u64();
        all_equal = all_equal && (v1 == v2);
        any_cross_equal = any_cross_equal || (v1 == v3);
    }
    CHECK(all_equal);
    CHECK_FALSE(any_cross_equal);
}

TEST_CASE("uniform stays in range and covers it roughly evenly") {
    Rng rng(2024);
    std::vector<int> buckets(10, 0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        buckets[static_cast<int>(u * 10)]++;
    }
    for (int b : buckets) {
        CHECK(b > n / 10 - 400);
        CHECK(b < n / 10 + 400);
    }
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(77);
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.03);
    CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("uniform_int covers the inclusive range") {
    Rng rng(5);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 1000; ++i) seen[rng.uniform_int(0, 4)]++;
    for (int s : seen) CHECK(s > 0);
}
