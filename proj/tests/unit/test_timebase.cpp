#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <thread>
#include <vector>

#include "doctest.h"
#include "gen.hpp"
#include "wearsync/clock.hpp"
#include "wearsync/timebase.hpp"

using namespace wearsync;

namespace {

SyncRound round_of(std::int64_t t1, std::int64_t t2, std::int64_t t3, std::int64_t seq = 0)
{
    return SyncRound{seq, BootNanos{t1}, BootNanos{t2}, BootNanos{t3}};
}

// One exchange against a device whose clock reads hub_time - offset.
SyncRound simulate_round(std::int64_t t1, std::int64_t offset, std::int64_t d_up_to_device, std::int64_t d_back)
{
    const std::int64_t t2 = (t1 + d_up_to_device) - offset;
    const std::int64_t t3 = t1 + d_up_to_device + d_back;
    return round_of(t1, t2, t3);
}

bool is_leap(int year)
{
    return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}

}  // namespace

TEST_SUITE("timebase")
{
    TEST_CASE("epoch-2000 offset matches day counting from 1970")
    {
        std::int64_t days = 0;
        for (int year = 1970; year < 2000; ++year)
            days += is_leap(year) ? 366 : 365;
        CHECK(days == 10957);
        CHECK(kEpoch2000OffsetNs == days * 86400 * kNanosPerSecond);
        CHECK(epoch2000_to_unix_ns(Epoch2000Nanos{0}) == 946684800000000000);
        CHECK(epoch2000_to_unix_ns(Epoch2000Nanos{1}) == 946684800000000001);
        CHECK(epoch2000_to_unix_ns(Epoch2000Nanos{-kNanosPerSecond}) == 946684799000000000);
    }

    TEST_CASE("epoch-2000 conversion round-trips over the valid range")
    {
        testgen::Gen g(11);
        const std::int64_t lo = std::numeric_limits<std::int64_t>::min() + kEpoch2000OffsetNs;
        const std::int64_t hi = std::numeric_limits<std::int64_t>::max() - kEpoch2000OffsetNs;
        for (std::int64_t v : {lo, hi, std::int64_t{0}, std::int64_t{-1}}) {
            CHECK(unix_ns_to_epoch2000(epoch2000_to_unix_ns(Epoch2000Nanos{v})).value == v);
        }
        for (int i = 0; i < 100000; ++i) {
            const std::int64_t v = g.range(lo, hi);
            REQUIRE(unix_ns_to_epoch2000(epoch2000_to_unix_ns(Epoch2000Nanos{v})).value == v);
        }
        CHECK_THROWS_AS(epoch2000_to_unix_ns(Epoch2000Nanos{hi + 1}), TimebaseError);
        CHECK_THROWS_AS(unix_ns_to_epoch2000(lo - 1), TimebaseError);
    }

    TEST_CASE("single-round estimators")
    {
        CHECK(estimate_offset_round(round_of(100, 100, 100), Estimator::MinusHalfRtt) == 0);
        CHECK(estimate_offset_round(round_of(100, 100, 100), Estimator::Corrected) == 0);
        // true offset 1 ms, 0.5 ms each way
        CHECK(estimate_offset_round(round_of(0, -500000, 1000000), Estimator::Corrected) == 1000000);
        CHECK(estimate_offset_round(round_of(0, -500000, 1000000), Estimator::MinusHalfRtt) == 0);
        // odd RTT: the half truncates toward zero
        CHECK(estimate_offset_round(round_of(0, 0, 3), Estimator::Corrected) == 1);
        CHECK(estimate_offset_round(round_of(0, 0, 3), Estimator::MinusHalfRtt) == -1);
    }

    TEST_CASE("estimators differ by exactly the truncated round-trip term")
    {
        testgen::Gen g(21);
        for (int i = 0; i < 100000; ++i) {
            const std::int64_t t1 = g.range(-(std::int64_t{1} << 60), std::int64_t{1} << 60);
            const std::int64_t t2 = g.range(-(std::int64_t{1} << 60), std::int64_t{1} << 60);
            const std::int64_t t3 = t1 + g.range(0, std::int64_t{1} << 40);
            const auto r = round_of(t1, t2, t3);
            REQUIRE(estimate_offset_round(r, Estimator::MinusHalfRtt) - estimate_offset_round(r, Estimator::Corrected)
                    == -2 * ((t3 - t1) / 2));
        }
    }

    TEST_CASE("zero latency recovers the offset with either estimator")
    {
        testgen::Gen g(31);
        for (int i = 0; i < 10000; ++i) {
            const std::int64_t offset = g.range(-(std::int64_t{1} << 50), std::int64_t{1} << 50);
            const std::int64_t t1 = g.range(0, std::int64_t{1} << 50);
            const auto r = simulate_round(t1, offset, 0, 0);
            REQUIRE(estimate_offset_round(r, Estimator::MinusHalfRtt) == offset);
            REQUIRE(estimate_offset_round(r, Estimator::Corrected) == offset);
        }
    }

    TEST_CASE("symmetric latency: corrected exact, minus_half_rtt biased by twice the delay")
    {
        testgen::Gen g(41);
        for (int i = 0; i < 10000; ++i) {
            const std::int64_t offset = g.range(-(std::int64_t{1} << 50), std::int64_t{1} << 50);
            const std::int64_t t1 = g.range(0, std::int64_t{1} << 50);
            const std::int64_t delay = g.range(0, 50 * kNanosPerMilli);
            const auto r = simulate_round(t1, offset, delay, delay);
            REQUIRE(estimate_offset_round(r, Estimator::Corrected) == offset);
            REQUIRE(estimate_offset_round(r, Estimator::MinusHalfRtt) == offset - 2 * delay);
        }
    }

    TEST_CASE("asymmetric latency biases the corrected estimate by half the difference")
    {
        const std::int64_t up = 8 * kNanosPerMilli;
        const std::int64_t down = 2 * kNanosPerMilli;
        const auto r = simulate_round(1000, 777, up, down);
        CHECK(estimate_offset_round(r, Estimator::Corrected) - 777 == (down - up) / 2);
    }

    TEST_CASE("aggregate: truncated mean, order kept, empty input rejected")
    {
        std::vector<SyncRound> zeros{round_of(5, 5, 5, 0), round_of(9, 9, 9, 1)};
        CHECK(aggregate_offset(zeros, Estimator::Corrected).mean_offset_ns == 0);

        // offsets 10, 20, 30 with zero RTT
        std::vector<SyncRound> rounds{round_of(10, 0, 10, 0), round_of(20, 0, 20, 1), round_of(30, 0, 30, 2)};
        const auto e = aggregate_offset(rounds, Estimator::Corrected);
        CHECK(e.mean_offset_ns == 20);
        CHECK(e.per_round_offsets_ns == std::vector<std::int64_t>{10, 20, 30});
        CHECK(e.rounds == rounds);

        std::vector<std::int64_t> negative{-1, -2};
        CHECK(truncated_mean(negative) == -1);
        std::vector<std::int64_t> positive{1, 2};
        CHECK(truncated_mean(positive) == 1);
        std::vector<std::int64_t> huge{std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max()};
        CHECK(truncated_mean(huge) == std::numeric_limits<std::int64_t>::max());

        CHECK_THROWS_AS(aggregate_offset(std::vector<SyncRound>{}, Estimator::Corrected), TimebaseError);
    }

    TEST_CASE("aggregate mean is permutation invariant")
    {
        testgen::Gen g(51);
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<SyncRound> rounds;
            const auto n = g.range(1, 20);
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t t1 = g.range(0, std::int64_t{1} << 40);
                rounds.push_back(round_of(t1, g.range(-(std::int64_t{1} << 40), std::int64_t{1} << 40),
                                          t1 + g.range(0, 1 << 24), i));
            }
            const auto base = aggregate_offset(rounds, Estimator::Corrected).mean_offset_ns;
            std::shuffle(rounds.begin(), rounds.end(), g.engine());
            REQUIRE(aggregate_offset(rounds, Estimator::Corrected).mean_offset_ns == base);
        }
    }

    TEST_CASE("min-RTT filter keeps rounds within 1.5x the fastest")
    {
        std::vector<SyncRound> rounds{round_of(0, 0, 100, 0), round_of(0, 0, 150, 1), round_of(0, 0, 151, 2),
                                      round_of(0, 0, 1000, 3)};
        const auto e = aggregate_offset(rounds, Estimator::Corrected, AggregateOptions{true});
        REQUIRE(e.rounds.size() == 2);
        CHECK(e.rounds[0].seq == 0);
        CHECK(e.rounds[1].seq == 1);
        CHECK(e.min_rtt_filtered);
        CHECK(aggregate_offset(rounds, Estimator::Corrected).rounds.size() == 4);
    }

    TEST_CASE("ten noisy rounds land within 2 ms of the true offset")
    {
        // Reference simulation independent of the hub: Normal(5 ms, 1 ms) truncated at 0 each way.
        std::mt19937_64 rng(20260101);
        std::normal_distribution<double> delay(5e6, 1e6);
        auto draw = [&] { return std::max<std::int64_t>(0, static_cast<std::int64_t>(delay(rng))); };
        const std::int64_t truth = 123456789;
        int within = 0;
        const int trials = 2000;
        for (int trial = 0; trial < trials; ++trial) {
            std::vector<SyncRound> rounds;
            std::int64_t t1 = 1'000'000'000;
            for (int i = 0; i < 10; ++i, t1 += 100 * kNanosPerMilli) {
                auto r = simulate_round(t1, truth, draw(), draw());
                r.seq = i;
                rounds.push_back(r);
            }
            const auto e = aggregate_offset(rounds, Estimator::Corrected);
            if (std::llabs(e.mean_offset_ns - truth) <= 2 * kNanosPerMilli)
                ++within;
            // the identity holds per trial, up to truncation of the per-round halves
            const auto minus = aggregate_offset(rounds, Estimator::MinusHalfRtt);
            std::int64_t rtt_sum = 0;
            for (const auto& r : rounds)
                rtt_sum += r.rtt_ns();
            REQUIRE(std::llabs((minus.mean_offset_ns - e.mean_offset_ns) + rtt_sum / 10) <= 2);
        }
        CHECK(within == trials);
    }

    TEST_CASE("rebase shifts by the mean and preserves spacing")
    {
        OffsetEstimate e;
        e.rounds.push_back(round_of(0, 0, 0));
        e.per_round_offsets_ns.push_back(0);
        CHECK(rebase(BootNanos{0}, e).value == 0);
        e.mean_offset_ns = -50;
        CHECK(rebase(BootNanos{1000}, e).value == 950);

        testgen::Gen g(61);
        for (int i = 0; i < 10000; ++i) {
            const std::int64_t off = g.range(-(std::int64_t{1} << 50), std::int64_t{1} << 50);
            const std::int64_t a = g.range(-(std::int64_t{1} << 60), std::int64_t{1} << 60);
            const std::int64_t b = g.range(-(std::int64_t{1} << 60), std::int64_t{1} << 60);
            const auto ra = rebase(BootNanos{a}, off);
            const auto rb = rebase(BootNanos{b}, off);
            REQUIRE(ra.value - rb.value == a - b);
            REQUIRE((a < b) == (ra < rb));
        }

        CHECK_THROWS_AS(rebase(BootNanos{std::numeric_limits<std::int64_t>::max()}, 1), TimebaseError);
        CHECK_THROWS_AS(rebase(BootNanos{std::numeric_limits<std::int64_t>::min()}, -1), TimebaseError);
        CHECK_THROWS_AS(rebase(BootNanos{1}, OffsetEstimate{}), TimebaseError);
    }

    TEST_CASE("overflowing rounds are rejected, not wrapped")
    {
        const auto max = std::numeric_limits<std::int64_t>::max();
        const auto min = std::numeric_limits<std::int64_t>::min();
        CHECK_THROWS_AS(estimate_offset_round(round_of(max, min, max), Estimator::Corrected), TimebaseError);
        CHECK_THROWS_AS(estimate_offset_round(round_of(min, 0, max), Estimator::Corrected), TimebaseError);
    }

    TEST_CASE("boot to unix rounds half up over a full millisecond sweep")
    {
        const TimeAnchor anchor{BootNanos{7'000'000'123}, UnixMillis{1'790'000'000'000}};
        CHECK(boot_to_unix_ms(anchor.boot_ns, anchor) == anchor.unix_ms);
        CHECK(boot_to_unix_ms(BootNanos{anchor.boot_ns.value + 1'000'000}, anchor).value == anchor.unix_ms.value + 1);
        CHECK(boot_to_unix_ms(BootNanos{anchor.boot_ns.value + 1'499'999}, anchor).value == anchor.unix_ms.value + 1);
        CHECK(boot_to_unix_ms(BootNanos{anchor.boot_ns.value + 1'500'000}, anchor).value == anchor.unix_ms.value + 2);

        // reference: split into whole ms and remainder, remainder >= 0.5 ms rounds up
        auto oracle = [](std::int64_t delta) {
            std::int64_t whole = delta / 1'000'000;
            std::int64_t rem = delta % 1'000'000;
            if (rem < 0) {
                rem += 1'000'000;
                --whole;
            }
            return whole + (rem >= 500'000 ? 1 : 0);
        };
        for (std::int64_t base : {std::int64_t{0}, std::int64_t{5'000'000}, std::int64_t{-3'000'000}}) {
            for (std::int64_t d = 0; d < 1'000'000; ++d) {
                const std::int64_t delta = base + d;
                REQUIRE(boot_to_unix_ms(BootNanos{anchor.boot_ns.value + delta}, anchor).value
                        == anchor.unix_ms.value + oracle(delta));
            }
        }
    }

    TEST_CASE("estimator names round-trip")
    {
        for (auto e : {Estimator::MinusHalfRtt, Estimator::Corrected})
            CHECK(parse_estimator(to_string(e)) == e);
        CHECK_FALSE(parse_estimator("median").has_value());
    }

    TEST_CASE("manual clock is monotonic and keeps both bases in step")
    {
        ManualClock clock(BootNanos{1000}, UnixMillis{1'790'000'000'000});
        clock.advance(2'500'000);
        CHECK(clock.boot_now().value == 2'501'000);
        CHECK(clock.unix_now().value == 1'790'000'000'002);
        CHECK_THROWS(clock.set(BootNanos{0}));
    }

    TEST_CASE("scaled system clock runs faster by its scale")
    {
        ScaledSystemClock fast(50.0);
        const auto b0 = fast.boot_now();
        const auto u0 = fast.unix_now();
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        const auto b1 = fast.boot_now();
        const auto u1 = fast.unix_now();
        const double sim_ms = static_cast<double>(b1.value - b0.value) / 1e6;
        CHECK(sim_ms >= 50.0 * 20.0 * 0.9);
        CHECK(std::abs(static_cast<double>(u1.value - u0.value) - sim_ms) <= 2.0);
        CHECK(fast.to_real_ns(50 * kNanosPerMilli) == kNanosPerMilli);
        CHECK_THROWS(ScaledSystemClock(0.0));
    }
}
