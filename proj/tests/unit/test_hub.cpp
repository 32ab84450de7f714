#include <algorithm>

#include "../common/rig.hpp"
#include "../common/state_model.hpp"
#include "doctest.h"

using namespace wearsync;
using rig::chest_config;
using rig::watch_config;

namespace {

sim::ActivityProtocol short_protocol()
{
    return sim::ActivityProtocol::parse("rest:5,run:5,walk:5");
}

bool is_pong(const wire::WireMessage& m)
{
    return std::holds_alternative<wire::SyncPong>(m);
}

}  // namespace

TEST_SUITE("hub")
{
    TEST_CASE("status before any device")
    {
        rig::Lab lab;
        const auto s = lab.hub().live_status();
        CHECK(s.state == hub::SessionState::Idle);
        CHECK(s.chest.link == hub::LinkState::Disconnected);
        CHECK(s.watch.link == hub::LinkState::Disconnected);
        CHECK_FALSE(s.chest.latest_bpm.has_value());
        CHECK_FALSE(s.watch.latest_bpm.has_value());
        CHECK_FALSE(s.session_id.has_value());
    }

    TEST_CASE("watch connects, then syncs after its rounds")
    {
        rig::Lab lab;
        lab.add(watch_config(short_protocol(), 42));
        lab.lab->run_for(kNanosPerMilli);
        CHECK(lab.hub().live_status().watch.link == hub::LinkState::Connected);
        REQUIRE(lab.watch_synced());
        const auto est = lab.hub().watch_estimate();
        REQUIRE(est);
        CHECK(est->mean_offset_ns == 42);
        CHECK(est->rounds.size() == 10);
        CHECK(lab.hub().live_status().watch.sync_rounds_used == 10);
        // the chest needs no handshake
        lab.add(chest_config(short_protocol()));
        lab.lab->run_for(kNanosPerMilli);
        CHECK(lab.hub().live_status().chest.link == hub::LinkState::Synced);
    }

    TEST_CASE("rounds with lost pongs are discarded")
    {
        rig::Lab lab;
        const auto w = lab.add(watch_config(short_protocol(), 5000), sim::LinkLatency::symmetric(5, 1, 3));
        int pongs = 0;
        lab.lab->drop_uplink(w, [&](const wire::WireMessage& m) {
            if (!is_pong(m))
                return false;
            ++pongs;
            return pongs == 3 || pongs == 7;
        });
        REQUIRE(lab.watch_synced());
        const auto est = lab.hub().watch_estimate();
        CHECK(est->rounds.size() == 8);
        CHECK(std::none_of(est->rounds.begin(), est->rounds.end(), [](const SyncRound& r) { return r.seq == 2 || r.seq == 6; }));

        lab.add(chest_config(short_protocol()));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        CHECK(lab.store->get_session(id).sync_rounds_used == 8);
        CHECK(lab.store->sync_rounds(id).size() == 8);
        CHECK(lab.store->get_session(id).title.empty());
    }

    TEST_CASE("sync fails when every pong is lost, then retries")
    {
        rig::Lab lab;
        const auto w = lab.add(watch_config(short_protocol(), 0));
        lab.lab->drop_uplink(w, is_pong);
        // ten pings 100 ms apart, then a one second wait for the last pong
        lab.lab->run_for(2500 * kNanosPerMilli);
        auto s = lab.hub().live_status();
        CHECK(s.watch.link == hub::LinkState::Connected);
        CHECK(s.watch.sync_error.find("0 of 10") != std::string::npos);

        lab.lab->drop_uplink(w, nullptr);
        REQUIRE(lab.watch_synced(5 * kNanosPerSecond));
        CHECK(lab.hub().live_status().watch.sync_error.empty());
    }

    TEST_CASE("mismatched pongs do not count")
    {
        rig::Lab lab;
        const auto w = lab.add(watch_config(short_protocol(), 0));
        lab.lab->run_for(kNanosPerMilli);
        wire::SyncPong forged{0, 12345, 1};
        lab.lab->inject_uplink(w, wire::encode(forged));
        lab.lab->inject_uplink(w, wire::encode(wire::SyncPong{77, 0, 1}));
        REQUIRE(lab.watch_synced());
        CHECK(lab.hub().discarded_pongs() >= 2);
        CHECK(lab.hub().watch_estimate()->mean_offset_ns == 0);
    }

    TEST_CASE("hello refusals")
    {
        rig::Lab lab;
        const auto c1 = lab.add(chest_config(short_protocol()));
        lab.lab->run_for(10 * kNanosPerMilli);
        auto second = chest_config(short_protocol());
        second.device_id = "chest-2";
        const auto c2 = lab.add(second);
        lab.lab->run_for(10 * kNanosPerMilli);
        CHECK(lab.lab->open(c1));
        CHECK_FALSE(lab.lab->open(c2));
        CHECK(lab.lab->device(c2).last_error().rfind("duplicate_kind", 0) == 0);

        rig::Lab lab2;
        const auto w = lab2.lab->connect(watch_config(short_protocol(), 0), {});
        lab2.lab->run_for(10 * kNanosPerMilli);
        const auto v2 = lab2.lab->connect(chest_config(short_protocol()), {});
        lab2.lab->inject_uplink(v2, {});
        lab2.lab->run_for(10 * kNanosPerMilli);
        CHECK(lab2.lab->open(w));

        // a raw connection that says hello with version 2
        store::Store s(":memory:");
        model::CaptureOutbox out;
        ManualClock clock(BootNanos{1}, UnixMillis{1});
        hub::HubCore hub({}, clock, s, out);
        hub.on_connect(1, clock.boot_now());
        wire::Hello hello{2, chest_config(short_protocol()).descriptor()};
        hub.on_message(1, hello, clock.boot_now());
        REQUIRE(out.sent[1].size() == 1);
        CHECK(std::get<wire::Error>(out.sent[1][0]).code == "version_mismatch");
        CHECK(out.closed.count(1));

        hub.on_connect(2, clock.boot_now());
        hub.on_message(2, wire::Keepalive{}, clock.boot_now());
        CHECK(std::get<wire::Error>(out.sent[2][0]).code == "expected_hello");
        CHECK(out.closed.count(2));

        hub.on_connect(3, clock.boot_now());
        auto bad = chest_config(short_protocol()).descriptor();
        bad.streams.pop_back();
        hub.on_message(3, wire::Hello{1, bad}, clock.boot_now());
        CHECK(std::get<wire::Error>(out.sent[3][0]).code == "invalid_descriptor");

        hub.on_connect(4, clock.boot_now());
        hub.on_decode_error(4, wire::DecodeError::MalformedLength, clock.boot_now());
        CHECK(out.closed.count(4));
        CHECK(hub.live_status().chest.link == hub::LinkState::Disconnected);
    }

    TEST_CASE("start needs both devices and names the missing one")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        lab.lab->run_for(10 * kNanosPerMilli);
        const auto id = lab.hub().create_session("t", "d");
        try {
            lab.hub().start_session(id);
            FAIL("started without a watch");
        } catch (const hub::HubError& e) {
            CHECK(e.code() == hub::HubError::Code::NotReady);
            CHECK(std::string(e.what()).find("watch") != std::string::npos);
            CHECK(std::string(e.what()).find("chest") == std::string::npos);
        }
        CHECK(lab.hub().state() == hub::SessionState::Ready);
        CHECK_THROWS_AS(lab.hub().create_session("again", ""), hub::HubError);
        CHECK_THROWS_AS(lab.hub().stop_session(id), hub::HubError);
        CHECK_THROWS_AS(lab.hub().start_session(id + 1), hub::HubError);
    }

    TEST_CASE("full session: ingest, rebase, stamps, conservation")
    {
        rig::Lab lab;
        const std::int64_t offset = -2'000'000'123;
        lab.add(chest_config(short_protocol()), sim::LinkLatency::symmetric(3, 0.5, 1));
        lab.add(watch_config(short_protocol(), offset), sim::LinkLatency::symmetric(3, 0.5, 2));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("full", "");
        CHECK(lab.hub().live_status().elapsed_ms == 0);

        std::int64_t last_elapsed = -1;
        for (int i = 0; i < 15; ++i) {
            lab.lab->run_for(kNanosPerSecond);
            const auto s = lab.hub().live_status();
            CHECK(s.elapsed_ms > last_elapsed);
            last_elapsed = s.elapsed_ms;
        }
        CHECK(last_elapsed == 15'000);
        lab.stop_and_finalize(id);

        const auto meta = lab.store->get_session(id);
        CHECK(meta.status == store::SessionStatus::Stopped);
        CHECK(*meta.duration_ms() == meta.end->unix_ms.value - meta.start->unix_ms.value);
        CHECK(meta.config_text.find("sync.estimator=corrected") != std::string::npos);
        CHECK(meta.config_text.find("units.acc=m/s^2") != std::string::npos);

        const auto bundle = lab.store->render_csv(id);
        const std::int64_t mean = *meta.mean_offset_ns;
        for (const auto& [name, text] : bundle) {
            if (name != "watch_acc.csv" && name != "watch_hr.csv" && name != "watch_gyro.csv")
                continue;
            const auto rows = store::parse_csv(text);
            for (std::size_t r = 1; r < rows.size(); ++r)
                REQUIRE(std::stoll(rows[r][2]) == std::stoll(rows[r][1]) + mean);
        }

        for (auto s : store::kAllStreams) {
            const auto& c = lab.hub().counters(s);
            CHECK(c.received > 0);
            CHECK(c.stored + c.rejected + c.dropped == c.received);
            CHECK(c.stored == lab.store->row_count(id, s));
        }
        // 15 s at 1 Hz, inclusive of both ends, give or take a boundary sample
        const auto chest_hr = lab.store->row_count(id, store::Stream::ChestHr);
        CHECK(chest_hr >= 15);
        CHECK(chest_hr <= 16);
        CHECK(lab.store->row_count(id, store::Stream::ChestAcc) >= 3000);
        CHECK(lab.hub().live_status().elapsed_ms == 15'000);
    }

    TEST_CASE("chest heart rate carries hub arrival stamps")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()), sim::LinkLatency::symmetric(7, 0, 1));
        lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        lab.lab->run_for(3 * kNanosPerSecond);
        lab.stop_and_finalize(id);
        const auto meta = lab.store->get_session(id);
        const auto rows = store::parse_csv(lab.store->render_csv(id)[1].second);
        REQUIRE(rows.size() >= 3);
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const BootNanos arrival{std::stoll(rows[r][1])};
            CHECK(std::stoll(rows[r][2]) == boot_to_unix_ms(arrival, *meta.start).value);
            // StartCapture and the first sample each cross a 7 ms link
            CHECK(arrival.value - meta.start->boot_ns.value >= 14 * kNanosPerMilli);
            if (r > 1) {
                const std::int64_t gap = arrival.value - std::stoll(rows[r - 1][1]);
                CHECK(gap >= kNanosPerSecond - kNanosPerMilli);
                CHECK(gap <= kNanosPerSecond + kNanosPerMilli);
            }
        }
    }

    TEST_CASE("watch zero heart rate is low quality, never a disconnect")
    {
        auto protocol = sim::ActivityProtocol::parse("run:30");
        rig::Lab lab;
        lab.add(chest_config(protocol));
        auto w = watch_config(protocol, 0);
        w.hr.dropout_prob = {1.0, 1.0, 1.0};
        lab.add(w);
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        for (int i = 0; i < 10; ++i) {
            lab.lab->run_for(kNanosPerSecond);
            const auto s = lab.hub().live_status();
            CHECK(s.watch.link == hub::LinkState::Synced);
            CHECK(s.watch.latest_bpm == 0);
            CHECK(s.watch.low_quality);
            CHECK_FALSE(s.chest.low_quality);
        }
        lab.stop_and_finalize(id);
    }

    TEST_CASE("silent link is marked disconnected within three keepalive periods")
    {
        rig::Lab lab;
        const auto w = lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.watch_synced());
        lab.lab->run_for(500 * kNanosPerMilli);
        const BootNanos cut = lab.lab->now();
        lab.lab->partition(w, true);
        REQUIRE(lab.lab->run_until([&] { return lab.hub().live_status().watch.link == hub::LinkState::Disconnected; },
                                   10 * kNanosPerSecond));
        const std::int64_t took = lab.lab->now().value - cut.value;
        CHECK(took <= 3 * kNanosPerSecond);
        CHECK(took >= 2 * kNanosPerSecond);
        CHECK_FALSE(lab.lab->open(w));
    }

    TEST_CASE("a reconnecting watch re-syncs and resumes capture")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        const auto w = lab.add(watch_config(short_protocol(), 1'000'000));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        lab.lab->run_for(2 * kNanosPerSecond);
        lab.lab->disconnect(w);
        CHECK(lab.hub().live_status().watch.link == hub::LinkState::Disconnected);
        lab.lab->run_for(kNanosPerSecond);
        const auto w2 = lab.lab->reconnect(w);
        REQUIRE(lab.watch_synced());
        lab.lab->run_for(2 * kNanosPerSecond);
        CHECK(lab.lab->device(w2).capturing());
        lab.stop_and_finalize(id);
        // the session keeps the estimate frozen at start
        CHECK(lab.store->get_session(id).mean_offset_ns == 1'000'000);
        CHECK(lab.hub().counters(store::Stream::WatchAcc).stored >= 200);
    }

    TEST_CASE("stop with a device already gone still finalizes")
    {
        rig::Lab lab;
        const auto c = lab.add(chest_config(short_protocol()));
        lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        lab.lab->run_for(2 * kNanosPerSecond);
        lab.lab->disconnect(c);
        lab.lab->run_for(kNanosPerSecond);
        lab.stop_and_finalize(id);
        CHECK(lab.store->get_session(id).status == store::SessionStatus::Stopped);
        CHECK(lab.store->row_count(id, store::Stream::ChestHr) >= 2);
        CHECK(lab.store->render_csv(id).size() == 6);
    }

    TEST_CASE("immediate stop gives an empty, valid session")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        lab.stop_and_finalize(id);
        const auto meta = lab.store->get_session(id);
        CHECK(meta.duration_ms() == 0);
        std::int64_t rows = 0;
        for (auto s : store::kAllStreams)
            rows += lab.store->row_count(id, s);
        CHECK(rows <= 5);
    }

    TEST_CASE("in-flight samples land during grace, later ones are dropped")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        const auto w = lab.add(watch_config(short_protocol(), 0), sim::LinkLatency{{1500, 0, 1}, {0, 0, 2}});
        REQUIRE(lab.both_synced(20 * kNanosPerSecond));
        const auto id = lab.hub().start_session("", "");
        lab.lab->run_for(3 * kNanosPerSecond);
        lab.hub().stop_session(id);
        // a 1.5 s uplink still beats the 2 s grace window
        const auto stored_at_stop = lab.hub().counters(store::Stream::WatchAcc).stored;
        lab.lab->run_for(1900 * kNanosPerMilli);
        CHECK(lab.hub().counters(store::Stream::WatchAcc).stored > stored_at_stop);
        CHECK_FALSE(lab.hub().session_finalized());
        lab.lab->run_for(200 * kNanosPerMilli);
        CHECK(lab.hub().session_finalized());

        const auto dropped_before = lab.hub().counters(store::Stream::WatchHr).dropped;
        lab.lab->inject_uplink(w, wire::encode(wire::Samples{id, wire::StreamKind::Hr, {wire::HrItem{1'000'000'000'000, 80}}, {}}));
        lab.lab->run_for(2 * kNanosPerSecond);
        CHECK(lab.hub().counters(store::Stream::WatchHr).dropped == dropped_before + 1);
        CHECK(lab.store->get_session(id).status == store::SessionStatus::Stopped);
    }

    TEST_CASE("samples before recording or for another session are dropped")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        const auto w = lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        lab.lab->inject_uplink(w, wire::encode(wire::Samples{1, wire::StreamKind::Acc, {}, {wire::MotionItem{1, 0, 0, 0}}}));
        lab.lab->run_for(10 * kNanosPerMilli);
        CHECK(lab.hub().counters(store::Stream::WatchAcc).dropped == 1);

        const auto id = lab.hub().start_session("", "");
        lab.lab->inject_uplink(w, wire::encode(wire::Samples{id + 5, wire::StreamKind::Acc, {}, {wire::MotionItem{1, 0, 0, 0}}}));
        lab.lab->run_for(10 * kNanosPerMilli);
        CHECK(lab.hub().counters(store::Stream::WatchAcc).dropped == 2);
        CHECK(lab.hub().counters(store::Stream::WatchAcc).stored == 0);

        // a watch heart-rate item without a stamp is rejected
        lab.lab->inject_uplink(w, wire::encode(wire::Samples{id, wire::StreamKind::Hr, {wire::HrItem{std::nullopt, 70}}, {}}));
        lab.lab->run_for(10 * kNanosPerMilli);
        CHECK(lab.hub().counters(store::Stream::WatchHr).rejected == 1);
    }

    TEST_CASE("a batch of 100 items becomes 100 rows in order")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        const auto w = lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        wire::Samples batch{id, wire::StreamKind::Gyro, {}, {}};
        for (int i = 0; i < 100; ++i)
            batch.motion.push_back(wire::MotionItem{-1'000'000 + i, double(i), 0, 0});
        lab.lab->inject_uplink(w, wire::encode(batch));
        lab.lab->run_for(1);
        CHECK(lab.hub().counters(store::Stream::WatchGyro).stored == 100);
        lab.stop_and_finalize(id);
        const auto rows = store::parse_csv(lab.store->render_csv(id)[5].second);
        REQUIRE(rows.size() > 100);
        for (int i = 0; i < 100; ++i)
            CHECK(rows[static_cast<std::size_t>(i) + 1][3] == store::format_float(i));
    }

    TEST_CASE("non-monotonic device stamps are rejected and counted")
    {
        rig::Lab lab;
        lab.add(chest_config(short_protocol()));
        const auto w = lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.both_synced());
        const auto id = lab.hub().start_session("", "");
        wire::Samples batch{id, wire::StreamKind::Gyro, {}, {{-10, 0, 0, 0}, {-20, 0, 0, 0}, {-10, 0, 0, 0}, {-5, 0, 0, 0}}};
        lab.lab->inject_uplink(w, wire::encode(batch));
        lab.lab->run_for(1);
        const auto& c = lab.hub().counters(store::Stream::WatchGyro);
        CHECK(c.stored == 2);
        CHECK(c.rejected == 2);
    }

    TEST_CASE("zero latency, zero offset gives an exact zero estimate")
    {
        rig::Lab lab;
        lab.add(watch_config(short_protocol(), 0));
        REQUIRE(lab.watch_synced());
        const auto est = lab.hub().watch_estimate();
        CHECK(est->mean_offset_ns == 0);
        for (auto v : est->per_round_offsets_ns)
            CHECK(v == 0);
    }

    TEST_CASE("randomized event sequences keep the safety properties")
    {
        model::Stats stats;
        const auto problem = model::run_many(1, 2000, 80, stats);
        CHECK_MESSAGE(problem.empty(), problem);
        CHECK(stats.recordings > 50);
        CHECK(stats.rows_stored > 100);
        CHECK(stats.refused_starts > 100);
    }
}
