#include "../common/rig.hpp"
#include "doctest.h"

using namespace wearsync;

namespace {

sim::ActivityProtocol protocol()
{
    return sim::ActivityProtocol::parse("rest:3,walk:3");
}

// Runs a short recording and returns the CSV bundle.
store::CsvBundle record(std::uint64_t seed, bool transcript = false,
                        std::vector<std::vector<std::uint8_t>>* frames = nullptr)
{
    lab::LabOptions opt;
    opt.record_transcript = transcript;
    rig::Lab lab({}, opt);
    lab.add(rig::chest_config(protocol(), seed), sim::LinkLatency::symmetric(4, 1, seed + 10));
    const auto w = lab.add(rig::watch_config(protocol(), 3'000'000'000, seed + 1), sim::LinkLatency::symmetric(6, 2, seed + 20));
    REQUIRE(lab.both_synced());
    const auto id = lab.hub().start_session("det", "");
    lab.lab->run_for(4 * kNanosPerSecond);
    lab.stop_and_finalize(id);
    if (frames)
        *frames = lab.lab->uplink_frames(w);
    return lab.store->render_csv(id);
}

}  // namespace

TEST_SUITE("lab")
{
    TEST_CASE("same seeds give byte-identical sessions")
    {
        CHECK(record(7) == record(7));
        CHECK(record(7) != record(8));
    }

    TEST_CASE("transcripts hold every uplink frame and decode cleanly")
    {
        std::vector<std::vector<std::uint8_t>> frames;
        record(3, true, &frames);
        REQUIRE(frames.size() > 50);
        std::size_t samples = 0;
        for (const auto& f : frames) {
            const auto step = wire::decode(f);
            REQUIRE(step.consumed == f.size());
            const auto* msg = std::get_if<wire::WireMessage>(&step.result);
            REQUIRE(msg);
            samples += std::holds_alternative<wire::Samples>(*msg);
        }
        CHECK(samples > 20);
        CHECK(std::holds_alternative<wire::Hello>(std::get<wire::WireMessage>(wire::decode(frames.front()).result)));
    }

    TEST_CASE("transcripts stay empty unless requested")
    {
        rig::Lab lab;
        const auto w = lab.add(rig::watch_config(protocol(), 0));
        REQUIRE(lab.watch_synced());
        CHECK(lab.lab->uplink_frames(w).empty());
        CHECK(lab.lab->downlink_frames(w).empty());
    }

    TEST_CASE("virtual time only moves forward and stops at the target")
    {
        rig::Lab lab;
        lab.add(rig::watch_config(protocol(), 0));
        const auto t0 = lab.lab->now();
        lab.lab->run_for(1234567);
        CHECK(lab.lab->now().value == t0.value + 1234567);
        lab.lab->run_until(BootNanos{t0.value});
        CHECK(lab.lab->now().value == t0.value + 1234567);
        CHECK(lab.lab->clock().unix_now().value == 1'790'000'000'000 + (lab.lab->now().value - t0.value) / kNanosPerMilli);
    }

    TEST_CASE("run_until gives up at the limit")
    {
        rig::Lab lab;
        const auto t0 = lab.lab->now();
        CHECK_FALSE(lab.lab->run_until([] { return false; }, kNanosPerSecond));
        CHECK(lab.lab->now().value == t0.value + kNanosPerSecond);
    }

    TEST_CASE("a dropped downlink ping costs one round")
    {
        rig::Lab lab;
        const auto w = lab.add(rig::watch_config(protocol(), 0));
        lab.lab->drop_downlink(w, [](const wire::WireMessage& m) {
            const auto* p = std::get_if<wire::SyncPing>(&m);
            return p && p->seq == 4;
        });
        REQUIRE(lab.watch_synced());
        CHECK(lab.hub().watch_estimate()->rounds.size() == 9);
    }

    TEST_CASE("an injected malformed length closes only that link")
    {
        rig::Lab lab;
        const auto c = lab.add(rig::chest_config(protocol()));
        const auto w = lab.add(rig::watch_config(protocol(), 0));
        REQUIRE(lab.both_synced());
        lab.lab->inject_uplink(w, {0xff, 0xff, 0xff, 0xff, '{'});
        lab.lab->run_for(kNanosPerMilli);
        CHECK_FALSE(lab.lab->open(w));
        CHECK(lab.lab->open(c));
        CHECK(lab.hub().live_status().watch.link == hub::LinkState::Disconnected);
        CHECK(lab.hub().live_status().chest.link == hub::LinkState::Synced);
    }

    TEST_CASE("a garbled frame is skipped and the link survives")
    {
        rig::Lab lab;
        const auto w = lab.add(rig::watch_config(protocol(), 0));
        REQUIRE(lab.watch_synced());
        const std::string junk = "{\"type\":\"nope\"}";
        std::vector<std::uint8_t> frame{0, 0, 0, static_cast<std::uint8_t>(junk.size())};
        frame.insert(frame.end(), junk.begin(), junk.end());
        lab.lab->inject_uplink(w, frame);
        lab.lab->run_for(10 * kNanosPerSecond);
        CHECK(lab.lab->open(w));
        CHECK(lab.hub().live_status().watch.link == hub::LinkState::Synced);
        CHECK(lab.lab->device(w).last_error() == "protocol_error: unknown_type");
    }

    TEST_CASE("healing a partition before the timeout keeps the link")
    {
        rig::Lab lab;
        const auto w = lab.add(rig::watch_config(protocol(), 0));
        REQUIRE(lab.watch_synced());
        lab.lab->partition(w, true);
        lab.lab->run_for(1500 * kNanosPerMilli);
        lab.lab->partition(w, false);
        lab.lab->run_for(5 * kNanosPerSecond);
        CHECK(lab.lab->open(w));
        CHECK(lab.hub().live_status().watch.link == hub::LinkState::Synced);
        CHECK(lab.lab->device(w).missed_acks() == 0);
    }
}
