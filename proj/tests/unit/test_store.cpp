#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "../common/temp_dir.hpp"
#include "doctest.h"
#include "gen.hpp"
#include "wearsync/store/csv.hpp"
#include "wearsync/store/store.hpp"

using namespace wearsync;
using namespace wearsync::store;
namespace fs = std::filesystem;
using testfs::TempDir;

namespace {

OffsetEstimate estimate_of(std::int64_t offset, int rounds)
{
    std::vector<SyncRound> rs;
    for (int i = 0; i < rounds; ++i)
        rs.push_back(SyncRound{i, BootNanos{1000 * i}, BootNanos{1000 * i - offset}, BootNanos{1000 * i}});
    return aggregate_offset(rs, Estimator::Corrected);
}

const TimeAnchor kStart{BootNanos{10 * kNanosPerSecond}, UnixMillis{1'790'000'000'000}};
const TimeAnchor kEnd{BootNanos{20 * kNanosPerSecond}, UnixMillis{1'790'000'010'000}};

SessionId recording_session(Store& s, const std::string& title = "t")
{
    const auto id = s.create_session(title, "d", UnixMillis{1'790'000'000'000});
    s.begin_recording(id, kStart, estimate_of(-50, 3), "sync.estimator=corrected");
    return id;
}

// Appends a few rows to every stream.
void fill(Store& s, SessionId id, int n)
{
    for (int i = 0; i < n; ++i) {
        const BootNanos boot{kStart.boot_ns.value + i * kNanosPerSecond};
        s.append(id, ChestHrRow{boot, boot_to_unix_ms(boot, kStart), 60 + i});
        const Epoch2000Nanos e{800'000'000'000'000'000 + i * 5'000'000};
        s.append(id, ChestAccRow{e, epoch2000_to_unix_ns(e), 0.1 * i, -0.25, 9.81});
        const BootNanos dev{1000 + i * 20'000'000};
        s.append(id, WatchHrRow{dev, rebase(dev, -50), i % 3 == 0 ? 0 : 70 + i});
        s.append(id, Stream::WatchAcc, WatchMotionRow{dev, rebase(dev, -50), 1.0 / 3.0, 2.5e-7, -9.81});
        s.append(id, Stream::WatchGyro, WatchMotionRow{dev, rebase(dev, -50), 123456.5, 0, -1});
    }
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("store")
{
    TEST_CASE("csv headers are exact")
    {
        CHECK(schema_for(Stream::ChestHr).header() == "session_id,arrival_boot_ns,arrival_unix_ms,bpm");
        CHECK(schema_for(Stream::ChestAcc).header() == "session_id,device_epoch2000_ns,unix_ns,x,y,z");
        CHECK(schema_for(Stream::WatchHr).header() == "session_id,device_boot_ns,rebased_boot_ns,bpm");
        CHECK(schema_for(Stream::WatchAcc).header() == "session_id,device_boot_ns,rebased_boot_ns,x,y,z");
        CHECK(schema_for(Stream::WatchGyro).header() == "session_id,device_boot_ns,rebased_boot_ns,x,y,z");
        CHECK(meta_schema().header()
              == "id,title,description,created_unix_ms,start_boot_ns,start_unix_ms,end_boot_ns,end_unix_ms,"
                 "mean_offset_ns,sync_rounds_used,estimator,config_text");
    }

    TEST_CASE("float formatting uses six fractional digits")
    {
        CHECK(format_float(9.81) == "9.810000");
        CHECK(format_float(-0.0000004) == "-0.000000");
        CHECK(format_float(1.0 / 3.0) == "0.333333");
        CHECK(format_float(123456.5) == "123456.500000");
        CHECK(format_float(2.5e-7) == "0.000000");
    }

    TEST_CASE("csv quoting and parsing")
    {
        CHECK(csv_escape("plain") == "plain");
        CHECK(csv_escape("a,b") == "\"a,b\"");
        CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
        CHECK(csv_line({"1", "x\ny", ""}) == "1,\"x\ny\",\n");
        const auto rows = parse_csv("a,b\n\"x,1\",\"multi\nline\"\n,\n");
        REQUIRE(rows.size() == 3);
        CHECK(rows[1] == CsvRow{"x,1", "multi\nline"});
        CHECK(rows[2] == CsvRow{"", ""});
        CHECK_THROWS_AS(parse_csv("a\r\n"), CsvError);
        CHECK_THROWS_AS(parse_csv("\"open"), CsvError);
    }

    TEST_CASE("csv quoting round-trips arbitrary text")
    {
        testgen::Gen g(3);
        for (int i = 0; i < 5000; ++i) {
            CsvRow row;
            const auto n = g.range(1, 6);
            for (std::int64_t c = 0; c < n; ++c)
                row.push_back(g.text(20));
            const auto parsed = parse_csv(csv_line(row));
            REQUIRE(parsed.size() == 1);
            REQUIRE(parsed[0] == row);
        }
    }

    TEST_CASE("sessions list newest first and keep their metadata")
    {
        Store s(":memory:");
        CHECK(s.list_sessions().empty());
        const auto a = s.create_session("first", "", UnixMillis{1000});
        const auto b = s.create_session("second", "", UnixMillis{3000});
        const auto c = s.create_session("", "third", UnixMillis{2000});
        const auto list = s.list_sessions();
        REQUIRE(list.size() == 3);
        CHECK(list[0].id == b);
        CHECK(list[1].id == c);
        CHECK(list[2].id == a);
        CHECK(s.get_session(c).title.empty());
        CHECK(s.get_session(a).status == SessionStatus::Ready);
        CHECK_FALSE(s.get_session(a).duration_ms().has_value());
        CHECK_THROWS_AS(s.get_session(999), StoreError);
    }

    TEST_CASE("recording lifecycle and duration")
    {
        Store s(":memory:");
        const auto id = recording_session(s);
        const auto rec = s.get_session(id);
        CHECK(rec.status == SessionStatus::Recording);
        CHECK(rec.start == kStart);
        CHECK(rec.mean_offset_ns == -50);
        CHECK(rec.sync_rounds_used == 3);
        CHECK(rec.estimator == Estimator::Corrected);
        CHECK(s.sync_rounds(id).size() == 3);

        CHECK_THROWS_AS(s.begin_recording(id, kStart, estimate_of(0, 1), ""), StoreError);
        s.finalize(id, kEnd);
        const auto done = s.get_session(id);
        CHECK(done.status == SessionStatus::Stopped);
        CHECK(done.duration_ms() == 10'000);
        CHECK_THROWS_AS(s.finalize(id, kEnd), StoreError);
    }

    TEST_CASE("append rules")
    {
        Store s(":memory:");
        const auto ready = s.create_session("r", "", UnixMillis{1});
        try {
            s.append(ready, WatchHrRow{BootNanos{1}, BootNanos{1}, 60});
            FAIL("append to a ready session");
        } catch (const StoreError& e) {
            CHECK(e.code() == StoreError::Code::InvalidState);
        }

        const auto id = recording_session(s);
        s.append(id, WatchHrRow{BootNanos{100}, BootNanos{50}, 60});
        try {
            s.append(id, WatchHrRow{BootNanos{100}, BootNanos{50}, 61});
            FAIL("equal timestamp accepted");
        } catch (const StoreError& e) {
            CHECK(e.code() == StoreError::Code::NonMonotonic);
        }
        CHECK_THROWS_AS(s.append(id, WatchHrRow{BootNanos{99}, BootNanos{49}, 61}), StoreError);
        // other streams are independent
        s.append(id, Stream::WatchAcc, WatchMotionRow{BootNanos{1}, BootNanos{-49}, 0, 0, 0});
        CHECK_THROWS_AS(s.append(id, Stream::WatchHr, WatchMotionRow{}), StoreError);

        try {
            s.append(12345, WatchHrRow{BootNanos{1}, BootNanos{1}, 60});
            FAIL("unknown session");
        } catch (const StoreError& e) {
            CHECK(e.code() == StoreError::Code::UnknownSession);
        }

        s.finalize(id, kEnd);
        try {
            s.append(id, WatchHrRow{BootNanos{1000}, BootNanos{950}, 60});
            FAIL("append after finalize");
        } catch (const StoreError& e) {
            CHECK(e.code() == StoreError::Code::ClosedSession);
        }
        CHECK(s.row_count(id, Stream::WatchHr) == 1);
    }

    TEST_CASE("monotonic check survives reopening the store")
    {
        TempDir dir;
        const auto path = (dir.path / "s.db").string();
        SessionId id = 0;
        {
            Store s(path);
            id = recording_session(s);
            s.append(id, WatchHrRow{BootNanos{500}, BootNanos{450}, 60});
        }
        Store s(path);
        CHECK_THROWS_AS(s.append(id, WatchHrRow{BootNanos{400}, BootNanos{350}, 60}), StoreError);
        s.append(id, WatchHrRow{BootNanos{600}, BootNanos{550}, 60});
        CHECK(s.row_count(id, Stream::WatchHr) == 2);
    }

    TEST_CASE("export writes six files with headers, exact rows, stable bytes")
    {
        TempDir dir;
        Store s((dir.path / "s.db").string());
        const auto id = recording_session(s, "walk, then \"run\"");
        fill(s, id, 5);
        CHECK_THROWS_AS(s.render_csv(id), StoreError);
        s.finalize(id, kEnd);

        const auto out = s.export_csv(id, dir.path / "out");
        CHECK(out == dir.path / "out" / std::to_string(id));
        for (const char* name : {"meta.csv", "chest_hr.csv", "chest_acc.csv", "watch_hr.csv", "watch_acc.csv", "watch_gyro.csv"})
            CHECK(fs::exists(out / name));

        const auto watch_acc = read_file(out / "watch_acc.csv");
        CHECK(watch_acc.rfind("session_id,device_boot_ns,rebased_boot_ns,x,y,z\n" + std::to_string(id)
                                  + ",1000,950,0.333333,0.000000,-9.810000\n",
                              0)
              == 0);
        CHECK(watch_acc.find('\r') == std::string::npos);

        for (Stream stream : kAllStreams) {
            const auto text = read_file(out / schema_for(stream).file_name);
            CHECK(static_cast<std::int64_t>(parse_csv(text).size()) - 1 == s.row_count(id, stream));
            CHECK(reserialize(schema_for(stream), text) == text);
        }
        const auto meta = read_file(out / "meta.csv");
        CHECK(reserialize(meta_schema(), meta) == meta);
        CHECK(meta.find("\"walk, then \"\"run\"\"\"") != std::string::npos);

        std::map<std::string, std::string> first;
        for (const auto& [name, content] : s.render_csv(id))
            first[name] = content;
        s.export_csv(id, dir.path / "out");
        for (const auto& [name, content] : first)
            CHECK(read_file(out / name) == content);
        CHECK(s.get_session(id) == s.get_session(id));

        // no stray temp directories
        int entries = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path / "out"))
            ++entries;
        CHECK(entries == 1);
    }

    TEST_CASE("empty streams export as header-only files")
    {
        TempDir dir;
        Store s(":memory:");
        const auto id = recording_session(s);
        s.finalize(id, kStart);
        const auto out = s.export_csv(id, dir.path);
        CHECK(read_file(out / "watch_gyro.csv") == "session_id,device_boot_ns,rebased_boot_ns,x,y,z\n");
        CHECK(s.get_session(id).duration_ms() == 0);
    }

    TEST_CASE("export errors")
    {
        Store s(":memory:");
        CHECK_THROWS_AS(s.export_csv(77, fs::temp_directory_path()), StoreError);
        const auto id = recording_session(s);
        s.finalize(id, kEnd);
        try {
            s.export_csv(id, "/proc/wearsync-cannot-write");
            FAIL("export into an unwritable directory");
        } catch (const StoreError& e) {
            CHECK(e.code() == StoreError::Code::Io);
        }
    }

    TEST_CASE("unflushed rows vanish on a crash, committed rows and integrity survive")
    {
        TempDir dir;
        const auto path = (dir.path / "crash.db").string();
        const pid_t child = ::fork();
        REQUIRE(child >= 0);
        if (child == 0) {
            int code = 0;
            try {
                Store s(path);
                const auto id = recording_session(s);
                fill(s, id, 10);
                s.flush();
                for (int i = 0; i < 50; ++i) {
                    const BootNanos dev{10'000'000'000 + i};
                    s.append(id, WatchHrRow{dev, rebase(dev, -50), 99});
                }
                // dies with the transaction still open
                ::_exit(0);
            } catch (...) {
                code = 3;
            }
            ::_exit(code);
        }
        int status = 0;
        ::waitpid(child, &status, 0);
        REQUIRE(WIFEXITED(status));
        REQUIRE(WEXITSTATUS(status) == 0);

        Store s(path);
        CHECK(s.orphan_rows() == 0);
        const auto sessions = s.list_sessions();
        REQUIRE(sessions.size() == 1);
        CHECK(sessions[0].status == SessionStatus::Recording);
        CHECK(s.row_count(sessions[0].id, Stream::WatchHr) == 10);
        CHECK(s.row_count(sessions[0].id, Stream::ChestAcc) == 10);
        // the interrupted session can still be closed and exported
        s.finalize(sessions[0].id, kEnd);
        CHECK(s.render_csv(sessions[0].id).size() == 6);
    }

    TEST_CASE("foreign keys reject rows for missing sessions")
    {
        Store s(":memory:");
        CHECK_THROWS_AS(s.append(5, ChestHrRow{BootNanos{1}, UnixMillis{1}, 60}), StoreError);
        CHECK(s.orphan_rows() == 0);
    }
}
