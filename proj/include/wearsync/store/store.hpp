#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wearsync/store/csv.hpp"
#include "wearsync/timebase.hpp"

struct sqlite3;

namespace wearsync::store {

using SessionId = std::int64_t;

enum class SessionStatus { Ready, Recording, Stopped };
std::string_view to_string(SessionStatus status);

struct SessionMeta {
    SessionId id = 0;
    std::string title;
    std::string description;
    UnixMillis created;
    std::optional<TimeAnchor> start;
    std::optional<TimeAnchor> end;
    std::optional<std::int64_t> mean_offset_ns;
    std::optional<std::int64_t> sync_rounds_used;
    std::optional<Estimator> estimator;
    std::string config_text;
    SessionStatus status = SessionStatus::Ready;

    std::optional<std::int64_t> duration_ms() const;
    bool operator==(const SessionMeta&) const = default;
};

struct ChestHrRow {
    BootNanos arrival_boot;
    UnixMillis arrival_unix;
    std::int64_t bpm = 0;
};

struct ChestAccRow {
    Epoch2000Nanos device_ts;
    std::int64_t unix_ns = 0;
    double x = 0, y = 0, z = 0;
};

struct WatchHrRow {
    BootNanos device_ts;
    BootNanos rebased;
    std::int64_t bpm = 0;
};

struct WatchMotionRow {
    BootNanos device_ts;
    BootNanos rebased;
    double x = 0, y = 0, z = 0;
};

class StoreError : public std::runtime_error {
public:
    enum class Code { UnknownSession, ClosedSession, NonMonotonic, NotStopped, InvalidState, Io, Database };

    StoreError(Code code, const std::string& what)
        : std::runtime_error(what)
        , code_(code)
    {
    }
    Code code() const { return code_; }

private:
    Code code_;
};

// File name -> content, in export order (meta.csv first).
using CsvBundle = std::vector<std::pair<std::string, std::string>>;

// Session persistence in a single SQLite file. One writer; not thread-safe.
class Store {
public:
    // ":memory:" gives a private in-memory database.
    explicit Store(const std::string& path);
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    SessionId create_session(const std::string& title, const std::string& description, UnixMillis created);
    void begin_recording(SessionId id, const TimeAnchor& start, const OffsetEstimate& estimate,
                         const std::string& config_text);
    void finalize(SessionId id, const TimeAnchor& end);

    // Appends are buffered in a transaction until flush() or finalize().
    void append(SessionId id, const ChestHrRow& row);
    void append(SessionId id, const ChestAccRow& row);
    void append(SessionId id, const WatchHrRow& row);
    void append(SessionId id, Stream stream, const WatchMotionRow& row);
    void flush();

    std::vector<SessionMeta> list_sessions() const;
    SessionMeta get_session(SessionId id) const;
    std::vector<SyncRound> sync_rounds(SessionId id) const;
    std::int64_t row_count(SessionId id, Stream stream) const;

    // Pure function of stored state; requires a stopped session.
    CsvBundle render_csv(SessionId id) const;

    // Writes <out_dir>/<id>/ atomically (temp dir + rename). Returns the bundle directory.
    std::filesystem::path export_csv(SessionId id, const std::filesystem::path& out_dir) const;

    // Rows whose session does not exist; empty after any recovery.
    std::int64_t orphan_rows() const;

private:
    class Statement;

    void exec(const char* sql) const;
    Statement& statement(const std::string& sql) const;
    void begin_if_needed();
    SessionStatus status_of(SessionId id) const;
    void check_append(SessionId id, Stream stream, std::int64_t ts);

    struct DbClose {
        void operator()(sqlite3* db) const;
    };
    std::unique_ptr<sqlite3, DbClose> db_;
    mutable std::map<std::string, std::unique_ptr<Statement>> statements_;
    bool in_transaction_ = false;
    std::map<std::pair<SessionId, Stream>, std::int64_t> last_ts_;
};

// Writes the bundle to <out_dir>/<name>/ through a temp dir and a rename, so
// readers never see a partial bundle.
std::filesystem::path write_bundle(const CsvBundle& bundle, const std::filesystem::path& out_dir,
                                   const std::string& name);

}  // namespace wearsync::store
