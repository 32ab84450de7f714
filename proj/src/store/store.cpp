#include "wearsync/store/store.hpp"

#include <sqlite3.h>
#include <unistd.h>

#include <fstream>
#include <system_error>

namespace wearsync::store {
namespace fs = std::filesystem;

namespace {

constexpr const char* kSchemaSql = R"sql(
CREATE TABLE IF NOT EXISTS sessions(
  id INTEGER PRIMARY KEY,
  title TEXT NOT NULL,
  description TEXT NOT NULL,
  created_unix_ms INTEGER NOT NULL,
  start_boot_ns INTEGER,
  start_unix_ms INTEGER,
  end_boot_ns INTEGER,
  end_unix_ms INTEGER,
  mean_offset_ns INTEGER,
  sync_rounds_used INTEGER,
  estimator TEXT,
  config_text TEXT NOT NULL DEFAULT '',
  state TEXT NOT NULL DEFAULT 'ready'
);
CREATE TABLE IF NOT EXISTS chest_hr(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  arrival_boot_ns INTEGER NOT NULL,
  arrival_unix_ms INTEGER NOT NULL,
  bpm INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS chest_acc(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  device_epoch2000_ns INTEGER NOT NULL,
  unix_ns INTEGER NOT NULL,
  x REAL NOT NULL, y REAL NOT NULL, z REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS watch_hr(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  device_boot_ns INTEGER NOT NULL,
  rebased_boot_ns INTEGER NOT NULL,
  bpm INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS watch_acc(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  device_boot_ns INTEGER NOT NULL,
  rebased_boot_ns INTEGER NOT NULL,
  x REAL NOT NULL, y REAL NOT NULL, z REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS watch_gyro(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  device_boot_ns INTEGER NOT NULL,
  rebased_boot_ns INTEGER NOT NULL,
  x REAL NOT NULL, y REAL NOT NULL, z REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS sync_rounds(
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  seq INTEGER NOT NULL,
  t1_ns INTEGER NOT NULL,
  t2_ns INTEGER NOT NULL,
  t3_ns INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS chest_hr_ts ON chest_hr(session_id, arrival_boot_ns);
CREATE INDEX IF NOT EXISTS chest_acc_ts ON chest_acc(session_id, device_epoch2000_ns);
CREATE INDEX IF NOT EXISTS watch_hr_ts ON watch_hr(session_id, device_boot_ns);
CREATE INDEX IF NOT EXISTS watch_acc_ts ON watch_acc(session_id, device_boot_ns);
CREATE INDEX IF NOT EXISTS watch_gyro_ts ON watch_gyro(session_id, device_boot_ns);
)sql";

// Column holding the per-stream ordering timestamp.
std::string_view ts_column(Stream stream)
{
    switch (stream) {
    case Stream::ChestHr:
        return "arrival_boot_ns";
    case Stream::ChestAcc:
        return "device_epoch2000_ns";
    default:
        return "device_boot_ns";
    }
}

std::optional<SessionStatus> parse_status(std::string_view text)
{
    if (text == "ready")
        return SessionStatus::Ready;
    if (text == "recording")
        return SessionStatus::Recording;
    if (text == "stopped")
        return SessionStatus::Stopped;
    return std::nullopt;
}

}  // namespace

std::string_view to_string(SessionStatus status)
{
    switch (status) {
    case SessionStatus::Ready:
        return "ready";
    case SessionStatus::Recording:
        return "recording";
    case SessionStatus::Stopped:
        return "stopped";
    }
    return "ready";
}

std::optional<std::int64_t> SessionMeta::duration_ms() const
{
    if (!start || !end)
        return std::nullopt;
    return end->unix_ms.value - start->unix_ms.value;
}

class Store::Statement {
public:
    Statement(sqlite3* db, const std::string& sql)
        : db_(db)
    {
        if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt_, nullptr) != SQLITE_OK)
            throw StoreError(StoreError::Code::Database, std::string("prepare failed: ") + sqlite3_errmsg(db));
    }
    ~Statement() { sqlite3_finalize(stmt_); }
    Statement(const Statement&) = delete;
    Statement& operator=(const Statement&) = delete;

    Statement& reset()
    {
        sqlite3_reset(stmt_);
        sqlite3_clear_bindings(stmt_);
        return *this;
    }
    Statement& bind(int index, std::int64_t v)
    {
        sqlite3_bind_int64(stmt_, index, v);
        return *this;
    }
    Statement& bind(int index, double v)
    {
        sqlite3_bind_double(stmt_, index, v);
        return *this;
    }
    Statement& bind(int index, const std::string& v)
    {
        sqlite3_bind_text(stmt_, index, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
        return *this;
    }
    Statement& bind_null(int index)
    {
        sqlite3_bind_null(stmt_, index);
        return *this;
    }

    // true while a row is available
    bool step()
    {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW)
            return true;
        if (rc == SQLITE_DONE)
            return false;
        throw StoreError(StoreError::Code::Database, std::string("step failed: ") + sqlite3_errmsg(db_));
    }
    void run()
    {
        while (step()) {
        }
    }

    bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
    std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_, col); }
    double real(int col) const { return sqlite3_column_double(stmt_, col); }
    std::string text(int col) const
    {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
                 : std::string();
    }
    std::optional<std::int64_t> opt_int64(int col) const
    {
        if (is_null(col))
            return std::nullopt;
        return int64(col);
    }

private:
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

void Store::DbClose::operator()(sqlite3* db) const
{
    sqlite3_close_v2(db);
}

Store::Store(const std::string& path)
{
    sqlite3* raw = nullptr;
    const int rc = sqlite3_open_v2(path.c_str(), &raw, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX,
                                   nullptr);
    db_.reset(raw);
    if (rc != SQLITE_OK)
        throw StoreError(StoreError::Code::Io, "cannot open store '" + path + "': "
                                                   + (raw ? sqlite3_errmsg(raw) : "out of memory"));
    sqlite3_busy_timeout(raw, 5000);
    exec("PRAGMA foreign_keys = ON;");
    if (path != ":memory:") {
        exec("PRAGMA journal_mode = WAL;");
        exec("PRAGMA synchronous = NORMAL;");
    }
    exec(kSchemaSql);
}

Store::~Store()
{
    try {
        flush();
    } catch (...) {
        // nothing sensible to do while closing
    }
    statements_.clear();
}

void Store::exec(const char* sql) const
{
    char* err = nullptr;
    if (sqlite3_exec(db_.get(), sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string message = err ? err : "unknown error";
        sqlite3_free(err);
        throw StoreError(StoreError::Code::Database, message);
    }
}

Store::Statement& Store::statement(const std::string& sql) const
{
    auto it = statements_.find(sql);
    if (it == statements_.end())
        it = statements_.emplace(sql, std::make_unique<Statement>(db_.get(), sql)).first;
    return it->second->reset();
}

void Store::begin_if_needed()
{
    if (!in_transaction_) {
        exec("BEGIN");
        in_transaction_ = true;
    }
}

void Store::flush()
{
    if (in_transaction_) {
        exec("COMMIT");
        in_transaction_ = false;
    }
}

SessionId Store::create_session(const std::string& title, const std::string& description, UnixMillis created)
{
    statement("INSERT INTO sessions(title, description, created_unix_ms, state) VALUES(?, ?, ?, 'ready')")
        .bind(1, title)
        .bind(2, description)
        .bind(3, created.value)
        .run();
    return sqlite3_last_insert_rowid(db_.get());
}

SessionStatus Store::status_of(SessionId id) const
{
    auto& st = statement("SELECT state FROM sessions WHERE id = ?").bind(1, id);
    if (!st.step())
        throw StoreError(StoreError::Code::UnknownSession, "unknown session " + std::to_string(id));
    const auto status = parse_status(st.text(0));
    st.reset();
    if (!status)
        throw StoreError(StoreError::Code::Database, "corrupt session state");
    return *status;
}

void Store::begin_recording(SessionId id, const TimeAnchor& start, const OffsetEstimate& estimate,
                            const std::string& config_text)
{
    if (status_of(id) != SessionStatus::Ready)
        throw StoreError(StoreError::Code::InvalidState, "session " + std::to_string(id) + " is not ready");
    begin_if_needed();
    statement("UPDATE sessions SET start_boot_ns = ?, start_unix_ms = ?, mean_offset_ns = ?, sync_rounds_used = ?, "
              "estimator = ?, config_text = ?, state = 'recording' WHERE id = ?")
        .bind(1, start.boot_ns.value)
        .bind(2, start.unix_ms.value)
        .bind(3, estimate.mean_offset_ns)
        .bind(4, static_cast<std::int64_t>(estimate.rounds.size()))
        .bind(5, std::string(to_string(estimate.estimator)))
        .bind(6, config_text)
        .bind(7, id)
        .run();
    for (const SyncRound& r : estimate.rounds) {
        statement("INSERT INTO sync_rounds(session_id, seq, t1_ns, t2_ns, t3_ns) VALUES(?, ?, ?, ?, ?)")
            .bind(1, id)
            .bind(2, r.seq)
            .bind(3, r.t1.value)
            .bind(4, r.t2.value)
            .bind(5, r.t3.value)
            .run();
    }
    flush();
}

void Store::finalize(SessionId id, const TimeAnchor& end)
{
    if (status_of(id) != SessionStatus::Recording)
        throw StoreError(StoreError::Code::ClosedSession, "session " + std::to_string(id) + " is not recording");
    begin_if_needed();
    statement("UPDATE sessions SET end_boot_ns = ?, end_unix_ms = ?, state = 'stopped' WHERE id = ?")
        .bind(1, end.boot_ns.value)
        .bind(2, end.unix_ms.value)
        .bind(3, id)
        .run();
    flush();
}

void Store::check_append(SessionId id, Stream stream, std::int64_t ts)
{
    const SessionStatus status = status_of(id);
    if (status == SessionStatus::Stopped)
        throw StoreError(StoreError::Code::ClosedSession, "session " + std::to_string(id) + " is closed");
    if (status != SessionStatus::Recording)
        throw StoreError(StoreError::Code::InvalidState, "session " + std::to_string(id) + " is not recording");

    const auto key = std::make_pair(id, stream);
    auto it = last_ts_.find(key);
    if (it == last_ts_.end()) {
        auto& st = statement("SELECT MAX(" + std::string(ts_column(stream)) + ") FROM " + std::string(to_string(stream))
                             + " WHERE session_id = ?")
                       .bind(1, id);
        st.step();
        const auto max = st.opt_int64(0);
        st.reset();
        if (max)
            it = last_ts_.emplace(key, *max).first;
    }
    if (it != last_ts_.end() && ts <= it->second)
        throw StoreError(StoreError::Code::NonMonotonic, std::string(to_string(stream)) + " timestamp "
                                                             + std::to_string(ts) + " does not follow "
                                                             + std::to_string(it->second));
    last_ts_[key] = ts;
}

void Store::append(SessionId id, const ChestHrRow& row)
{
    check_append(id, Stream::ChestHr, row.arrival_boot.value);
    begin_if_needed();
    statement("INSERT INTO chest_hr VALUES(?, ?, ?, ?)")
        .bind(1, id)
        .bind(2, row.arrival_boot.value)
        .bind(3, row.arrival_unix.value)
        .bind(4, row.bpm)
        .run();
}

void Store::append(SessionId id, const ChestAccRow& row)
{
    check_append(id, Stream::ChestAcc, row.device_ts.value);
    begin_if_needed();
    statement("INSERT INTO chest_acc VALUES(?, ?, ?, ?, ?, ?)")
        .bind(1, id)
        .bind(2, row.device_ts.value)
        .bind(3, row.unix_ns)
        .bind(4, row.x)
        .bind(5, row.y)
        .bind(6, row.z)
        .run();
}

void Store::append(SessionId id, const WatchHrRow& row)
{
    check_append(id, Stream::WatchHr, row.device_ts.value);
    begin_if_needed();
    statement("INSERT INTO watch_hr VALUES(?, ?, ?, ?)")
        .bind(1, id)
        .bind(2, row.device_ts.value)
        .bind(3, row.rebased.value)
        .bind(4, row.bpm)
        .run();
}

void Store::append(SessionId id, Stream stream, const WatchMotionRow& row)
{
    if (stream != Stream::WatchAcc && stream != Stream::WatchGyro)
        throw StoreError(StoreError::Code::InvalidState, "not a watch motion stream");
    check_append(id, stream, row.device_ts.value);
    begin_if_needed();
    statement("INSERT INTO " + std::string(to_string(stream)) + " VALUES(?, ?, ?, ?, ?, ?)")
        .bind(1, id)
        .bind(2, row.device_ts.value)
        .bind(3, row.rebased.value)
        .bind(4, row.x)
        .bind(5, row.y)
        .bind(6, row.z)
        .run();
}

namespace {

constexpr const char* kSessionColumns =
    "id, title, description, created_unix_ms, start_boot_ns, start_unix_ms, end_boot_ns, end_unix_ms, "
    "mean_offset_ns, sync_rounds_used, estimator, config_text, state";

}  // namespace

std::vector<SessionMeta> Store::list_sessions() const
{
    auto& st = statement(std::string("SELECT ") + kSessionColumns
                         + " FROM sessions ORDER BY created_unix_ms DESC, id DESC");
    std::vector<SessionMeta> out;
    while (st.step()) {
        SessionMeta m;
        m.id = st.int64(0);
        m.title = st.text(1);
        m.description = st.text(2);
        m.created = UnixMillis{st.int64(3)};
        if (!st.is_null(4))
            m.start = TimeAnchor{BootNanos{st.int64(4)}, UnixMillis{st.int64(5)}};
        if (!st.is_null(6))
            m.end = TimeAnchor{BootNanos{st.int64(6)}, UnixMillis{st.int64(7)}};
        m.mean_offset_ns = st.opt_int64(8);
        m.sync_rounds_used = st.opt_int64(9);
        if (!st.is_null(10))
            m.estimator = parse_estimator(st.text(10));
        m.config_text = st.text(11);
        m.status = parse_status(st.text(12)).value_or(SessionStatus::Ready);
        out.push_back(std::move(m));
    }
    return out;
}

SessionMeta Store::get_session(SessionId id) const
{
    for (auto& m : list_sessions())
        if (m.id == id)
            return m;
    throw StoreError(StoreError::Code::UnknownSession, "unknown session " + std::to_string(id));
}

std::vector<SyncRound> Store::sync_rounds(SessionId id) const
{
    status_of(id);
    auto& st = statement("SELECT seq, t1_ns, t2_ns, t3_ns FROM sync_rounds WHERE session_id = ? ORDER BY rowid")
                   .bind(1, id);
    std::vector<SyncRound> rounds;
    while (st.step())
        rounds.push_back(SyncRound{st.int64(0), BootNanos{st.int64(1)}, BootNanos{st.int64(2)}, BootNanos{st.int64(3)}});
    return rounds;
}

std::int64_t Store::row_count(SessionId id, Stream stream) const
{
    auto& st = statement("SELECT COUNT(*) FROM " + std::string(to_string(stream)) + " WHERE session_id = ?").bind(1, id);
    st.step();
    const std::int64_t n = st.int64(0);
    st.reset();
    return n;
}

std::int64_t Store::orphan_rows() const
{
    std::int64_t total = 0;
    for (Stream s : kAllStreams) {
        auto& st = statement("SELECT COUNT(*) FROM " + std::string(to_string(s))
                             + " WHERE session_id NOT IN (SELECT id FROM sessions)");
        st.step();
        total += st.int64(0);
        st.reset();
    }
    return total;
}

CsvBundle Store::render_csv(SessionId id) const
{
    const SessionMeta meta = get_session(id);
    if (meta.status != SessionStatus::Stopped)
        throw StoreError(StoreError::Code::NotStopped, "session " + std::to_string(id) + " is not stopped");

    CsvBundle bundle;
    {
        auto opt = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string(); };
        std::string text = meta_schema().header() + "\n";
        text += csv_line({std::to_string(meta.id), meta.title, meta.description, std::to_string(meta.created.value),
                          meta.start ? std::to_string(meta.start->boot_ns.value) : "",
                          meta.start ? std::to_string(meta.start->unix_ms.value) : "",
                          meta.end ? std::to_string(meta.end->boot_ns.value) : "",
                          meta.end ? std::to_string(meta.end->unix_ms.value) : "", opt(meta.mean_offset_ns),
                          opt(meta.sync_rounds_used), meta.estimator ? std::string(to_string(*meta.estimator)) : "",
                          meta.config_text});
        bundle.emplace_back(std::string(meta_schema().file_name), std::move(text));
    }

    for (Stream stream : kAllStreams) {
        const TableSchema& schema = schema_for(stream);
        std::string text = schema.header() + "\n";
        auto& st = statement("SELECT * FROM " + std::string(to_string(stream)) + " WHERE session_id = ? ORDER BY "
                             + std::string(ts_column(stream)) + ", rowid")
                       .bind(1, id);
        CsvRow row(schema.columns.size());
        while (st.step()) {
            for (std::size_t c = 0; c < schema.columns.size(); ++c) {
                const int col = static_cast<int>(c);
                row[c] = schema.columns[c].type == ColumnType::Float ? format_float(st.real(col))
                                                                     : std::to_string(st.int64(col));
            }
            text += csv_line(row);
        }
        bundle.emplace_back(std::string(schema.file_name), std::move(text));
    }
    return bundle;
}

fs::path Store::export_csv(SessionId id, const fs::path& out_dir) const
{
    return write_bundle(render_csv(id), out_dir, std::to_string(id));
}

fs::path write_bundle(const CsvBundle& bundle, const fs::path& out_dir, const std::string& name)
{
    const fs::path final_dir = out_dir / name;
    const fs::path temp_dir = out_dir / ("." + name + ".tmp." + std::to_string(::getpid()));
    const fs::path old_dir = out_dir / ("." + name + ".old." + std::to_string(::getpid()));

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    fs::remove_all(temp_dir, ec);
    if (!fs::create_directory(temp_dir, ec) || ec)
        throw StoreError(StoreError::Code::Io, "cannot create " + temp_dir.string() + ": " + ec.message());

    try {
        for (const auto& [file, content] : bundle) {
            if (file.empty() || file.find('/') != std::string::npos || file == "." || file == "..")
                throw StoreError(StoreError::Code::Io, "bad file name in bundle: '" + file + "'");
            std::ofstream out(temp_dir / file, std::ios::binary | std::ios::trunc);
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
            out.close();
            if (!out)
                throw StoreError(StoreError::Code::Io, "cannot write " + (temp_dir / file).string());
        }
        if (fs::exists(final_dir)) {
            fs::remove_all(old_dir, ec);
            fs::rename(final_dir, old_dir);
        }
        fs::rename(temp_dir, final_dir);
        fs::remove_all(old_dir, ec);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(temp_dir, ec);
        throw StoreError(StoreError::Code::Io, e.what());
    } catch (...) {
        fs::remove_all(temp_dir, ec);
        throw;
    }
    return final_dir;
}

}  // namespace wearsync::store
