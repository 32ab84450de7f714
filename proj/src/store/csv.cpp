#include "wearsync/store/csv.hpp"

#include <charconv>
#include <cstdint>
#include <system_error>

namespace wearsync::store {

std::string_view to_string(Stream stream)
{
    switch (stream) {
    case Stream::ChestHr:
        return "chest_hr";
    case Stream::ChestAcc:
        return "chest_acc";
    case Stream::WatchHr:
        return "watch_hr";
    case Stream::WatchAcc:
        return "watch_acc";
    case Stream::WatchGyro:
        return "watch_gyro";
    }
    return "chest_hr";
}

std::optional<Stream> stream_for(wire::DeviceKind kind, wire::StreamKind stream)
{
    using wire::StreamKind;
    if (kind == wire::DeviceKind::ChestStrap) {
        if (stream == StreamKind::Hr)
            return Stream::ChestHr;
        if (stream == StreamKind::Acc)
            return Stream::ChestAcc;
        return std::nullopt;
    }
    switch (stream) {
    case StreamKind::Hr:
        return Stream::WatchHr;
    case StreamKind::Acc:
        return Stream::WatchAcc;
    case StreamKind::Gyro:
        return Stream::WatchGyro;
    }
    return std::nullopt;
}

std::string TableSchema::header() const
{
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i > 0)
            out += ',';
        out += columns[i].name;
    }
    return out;
}

std::size_t TableSchema::index_of(std::string_view column) const
{
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == column)
            return i;
    throw CsvError("no column " + std::string(column) + " in " + std::string(file_name));
}

const TableSchema& schema_for(Stream stream)
{
    using enum ColumnType;
    static const TableSchema chest_hr{"chest_hr", "chest_hr.csv",
                                      {{"session_id", Int}, {"arrival_boot_ns", Int}, {"arrival_unix_ms", Int}, {"bpm", Int}}};
    static const TableSchema chest_acc{
        "chest_acc",
        "chest_acc.csv",
        {{"session_id", Int}, {"device_epoch2000_ns", Int}, {"unix_ns", Int}, {"x", Float}, {"y", Float}, {"z", Float}}};
    static const TableSchema watch_hr{"watch_hr", "watch_hr.csv",
                                      {{"session_id", Int}, {"device_boot_ns", Int}, {"rebased_boot_ns", Int}, {"bpm", Int}}};
    static const TableSchema watch_acc{
        "watch_acc",
        "watch_acc.csv",
        {{"session_id", Int}, {"device_boot_ns", Int}, {"rebased_boot_ns", Int}, {"x", Float}, {"y", Float}, {"z", Float}}};
    static const TableSchema watch_gyro{
        "watch_gyro",
        "watch_gyro.csv",
        {{"session_id", Int}, {"device_boot_ns", Int}, {"rebased_boot_ns", Int}, {"x", Float}, {"y", Float}, {"z", Float}}};
    switch (stream) {
    case Stream::ChestHr:
        return chest_hr;
    case Stream::ChestAcc:
        return chest_acc;
    case Stream::WatchHr:
        return watch_hr;
    case Stream::WatchAcc:
        return watch_acc;
    case Stream::WatchGyro:
        return watch_gyro;
    }
    return chest_hr;
}

const TableSchema& meta_schema()
{
    using enum ColumnType;
    static const TableSchema meta{"sessions",
                                  "meta.csv",
                                  {{"id", Int},
                                   {"title", Text},
                                   {"description", Text},
                                   {"created_unix_ms", Int},
                                   {"start_boot_ns", Int},
                                   {"start_unix_ms", Int},
                                   {"end_boot_ns", Int},
                                   {"end_unix_ms", Int},
                                   {"mean_offset_ns", Int},
                                   {"sync_rounds_used", Int},
                                   {"estimator", Text},
                                   {"config_text", Text}}};
    return meta;
}

std::string format_float(double value)
{
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, 6);
    if (result.ec != std::errc())
        throw CsvError("cannot format decimal");
    return std::string(buf, result.ptr);
}

std::string csv_escape(std::string_view field)
{
    if (field.find_first_of(",\"\n\r") == std::string_view::npos)
        return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_line(const CsvRow& fields)
{
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0)
            out += ',';
        out += csv_escape(fields[i]);
    }
    out += '\n';
    return out;
}

std::vector<CsvRow> parse_csv(std::string_view text)
{
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
            } else {
                field += c;
            }
            ++i;
            continue;
        }
        if (c == '"') {
            if (!field.empty())
                throw CsvError("quote inside an unquoted field");
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            field_started = true;
        } else if (c == '\n') {
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            field_started = false;
        } else if (c == '\r') {
            throw CsvError("CR line endings are not allowed");
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted)
        throw CsvError("unterminated quoted field");
    if (field_started || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string reserialize(const TableSchema& schema, std::string_view text)
{
    const auto rows = parse_csv(text);
    if (rows.empty())
        throw CsvError(std::string(schema.file_name) + " has no header");
    std::string out = schema.header() + "\n";
    if (csv_line(rows[0]) != out)
        throw CsvError(std::string(schema.file_name) + " header mismatch");

    for (std::size_t r = 1; r < rows.size(); ++r) {
        const CsvRow& row = rows[r];
        if (row.size() != schema.columns.size())
            throw CsvError("row " + std::to_string(r) + " has " + std::to_string(row.size()) + " fields");
        CsvRow typed;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string& value = row[c];
            switch (schema.columns[c].type) {
            case ColumnType::Int: {
                if (value.empty()) {
                    typed.emplace_back();
                    break;
                }
                std::int64_t v = 0;
                const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
                if (res.ec != std::errc() || res.ptr != value.data() + value.size())
                    throw CsvError("bad integer '" + value + "'");
                typed.push_back(std::to_string(v));
                break;
            }
            case ColumnType::Float: {
                double v = 0;
                const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
                if (res.ec != std::errc() || res.ptr != value.data() + value.size())
                    throw CsvError("bad decimal '" + value + "'");
                typed.push_back(format_float(v));
                break;
            }
            case ColumnType::Text:
                typed.push_back(value);
                break;
            }
        }
        out += csv_line(typed);
    }
    return out;
}

}  // namespace wearsync::store
