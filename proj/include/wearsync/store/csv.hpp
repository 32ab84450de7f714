#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wearsync/wire.hpp"

namespace wearsync::store {

enum class Stream { ChestHr, ChestAcc, WatchHr, WatchAcc, WatchGyro };

inline constexpr Stream kAllStreams[] = {Stream::ChestHr, Stream::ChestAcc, Stream::WatchHr, Stream::WatchAcc,
                                         Stream::WatchGyro};

std::string_view to_string(Stream stream);
std::optional<Stream> stream_for(wire::DeviceKind kind, wire::StreamKind stream);

enum class ColumnType { Int, Float, Text };

struct Column {
    std::string_view name;
    ColumnType type;
};

struct TableSchema {
    std::string_view table;
    std::string_view file_name;
    std::vector<Column> columns;

    std::string header() const;
    std::size_t index_of(std::string_view column) const;
};

const TableSchema& schema_for(Stream stream);
const TableSchema& meta_schema();

class CsvError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using CsvRow = std::vector<std::string>;

// Fixed 6 fractional digits, '.' separator, locale independent.
std::string format_float(double value);

// RFC 4180 quoting, applied only when the field needs it.
std::string csv_escape(std::string_view field);
std::string csv_line(const CsvRow& fields);

// Parses LF-terminated RFC 4180 text (quoted fields may span lines).
std::vector<CsvRow> parse_csv(std::string_view text);

// Parses a file written under `schema` and writes it back with the same rules.
std::string reserialize(const TableSchema& schema, std::string_view text);

}  // namespace wearsync::store
