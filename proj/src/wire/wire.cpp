#include "wearsync/wire.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace wearsync::wire {
namespace {

using ojson = nlohmann::ordered_json;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct FieldFailure {
    DecodeError error;
};

const nlohmann::json& field(const nlohmann::json& object, const char* name)
{
    auto it = object.find(name);
    if (it == object.end())
        throw FieldFailure{DecodeError::MissingField};
    return *it;
}

std::int64_t as_int(const nlohmann::json& value)
{
    if (value.is_number_integer() && !value.is_number_unsigned())
        return value.get<std::int64_t>();
    if (value.is_number_unsigned()) {
        const auto u = value.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw FieldFailure{DecodeError::InvalidField};
        return static_cast<std::int64_t>(u);
    }
    throw FieldFailure{DecodeError::InvalidField};
}

std::int64_t int_field(const nlohmann::json& object, const char* name)
{
    return as_int(field(object, name));
}

double double_field(const nlohmann::json& object, const char* name)
{
    const auto& value = field(object, name);
    if (!value.is_number())
        throw FieldFailure{DecodeError::InvalidField};
    const double d = value.get<double>();
    if (!std::isfinite(d))
        throw FieldFailure{DecodeError::InvalidField};
    return d;
}

std::string string_field(const nlohmann::json& object, const char* name)
{
    const auto& value = field(object, name);
    if (!value.is_string())
        throw FieldFailure{DecodeError::InvalidField};
    return value.get<std::string>();
}

template <class Enum>
Enum enum_field(const nlohmann::json& object, const char* name, std::optional<Enum> (*parse)(std::string_view))
{
    const auto parsed = parse(string_field(object, name));
    if (!parsed)
        throw FieldFailure{DecodeError::InvalidField};
    return *parsed;
}

void require_finite(double value)
{
    if (!std::isfinite(value))
        throw EncodeError("non-finite decimal in message");
}

ojson descriptor_to_json(const DeviceDescriptor& device)
{
    ojson streams = ojson::array();
    for (const auto& s : device.streams) {
        require_finite(s.rate_hz);
        ojson entry;
        entry["stream"] = to_string(s.stream);
        entry["rate_hz"] = s.rate_hz;
        entry["timebase"] = to_string(s.timebase);
        streams.push_back(std::move(entry));
    }
    return streams;
}

ojson to_json(const WireMessage& message)
{
    ojson j;
    j["type"] = type_name(message);
    std::visit(overloaded{
                   [&](const Hello& m) {
                       j["protocol_version"] = m.protocol_version;
                       j["device_id"] = m.device.device_id;
                       j["kind"] = to_string(m.device.kind);
                       j["streams"] = descriptor_to_json(m.device);
                   },
                   [&](const HelloAck& m) {
                       j["device_id"] = m.device_id;
                       j["anchor_boot_ns"] = m.anchor_boot_ns;
                       j["anchor_unix_ms"] = m.anchor_unix_ms;
                   },
                   [&](const SyncPing& m) {
                       j["seq"] = m.seq;
                       j["t1_ns"] = m.t1_ns;
                   },
                   [&](const SyncPong& m) {
                       j["seq"] = m.seq;
                       j["t1_ns"] = m.t1_ns;
                       j["t2_ns"] = m.t2_ns;
                   },
                   [&](const StartCapture& m) { j["session_id"] = m.session_id; },
                   [&](const StopCapture& m) { j["session_id"] = m.session_id; },
                   [&](const Samples& m) {
                       if (m.size() > kMaxBatchItems)
                           throw EncodeError("samples batch exceeds 100 items");
                       j["session_id"] = m.session_id;
                       j["stream"] = to_string(m.stream);
                       ojson items = ojson::array();
                       if (m.stream == StreamKind::Hr) {
                           if (!m.motion.empty())
                               throw EncodeError("hr samples carry motion items");
                           for (const auto& item : m.hr) {
                               if (item.bpm < 0)
                                   throw EncodeError("negative bpm");
                               ojson e;
                               if (item.ts_ns)
                                   e["ts_ns"] = *item.ts_ns;
                               else
                                   e["ts_ns"] = nullptr;
                               e["bpm"] = item.bpm;
                               items.push_back(std::move(e));
                           }
                       } else {
                           if (!m.hr.empty())
                               throw EncodeError("motion samples carry hr items");
                           for (const auto& item : m.motion) {
                               require_finite(item.x);
                               require_finite(item.y);
                               require_finite(item.z);
                               ojson e;
                               e["ts_ns"] = item.ts_ns;
                               e["x"] = item.x;
                               e["y"] = item.y;
                               e["z"] = item.z;
                               items.push_back(std::move(e));
                           }
                       }
                       j["items"] = std::move(items);
                   },
                   [&](const Keepalive&) {},
                   [&](const KeepaliveAck&) {},
                   [&](const Error& m) {
                       j["code"] = m.code;
                       j["detail"] = m.detail;
                   },
               },
               message);
    return j;
}

DeviceDescriptor descriptor_from_json(const nlohmann::json& j)
{
    DeviceDescriptor device;
    device.device_id = string_field(j, "device_id");
    device.kind = enum_field<DeviceKind>(j, "kind", parse_device_kind);
    const auto& streams = field(j, "streams");
    if (!streams.is_array())
        throw FieldFailure{DecodeError::InvalidField};
    for (const auto& s : streams) {
        if (!s.is_object())
            throw FieldFailure{DecodeError::InvalidField};
        StreamSpec spec;
        spec.stream = enum_field<StreamKind>(s, "stream", parse_stream_kind);
        spec.rate_hz = double_field(s, "rate_hz");
        spec.timebase = enum_field<TimebaseKind>(s, "timebase", parse_timebase_kind);
        device.streams.push_back(spec);
    }
    return device;
}

Samples samples_from_json(const nlohmann::json& j)
{
    Samples m;
    m.session_id = int_field(j, "session_id");
    m.stream = enum_field<StreamKind>(j, "stream", parse_stream_kind);
    const auto& items = field(j, "items");
    if (!items.is_array() || items.size() > kMaxBatchItems)
        throw FieldFailure{DecodeError::InvalidField};
    for (const auto& item : items) {
        if (!item.is_object())
            throw FieldFailure{DecodeError::InvalidField};
        if (m.stream == StreamKind::Hr) {
            HrItem hr;
            const auto& ts = field(item, "ts_ns");
            if (!ts.is_null())
                hr.ts_ns = as_int(ts);
            hr.bpm = int_field(item, "bpm");
            if (hr.bpm < 0)
                throw FieldFailure{DecodeError::InvalidField};
            m.hr.push_back(hr);
        } else {
            MotionItem motion;
            motion.ts_ns = int_field(item, "ts_ns");
            motion.x = double_field(item, "x");
            motion.y = double_field(item, "y");
            motion.z = double_field(item, "z");
            m.motion.push_back(motion);
        }
    }
    return m;
}

WireMessage from_json(const nlohmann::json& j)
{
    const std::string type = string_field(j, "type");
    if (type == "hello") {
        Hello m;
        m.protocol_version = int_field(j, "protocol_version");
        m.device = descriptor_from_json(j);
        return m;
    }
    if (type == "hello_ack")
        return HelloAck{string_field(j, "device_id"), int_field(j, "anchor_boot_ns"), int_field(j, "anchor_unix_ms")};
    if (type == "sync_ping")
        return SyncPing{int_field(j, "seq"), int_field(j, "t1_ns")};
    if (type == "sync_pong")
        return SyncPong{int_field(j, "seq"), int_field(j, "t1_ns"), int_field(j, "t2_ns")};
    if (type == "start_capture")
        return StartCapture{int_field(j, "session_id")};
    if (type == "stop_capture")
        return StopCapture{int_field(j, "session_id")};
    if (type == "samples")
        return samples_from_json(j);
    if (type == "keepalive")
        return Keepalive{};
    if (type == "keepalive_ack")
        return KeepaliveAck{};
    if (type == "error")
        return Error{string_field(j, "code"), string_field(j, "detail")};
    throw FieldFailure{DecodeError::UnknownType};
}

}  // namespace

std::string_view to_string(DeviceKind kind)
{
    return kind == DeviceKind::ChestStrap ? "chest_strap" : "watch";
}

std::string_view to_string(StreamKind stream)
{
    switch (stream) {
    case StreamKind::Hr:
        return "hr";
    case StreamKind::Acc:
        return "acc";
    case StreamKind::Gyro:
        return "gyro";
    }
    return "hr";
}

std::string_view to_string(TimebaseKind timebase)
{
    switch (timebase) {
    case TimebaseKind::BootNanos:
        return "boot_nanos";
    case TimebaseKind::Epoch2000Nanos:
        return "epoch2000_nanos";
    case TimebaseKind::None:
        return "none";
    }
    return "none";
}

std::optional<DeviceKind> parse_device_kind(std::string_view text)
{
    if (text == "chest_strap")
        return DeviceKind::ChestStrap;
    if (text == "watch")
        return DeviceKind::Watch;
    return std::nullopt;
}

std::optional<StreamKind> parse_stream_kind(std::string_view text)
{
    if (text == "hr")
        return StreamKind::Hr;
    if (text == "acc")
        return StreamKind::Acc;
    if (text == "gyro")
        return StreamKind::Gyro;
    return std::nullopt;
}

std::optional<TimebaseKind> parse_timebase_kind(std::string_view text)
{
    if (text == "boot_nanos")
        return TimebaseKind::BootNanos;
    if (text == "epoch2000_nanos")
        return TimebaseKind::Epoch2000Nanos;
    if (text == "none")
        return TimebaseKind::None;
    return std::nullopt;
}

const StreamSpec* DeviceDescriptor::find(StreamKind stream) const
{
    for (const auto& s : streams)
        if (s.stream == stream)
            return &s;
    return nullptr;
}

std::optional<std::string> validate_descriptor(const DeviceDescriptor& descriptor)
{
    if (descriptor.device_id.empty())
        return "device_id is empty";

    std::vector<std::pair<StreamKind, TimebaseKind>> expected;
    if (descriptor.kind == DeviceKind::ChestStrap)
        expected = {{StreamKind::Hr, TimebaseKind::None}, {StreamKind::Acc, TimebaseKind::Epoch2000Nanos}};
    else
        expected = {{StreamKind::Hr, TimebaseKind::BootNanos},
                    {StreamKind::Acc, TimebaseKind::BootNanos},
                    {StreamKind::Gyro, TimebaseKind::BootNanos}};

    if (descriptor.streams.size() != expected.size())
        return std::string(to_string(descriptor.kind)) + " must advertise exactly "
            + std::to_string(expected.size()) + " streams";

    for (const auto& [stream, timebase] : expected) {
        const StreamSpec* spec = descriptor.find(stream);
        if (spec == nullptr)
            return std::string(to_string(descriptor.kind)) + " is missing stream " + std::string(to_string(stream));
        if (spec->timebase != timebase)
            return std::string("stream ") + std::string(to_string(stream)) + " must use time base "
                + std::string(to_string(timebase));
        if (!(spec->rate_hz > 0.0) || !std::isfinite(spec->rate_hz))
            return std::string("stream ") + std::string(to_string(stream)) + " has a non-positive rate";
    }
    return std::nullopt;
}

std::string_view type_name(const WireMessage& message)
{
    return std::visit(overloaded{
                          [](const Hello&) { return std::string_view("hello"); },
                          [](const HelloAck&) { return std::string_view("hello_ack"); },
                          [](const SyncPing&) { return std::string_view("sync_ping"); },
                          [](const SyncPong&) { return std::string_view("sync_pong"); },
                          [](const StartCapture&) { return std::string_view("start_capture"); },
                          [](const StopCapture&) { return std::string_view("stop_capture"); },
                          [](const Samples&) { return std::string_view("samples"); },
                          [](const Keepalive&) { return std::string_view("keepalive"); },
                          [](const KeepaliveAck&) { return std::string_view("keepalive_ack"); },
                          [](const Error&) { return std::string_view("error"); },
                      },
                      message);
}

std::string encode_payload(const WireMessage& message)
{
    try {
        return to_json(message).dump();
    } catch (const nlohmann::json::exception& e) {
        // dump() rejects invalid UTF-8 in strings
        throw EncodeError(e.what());
    }
}

std::vector<std::uint8_t> encode(const WireMessage& message)
{
    const std::string payload = encode_payload(message);
    if (payload.size() > kMaxPayloadBytes)
        throw EncodeError("payload of " + std::to_string(payload.size()) + " bytes exceeds frame limit");

    const auto length = static_cast<std::uint32_t>(payload.size());
    std::vector<std::uint8_t> frame;
    frame.reserve(kHeaderBytes + payload.size());
    frame.push_back(static_cast<std::uint8_t>(length >> 24));
    frame.push_back(static_cast<std::uint8_t>(length >> 16));
    frame.push_back(static_cast<std::uint8_t>(length >> 8));
    frame.push_back(static_cast<std::uint8_t>(length));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

std::string_view to_string(DecodeError error)
{
    switch (error) {
    case DecodeError::MalformedLength:
        return "malformed_length";
    case DecodeError::InvalidUtf8:
        return "invalid_utf8";
    case DecodeError::MalformedPayload:
        return "malformed_payload";
    case DecodeError::UnknownType:
        return "unknown_type";
    case DecodeError::MissingField:
        return "missing_field";
    case DecodeError::InvalidField:
        return "invalid_field";
    }
    return "malformed_payload";
}

bool is_valid_utf8(std::string_view text)
{
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n)
            return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xC0) != 0x80)
                return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // overlong forms, surrogates, out of range
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF
            || (cp >= 0xD800 && cp <= 0xDFFF))
            return false;
        i += len;
    }
    return true;
}

DecodeResult decode_payload(std::string_view payload)
{
    if (!is_valid_utf8(payload))
        return DecodeError::InvalidUtf8;
    const auto j = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object())
        return DecodeError::MalformedPayload;
    try {
        return from_json(j);
    } catch (const FieldFailure& failure) {
        return failure.error;
    } catch (const nlohmann::json::exception&) {
        return DecodeError::InvalidField;
    }
}

DecodeStep decode(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kHeaderBytes)
        return {NeedMoreBytes{}, 0};
    const std::uint32_t length = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16)
        | (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
    if (length > kMaxPayloadBytes)
        return {DecodeError::MalformedLength, 0};
    if (bytes.size() < kHeaderBytes + length)
        return {NeedMoreBytes{}, 0};
    const std::string_view payload(reinterpret_cast<const char*>(bytes.data() + kHeaderBytes), length);
    return {decode_payload(payload), kHeaderBytes + length};
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes)
{
    if (pos_ > 0 && pos_ == buffer_.size()) {
        buffer_.clear();
        pos_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void FrameDecoder::feed(std::string_view bytes)
{
    feed(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

DecodeResult FrameDecoder::next()
{
    if (failed_)
        return DecodeError::MalformedLength;
    DecodeStep step = decode(std::span<const std::uint8_t>(buffer_).subspan(pos_));
    if (std::holds_alternative<DecodeError>(step.result)
        && std::get<DecodeError>(step.result) == DecodeError::MalformedLength)
        failed_ = true;
    pos_ += step.consumed;
    // compact once the consumed prefix dominates the buffer
    if (pos_ > 65536 && pos_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }
    return step.result;
}

}  // namespace wearsync::wire
