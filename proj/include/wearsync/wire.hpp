#pragma once

// Length-prefixed JSON framing between hub and devices.
//
//   frame   := length (u32, big-endian) payload
//   payload := UTF-8 JSON object, "type" first, remaining fields in a fixed order
//
// The codec is stateless; FrameDecoder only owns the receive buffer of one
// connection.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace wearsync::wire {

inline constexpr std::uint32_t kMaxPayloadBytes = 1'048'576;
inline constexpr std::int64_t kProtocolVersion = 1;
inline constexpr std::uint16_t kDefaultPort = 7007;
inline constexpr std::size_t kMaxBatchItems = 100;
inline constexpr std::size_t kHeaderBytes = 4;

enum class DeviceKind { ChestStrap, Watch };
enum class StreamKind { Hr, Acc, Gyro };
enum class TimebaseKind { BootNanos, Epoch2000Nanos, None };

std::string_view to_string(DeviceKind kind);
std::string_view to_string(StreamKind stream);
std::string_view to_string(TimebaseKind timebase);
std::optional<DeviceKind> parse_device_kind(std::string_view text);
std::optional<StreamKind> parse_stream_kind(std::string_view text);
std::optional<TimebaseKind> parse_timebase_kind(std::string_view text);

struct StreamSpec {
    StreamKind stream = StreamKind::Hr;
    double rate_hz = 1.0;
    TimebaseKind timebase = TimebaseKind::None;

    bool operator==(const StreamSpec&) const = default;
};

struct DeviceDescriptor {
    std::string device_id;
    DeviceKind kind = DeviceKind::Watch;
    std::vector<StreamSpec> streams;

    bool operator==(const DeviceDescriptor&) const = default;

    const StreamSpec* find(StreamKind stream) const;
};

// Empty when the descriptor advertises exactly the streams and time bases its kind
// must have (chest: hr/none + acc/epoch2000; watch: hr, acc, gyro on boot nanos).
std::optional<std::string> validate_descriptor(const DeviceDescriptor& descriptor);

struct Hello {
    std::int64_t protocol_version = kProtocolVersion;
    DeviceDescriptor device;
    bool operator==(const Hello&) const = default;
};

struct HelloAck {
    std::string device_id;
    std::int64_t anchor_boot_ns = 0;
    std::int64_t anchor_unix_ms = 0;
    bool operator==(const HelloAck&) const = default;
};

struct SyncPing {
    std::int64_t seq = 0;
    std::int64_t t1_ns = 0;
    bool operator==(const SyncPing&) const = default;
};

struct SyncPong {
    std::int64_t seq = 0;
    std::int64_t t1_ns = 0;
    std::int64_t t2_ns = 0;
    bool operator==(const SyncPong&) const = default;
};

struct StartCapture {
    std::int64_t session_id = 0;
    bool operator==(const StartCapture&) const = default;
};

struct StopCapture {
    std::int64_t session_id = 0;
    bool operator==(const StopCapture&) const = default;
};

struct HrItem {
    std::optional<std::int64_t> ts_ns;  // null for chest straps: the hub stamps arrival
    std::int64_t bpm = 0;
    bool operator==(const HrItem&) const = default;
};

struct MotionItem {
    std::int64_t ts_ns = 0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    bool operator==(const MotionItem&) const = default;
};

// `hr` is populated for StreamKind::Hr, `motion` for acc/gyro; the other stays empty.
struct Samples {
    std::int64_t session_id = 0;
    StreamKind stream = StreamKind::Hr;
    std::vector<HrItem> hr;
    std::vector<MotionItem> motion;

    std::size_t size() const { return stream == StreamKind::Hr ? hr.size() : motion.size(); }
    bool operator==(const Samples&) const = default;
};

struct Keepalive {
    bool operator==(const Keepalive&) const = default;
};

struct KeepaliveAck {
    bool operator==(const KeepaliveAck&) const = default;
};

struct Error {
    std::string code;
    std::string detail;
    bool operator==(const Error&) const = default;
};

using WireMessage = std::variant<Hello, HelloAck, SyncPing, SyncPong, StartCapture, StopCapture, Samples,
                                 Keepalive, KeepaliveAck, Error>;

std::string_view type_name(const WireMessage& message);

class EncodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// JSON text of one message with fixed field order.
std::string encode_payload(const WireMessage& message);

// One complete frame. Throws EncodeError for schema violations or oversize payloads.
std::vector<std::uint8_t> encode(const WireMessage& message);

enum class DecodeError {
    MalformedLength,   // length prefix exceeds the maximum; the stream cannot be resynchronized
    InvalidUtf8,
    MalformedPayload,  // not a JSON object
    UnknownType,
    MissingField,
    InvalidField,      // present but of the wrong type or out of range
};

std::string_view to_string(DecodeError error);

struct NeedMoreBytes {
    bool operator==(const NeedMoreBytes&) const = default;
};

using DecodeResult = std::variant<WireMessage, NeedMoreBytes, DecodeError>;

struct DecodeStep {
    DecodeResult result;
    std::size_t consumed = 0;
};

// Decodes the frame at the front of `bytes`. Bytes past that frame are not touched.
DecodeStep decode(std::span<const std::uint8_t> bytes);

DecodeResult decode_payload(std::string_view payload);

bool is_valid_utf8(std::string_view text);

class FrameDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    void feed(std::string_view bytes);

    // Next message, NeedMoreBytes, or an error. Errors for one bad frame skip that
    // frame; MalformedLength is sticky.
    DecodeResult next();

    bool failed() const { return failed_; }
    std::size_t buffered() const { return buffer_.size() - pos_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t pos_ = 0;
    bool failed_ = false;
};

}  // namespace wearsync::wire
