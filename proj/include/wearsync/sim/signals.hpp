#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wearsync/wire.hpp"

namespace wearsync::sim {

enum class Activity { Rest, Walk, Run };

std::string_view to_string(Activity activity);
std::optional<Activity> parse_activity(std::string_view text);

struct Phase {
    Activity label = Activity::Rest;
    double duration_s = 0.0;

    bool operator==(const Phase&) const = default;
};

class ActivityProtocol {
public:
    // Throws std::invalid_argument if the total duration is not positive or any phase is negative.
    explicit ActivityProtocol(std::vector<Phase> phases);

    // "rest:30,run:120,walk:120"
    static ActivityProtocol parse(std::string_view text);
    std::string to_string() const;

    const std::vector<Phase>& phases() const { return phases_; }
    double total_duration_s() const { return total_s_; }
    double phase_start_s(std::size_t index) const;

    // Index of the phase active at t (the last phase owns t == total).
    std::size_t phase_index_at(double t_s) const;

    bool operator==(const ActivityProtocol&) const = default;

private:
    std::vector<Phase> phases_;
    double total_s_ = 0.0;
};

struct HrModel {
    double rest_bpm = 70.0;
    double walk_bpm = 100.0;
    double run_bpm = 150.0;
    double tau_s = 30.0;
    double noise_std_chest = 1.0;
    double noise_std_watch = 3.0;
    // indexed by Activity
    std::array<double, 3> dropout_prob{0.02, 0.10, 0.30};

    double target(Activity activity) const;
    double dropout(Activity activity) const { return dropout_prob[static_cast<std::size_t>(activity)]; }
    void validate() const;
};

// First-order response toward each phase's target, starting from rest_bpm at t = 0.
// Throws std::out_of_range outside [0, total duration].
double hr_ground_truth(const ActivityProtocol& protocol, const HrModel& model, double t_s);

// Time-weighted dropout probability over the whole protocol.
double expected_zero_fraction(const ActivityProtocol& protocol, const HrModel& model);

wire::HrItem sample_chest_hr(double truth_bpm, double noise_std, std::mt19937_64& rng);
wire::HrItem sample_watch_hr(double truth_bpm, double noise_std, double dropout_prob, std::int64_t device_ts_ns,
                             std::mt19937_64& rng);

struct MotionModel {
    double gravity = 9.81;
    double walk_hz = 1.8;
    double run_hz = 2.8;
    double acc_amplitude_walk = 2.0;   // m/s^2
    double acc_amplitude_run = 5.0;
    double gyro_amplitude_walk = 30.0;  // deg/s
    double gyro_amplitude_run = 80.0;
    double acc_noise_std = 0.05;
    double gyro_noise_std = 0.5;
    // Gaussian bumps added to acc z, centred on device-clock instants.
    std::vector<std::int64_t> impulse_device_ns;
    double impulse_amplitude = 30.0;
    double impulse_width_ns = 10'000'000.0;

    double cadence_hz(Activity activity) const;
};

// `t_s` is time since capture start; `device_ts_ns` feeds impulse placement and the item stamp.
wire::MotionItem sample_motion(const ActivityProtocol& protocol, const MotionModel& model, wire::StreamKind stream,
                               double t_s, std::int64_t device_ts_ns, std::mt19937_64& rng);

}  // namespace wearsync::sim
