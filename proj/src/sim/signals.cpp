#include "wearsync/sim/signals.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace wearsync::sim {

std::string_view to_string(Activity activity)
{
    switch (activity) {
    case Activity::Rest:
        return "rest";
    case Activity::Walk:
        return "walk";
    case Activity::Run:
        return "run";
    }
    return "rest";
}

std::optional<Activity> parse_activity(std::string_view text)
{
    if (text == "rest")
        return Activity::Rest;
    if (text == "walk")
        return Activity::Walk;
    if (text == "run")
        return Activity::Run;
    return std::nullopt;
}

ActivityProtocol::ActivityProtocol(std::vector<Phase> phases)
    : phases_(std::move(phases))
{
    for (const auto& p : phases_) {
        if (!(p.duration_s >= 0.0) || !std::isfinite(p.duration_s))
            throw std::invalid_argument("phase duration must be finite and non-negative");
        total_s_ += p.duration_s;
    }
    if (!(total_s_ > 0.0))
        throw std::invalid_argument("activity protocol must have a positive total duration");
}

ActivityProtocol ActivityProtocol::parse(std::string_view text)
{
    std::vector<Phase> phases;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos)
            end = text.size();
        const std::string_view item = text.substr(start, end - start);
        const std::size_t colon = item.find(':');
        if (colon == std::string_view::npos)
            throw std::invalid_argument("phase '" + std::string(item) + "' is not label:seconds");
        const auto label = parse_activity(item.substr(0, colon));
        if (!label)
            throw std::invalid_argument("unknown activity '" + std::string(item.substr(0, colon)) + "'");
        double duration = 0.0;
        try {
            std::size_t used = 0;
            const std::string number(item.substr(colon + 1));
            duration = std::stod(number, &used);
            if (used != number.size())
                throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::invalid_argument("bad duration in phase '" + std::string(item) + "'");
        }
        phases.push_back(Phase{*label, duration});
        start = end + 1;
    }
    return ActivityProtocol(std::move(phases));
}

std::string ActivityProtocol::to_string() const
{
    std::ostringstream out;
    for (std::size_t i = 0; i < phases_.size(); ++i) {
        if (i > 0)
            out << ',';
        out << sim::to_string(phases_[i].label) << ':' << phases_[i].duration_s;
    }
    return out.str();
}

double ActivityProtocol::phase_start_s(std::size_t index) const
{
    double start = 0.0;
    for (std::size_t i = 0; i < index && i < phases_.size(); ++i)
        start += phases_[i].duration_s;
    return start;
}

std::size_t ActivityProtocol::phase_index_at(double t_s) const
{
    double start = 0.0;
    for (std::size_t i = 0; i < phases_.size(); ++i) {
        const double end = start + phases_[i].duration_s;
        if (t_s < end)
            return i;
        start = end;
    }
    return phases_.size() - 1;
}

double HrModel::target(Activity activity) const
{
    switch (activity) {
    case Activity::Rest:
        return rest_bpm;
    case Activity::Walk:
        return walk_bpm;
    case Activity::Run:
        return run_bpm;
    }
    return rest_bpm;
}

void HrModel::validate() const
{
    if (!(rest_bpm > 0 && walk_bpm > 0 && run_bpm > 0))
        throw std::invalid_argument("bpm targets must be positive");
    if (!(tau_s > 0))
        throw std::invalid_argument("tau_s must be positive");
    if (!(noise_std_chest >= 0 && noise_std_watch >= 0))
        throw std::invalid_argument("noise deviations must be non-negative");
    for (double p : dropout_prob)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("dropout probabilities must lie in [0, 1]");
}

double hr_ground_truth(const ActivityProtocol& protocol, const HrModel& model, double t_s)
{
    if (!(t_s >= 0.0) || t_s > protocol.total_duration_s())
        throw std::out_of_range("time outside the activity protocol");

    double hr = model.rest_bpm;
    double start = 0.0;
    const auto& phases = protocol.phases();
    for (std::size_t i = 0; i < phases.size(); ++i) {
        const double target = model.target(phases[i].label);
        const double end = start + phases[i].duration_s;
        const bool last = i + 1 == phases.size();
        if (t_s < end || last)
            return target + (hr - target) * std::exp(-(t_s - start) / model.tau_s);
        hr = target + (hr - target) * std::exp(-phases[i].duration_s / model.tau_s);
        start = end;
    }
    return hr;
}

double expected_zero_fraction(const ActivityProtocol& protocol, const HrModel& model)
{
    double weighted = 0.0;
    for (const auto& p : protocol.phases())
        weighted += p.duration_s * model.dropout(p.label);
    return weighted / protocol.total_duration_s();
}

wire::HrItem sample_chest_hr(double truth_bpm, double noise_std, std::mt19937_64& rng)
{
    std::normal_distribution<double> noise(0.0, 1.0);
    const double value = truth_bpm + noise_std * noise(rng);
    return wire::HrItem{std::nullopt, std::max<std::int64_t>(0, std::llround(value))};
}

wire::HrItem sample_watch_hr(double truth_bpm, double noise_std, double dropout_prob, std::int64_t device_ts_ns,
                             std::mt19937_64& rng)
{
    // both draws always happen so the sequence does not depend on the dropout setting
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double u = uniform(rng);
    const double value = truth_bpm + noise_std * noise(rng);
    if (u < dropout_prob)
        return wire::HrItem{device_ts_ns, 0};
    return wire::HrItem{device_ts_ns, std::max<std::int64_t>(0, std::llround(value))};
}

double MotionModel::cadence_hz(Activity activity) const
{
    switch (activity) {
    case Activity::Rest:
        return 0.0;
    case Activity::Walk:
        return walk_hz;
    case Activity::Run:
        return run_hz;
    }
    return 0.0;
}

wire::MotionItem sample_motion(const ActivityProtocol& protocol, const MotionModel& model, wire::StreamKind stream,
                               double t_s, std::int64_t device_ts_ns, std::mt19937_64& rng)
{
    const double clamped = std::min(std::max(t_s, 0.0), protocol.total_duration_s());
    const Activity activity = protocol.phases()[protocol.phase_index_at(clamped)].label;
    const double omega = 2.0 * std::numbers::pi * model.cadence_hz(activity) * t_s;
    std::normal_distribution<double> noise(0.0, 1.0);

    wire::MotionItem item;
    item.ts_ns = device_ts_ns;
    if (stream == wire::StreamKind::Gyro) {
        const double amplitude = activity == Activity::Run    ? model.gyro_amplitude_run
                               : activity == Activity::Walk ? model.gyro_amplitude_walk
                                                            : 0.0;
        item.x = amplitude * std::sin(omega) + model.gyro_noise_std * noise(rng);
        item.y = amplitude * std::cos(omega) + model.gyro_noise_std * noise(rng);
        item.z = 0.5 * amplitude * std::sin(omega) + model.gyro_noise_std * noise(rng);
        return item;
    }

    const double amplitude = activity == Activity::Run    ? model.acc_amplitude_run
                           : activity == Activity::Walk ? model.acc_amplitude_walk
                                                        : 0.0;
    double bump = 0.0;
    for (std::int64_t centre : model.impulse_device_ns) {
        const double d = static_cast<double>(device_ts_ns - centre) / model.impulse_width_ns;
        if (std::abs(d) < 8.0)
            bump += model.impulse_amplitude * std::exp(-0.5 * d * d);
    }
    item.x = 0.3 * amplitude * std::sin(omega) + model.acc_noise_std * noise(rng);
    item.y = 0.2 * amplitude * std::cos(omega) + model.acc_noise_std * noise(rng);
    item.z = model.gravity + amplitude * std::sin(omega) + bump + model.acc_noise_std * noise(rng);
    return item;
}

}  // namespace wearsync::sim
