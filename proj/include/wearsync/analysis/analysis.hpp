#pragma once

// Agreement between the chest strap and watch heart-rate traces of a session,
// and ground-truth error of the offset estimators.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wearsync/sim/signals.hpp"
#include "wearsync/store/store.hpp"
#include "wearsync/timebase.hpp"

namespace wearsync::analysis {

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// rest 30 s, then run and walk alternating for two minutes each.
sim::ActivityProtocol default_protocol();

inline constexpr std::int64_t kPairWindowNs = 500 * kNanosPerMilli;

// One heart-rate reading on the hub boot base: arrival time for the chest
// strap, rebased device time for the watch.
struct HrPoint {
    std::int64_t t_ns = 0;
    std::int64_t bpm = 0;
    bool operator==(const HrPoint&) const = default;
};

std::vector<HrPoint> load_chest_hr(std::string_view csv);
std::vector<HrPoint> load_watch_hr(std::string_view csv);
store::SessionMeta load_meta(std::string_view csv);

struct Pair {
    std::size_t chest = 0;
    std::size_t watch = 0;
    std::int64_t dt_ns = 0;  // watch - chest
};

// One-to-one pairing, closest first, within +-window. Ties go to the earlier
// watch sample, then the earlier chest sample. Result is sorted by watch index.
std::vector<Pair> pair_nearest(std::span<const HrPoint> chest, std::span<const HrPoint> watch,
                               std::int64_t window_ns = kPairWindowNs);

// Pearson correlation. Both series constant gives 1, exactly one constant gives 0.
double pearson(std::span<const double> x, std::span<const double> y);

struct PhaseStats {
    sim::Activity activity = sim::Activity::Rest;
    double start_s = 0.0;
    double end_s = 0.0;
    std::optional<double> chest_mean;
    std::optional<double> watch_mean;  // zeros excluded
    std::int64_t chest_count = 0;
    std::int64_t watch_count = 0;
    std::int64_t watch_zeros = 0;
};

struct AgreementReport {
    double mae_bpm = 0.0;                // zeros excluded
    double pearson_r = 0.0;              // zeros excluded
    double watch_zero_fraction = 0.0;    // over all watch samples
    std::int64_t chest_count = 0;
    std::int64_t watch_count = 0;
    std::int64_t pair_count = 0;         // all pairs, zeros included
    std::int64_t valid_pair_count = 0;   // pairs with a non-zero watch reading
    std::vector<PhaseStats> phases;
};

// Times are relative to `start_boot_ns`; samples beyond the protocol fall in its last phase.
// Throws AnalysisError when no pair has a non-zero watch reading.
AgreementReport compare_hr(std::span<const HrPoint> chest, std::span<const HrPoint> watch,
                           std::int64_t start_boot_ns, const sim::ActivityProtocol& protocol);
AgreementReport compare_hr(std::string_view chest_csv, std::string_view watch_csv, const store::SessionMeta& meta,
                           const sim::ActivityProtocol& protocol);

// Reads meta.csv, chest_hr.csv and watch_hr.csv from an exported session directory.
AgreementReport compare_export(const std::filesystem::path& dir, const sim::ActivityProtocol& protocol);

std::string report_csv(const AgreementReport& report);
std::string phases_csv(const AgreementReport& report);

// time_s,chest_bpm,watch_bpm,phase_label with one row per whole second from
// the start to `duration_s`. Each value is the mean of that second's readings
// (zeros excluded for the watch, 0 if it only reported zeros); empty if none.
std::string merged_csv(std::span<const HrPoint> chest, std::span<const HrPoint> watch, std::int64_t start_boot_ns,
                       double duration_s, const sim::ActivityProtocol& protocol);

struct SyncErrorReport {
    std::int64_t true_offset_ns = 0;
    std::int64_t rounds = 0;
    std::int64_t corrected_offset_ns = 0;
    std::int64_t minus_half_rtt_offset_ns = 0;
    std::int64_t corrected_error_ns = 0;   // estimate - truth
    std::int64_t minus_half_rtt_error_ns = 0;
    std::int64_t mean_rtt_ns = 0;          // truncated toward zero
};

// Throws AnalysisError without ground truth or without rounds.
SyncErrorReport sync_error_report(std::span<const SyncRound> rounds, std::optional<std::int64_t> true_offset_ns);

std::string sync_error_csv(const SyncErrorReport& report);
// seq,t1_ns,t2_ns,t3_ns,rtt_ns,corrected_offset_ns,minus_half_rtt_offset_ns,corrected_error_ns,minus_half_rtt_error_ns
std::string sync_rounds_csv(std::span<const SyncRound> rounds, std::int64_t true_offset_ns);

}  // namespace wearsync::analysis
