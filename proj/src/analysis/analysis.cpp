#include "wearsync/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wearsync::analysis {

namespace {

std::int64_t to_int(const std::string& field, std::string_view what)
{
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(field, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != field.size())
        throw AnalysisError("bad integer '" + field + "' in " + std::string(what));
    return v;
}

std::optional<std::int64_t> to_opt_int(const std::string& field, std::string_view what)
{
    if (field.empty())
        return std::nullopt;
    return to_int(field, what);
}

std::vector<store::CsvRow> rows_of(std::string_view csv, const store::TableSchema& schema)
{
    std::vector<store::CsvRow> rows;
    try {
        rows = store::parse_csv(csv);
    } catch (const store::CsvError& e) {
        throw AnalysisError(std::string(schema.file_name) + ": " + e.what());
    }
    if (rows.empty() || store::csv_line(rows.front()) != schema.header() + "\n")
        throw AnalysisError(std::string(schema.file_name) + ": unexpected header");
    rows.erase(rows.begin());
    for (const auto& r : rows)
        if (r.size() != schema.columns.size())
            throw AnalysisError(std::string(schema.file_name) + ": wrong column count");
    return rows;
}

std::vector<HrPoint> load_hr(std::string_view csv, store::Stream stream, std::string_view time_column)
{
    const auto& schema = store::schema_for(stream);
    const std::size_t t = schema.index_of(time_column);
    const std::size_t b = schema.index_of("bpm");
    std::vector<HrPoint> out;
    for (const auto& r : rows_of(csv, schema))
        out.push_back(HrPoint{to_int(r[t], schema.file_name), to_int(r[b], schema.file_name)});
    return out;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw AnalysisError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double mean(std::span<const double> v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string opt_float(const std::optional<double>& v)
{
    return v ? store::format_float(*v) : std::string();
}

double seconds_since(std::int64_t t_ns, std::int64_t start_ns)
{
    return static_cast<double>(t_ns - start_ns) / 1e9;
}

}  // namespace

sim::ActivityProtocol default_protocol()
{
    using sim::Activity;
    return sim::ActivityProtocol({{Activity::Rest, 30}, {Activity::Run, 120}, {Activity::Walk, 120},
                                  {Activity::Run, 120}, {Activity::Walk, 120}});
}

std::vector<HrPoint> load_chest_hr(std::string_view csv)
{
    return load_hr(csv, store::Stream::ChestHr, "arrival_boot_ns");
}

std::vector<HrPoint> load_watch_hr(std::string_view csv)
{
    return load_hr(csv, store::Stream::WatchHr, "rebased_boot_ns");
}

store::SessionMeta load_meta(std::string_view csv)
{
    const auto& schema = store::meta_schema();
    const auto rows = rows_of(csv, schema);
    if (rows.size() != 1)
        throw AnalysisError("meta.csv must hold exactly one session");
    const auto& r = rows.front();
    auto col = [&](std::string_view name) -> const std::string& { return r[schema.index_of(name)]; };
    auto anchor = [&](std::string_view boot, std::string_view wall) -> std::optional<TimeAnchor> {
        const auto b = to_opt_int(col(boot), "meta.csv");
        const auto u = to_opt_int(col(wall), "meta.csv");
        if (!b || !u)
            return std::nullopt;
        return TimeAnchor{BootNanos{*b}, UnixMillis{*u}};
    };

    store::SessionMeta meta;
    meta.id = to_int(col("id"), "meta.csv");
    meta.title = col("title");
    meta.description = col("description");
    meta.created = UnixMillis{to_int(col("created_unix_ms"), "meta.csv")};
    meta.start = anchor("start_boot_ns", "start_unix_ms");
    meta.end = anchor("end_boot_ns", "end_unix_ms");
    meta.mean_offset_ns = to_opt_int(col("mean_offset_ns"), "meta.csv");
    meta.sync_rounds_used = to_opt_int(col("sync_rounds_used"), "meta.csv");
    if (!col("estimator").empty()) {
        meta.estimator = parse_estimator(col("estimator"));
        if (!meta.estimator)
            throw AnalysisError("unknown estimator '" + col("estimator") + "' in meta.csv");
    }
    meta.config_text = col("config_text");
    meta.status = meta.end ? store::SessionStatus::Stopped
                           : (meta.start ? store::SessionStatus::Recording : store::SessionStatus::Ready);
    return meta;
}

std::vector<Pair> pair_nearest(std::span<const HrPoint> chest, std::span<const HrPoint> watch, std::int64_t window_ns)
{
    // Chest indices sorted by time, so candidates for a watch sample are a contiguous range.
    std::vector<std::size_t> by_time(chest.size());
    std::iota(by_time.begin(), by_time.end(), std::size_t{0});
    std::stable_sort(by_time.begin(), by_time.end(),
                     [&](std::size_t a, std::size_t b) { return chest[a].t_ns < chest[b].t_ns; });

    struct Candidate {
        std::uint64_t distance;
        std::size_t watch;
        std::size_t chest;
        std::int64_t dt;
    };
    std::vector<Candidate> candidates;
    for (std::size_t w = 0; w < watch.size(); ++w) {
        const std::int64_t t = watch[w].t_ns;
        auto it = std::lower_bound(by_time.begin(), by_time.end(), t,
                                   [&](std::size_t c, std::int64_t v) { return chest[c].t_ns < v - window_ns; });
        for (; it != by_time.end(); ++it) {
            const std::int64_t ct = chest[*it].t_ns;
            if (ct > t + window_ns)
                break;
            const __int128 dt = static_cast<__int128>(t) - ct;
            if (dt < -window_ns || dt > window_ns)
                continue;
            candidates.push_back(Candidate{static_cast<std::uint64_t>(dt < 0 ? -dt : dt), w, *it, static_cast<std::int64_t>(dt)});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.distance != b.distance)
            return a.distance < b.distance;
        if (a.watch != b.watch)
            return a.watch < b.watch;
        return a.chest < b.chest;
    });

    std::vector<bool> chest_used(chest.size()), watch_used(watch.size());
    std::vector<Pair> pairs;
    for (const auto& c : candidates) {
        if (chest_used[c.chest] || watch_used[c.watch])
            continue;
        chest_used[c.chest] = watch_used[c.watch] = true;
        pairs.push_back(Pair{c.chest, c.watch, c.dt});
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.watch < b.watch; });
    return pairs;
}

double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.empty())
        throw AnalysisError("correlation needs two non-empty series of equal length");
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 && syy == 0.0)
        return 1.0;
    if (sxx == 0.0 || syy == 0.0)
        return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

AgreementReport compare_hr(std::span<const HrPoint> chest, std::span<const HrPoint> watch, std::int64_t start_boot_ns,
                           const sim::ActivityProtocol& protocol)
{
    AgreementReport report;
    report.chest_count = static_cast<std::int64_t>(chest.size());
    report.watch_count = static_cast<std::int64_t>(watch.size());

    const auto pairs = pair_nearest(chest, watch);
    report.pair_count = static_cast<std::int64_t>(pairs.size());
    std::vector<double> xs, ys;
    double abs_sum = 0;
    for (const auto& p : pairs) {
        if (watch[p.watch].bpm == 0)
            continue;
        const double c = static_cast<double>(chest[p.chest].bpm);
        const double w = static_cast<double>(watch[p.watch].bpm);
        xs.push_back(c);
        ys.push_back(w);
        abs_sum += std::abs(w - c);
    }
    report.valid_pair_count = static_cast<std::int64_t>(xs.size());
    if (xs.empty())
        throw AnalysisError("no pairs: the chest and watch heart-rate series do not overlap");
    report.mae_bpm = abs_sum / static_cast<double>(xs.size());
    report.pearson_r = pearson(xs, ys);

    const auto zeros = std::count_if(watch.begin(), watch.end(), [](const HrPoint& p) { return p.bpm == 0; });
    report.watch_zero_fraction = watch.empty() ? 0.0 : static_cast<double>(zeros) / static_cast<double>(watch.size());

    const auto& phases = protocol.phases();
    std::vector<double> chest_sum(phases.size()), watch_sum(phases.size());
    report.phases.resize(phases.size());
    for (std::size_t i = 0; i < phases.size(); ++i) {
        report.phases[i].activity = phases[i].label;
        report.phases[i].start_s = protocol.phase_start_s(i);
        report.phases[i].end_s = report.phases[i].start_s + phases[i].duration_s;
    }
    auto phase_of = [&](std::int64_t t) { return protocol.phase_index_at(std::max(0.0, seconds_since(t, start_boot_ns))); };
    for (const auto& p : chest) {
        const auto i = phase_of(p.t_ns);
        chest_sum[i] += static_cast<double>(p.bpm);
        ++report.phases[i].chest_count;
    }
    for (const auto& p : watch) {
        const auto i = phase_of(p.t_ns);
        ++report.phases[i].watch_count;
        if (p.bpm == 0) {
            ++report.phases[i].watch_zeros;
            continue;
        }
        watch_sum[i] += static_cast<double>(p.bpm);
    }
    for (std::size_t i = 0; i < phases.size(); ++i) {
        auto& ph = report.phases[i];
        if (ph.chest_count > 0)
            ph.chest_mean = chest_sum[i] / static_cast<double>(ph.chest_count);
        if (ph.watch_count > ph.watch_zeros)
            ph.watch_mean = watch_sum[i] / static_cast<double>(ph.watch_count - ph.watch_zeros);
    }
    return report;
}

AgreementReport compare_hr(std::string_view chest_csv, std::string_view watch_csv, const store::SessionMeta& meta,
                           const sim::ActivityProtocol& protocol)
{
    if (!meta.start)
        throw AnalysisError("session " + std::to_string(meta.id) + " was never started");
    const auto chest = load_chest_hr(chest_csv);
    const auto watch = load_watch_hr(watch_csv);
    return compare_hr(chest, watch, meta.start->boot_ns.value, protocol);
}

AgreementReport compare_export(const std::filesystem::path& dir, const sim::ActivityProtocol& protocol)
{
    const auto meta = load_meta(read_file(dir / "meta.csv"));
    return compare_hr(read_file(dir / "chest_hr.csv"), read_file(dir / "watch_hr.csv"), meta, protocol);
}

std::string report_csv(const AgreementReport& r)
{
    std::string out = "mae_bpm,pearson_r,watch_zero_fraction,chest_count,watch_count,pair_count,valid_pair_count\n";
    out += store::csv_line({store::format_float(r.mae_bpm), store::format_float(r.pearson_r),
                            store::format_float(r.watch_zero_fraction), std::to_string(r.chest_count),
                            std::to_string(r.watch_count), std::to_string(r.pair_count),
                            std::to_string(r.valid_pair_count)});
    return out;
}

std::string phases_csv(const AgreementReport& r)
{
    std::string out = "phase,label,start_s,end_s,chest_mean_bpm,watch_mean_bpm,chest_count,watch_count,watch_zeros\n";
    for (std::size_t i = 0; i < r.phases.size(); ++i) {
        const auto& p = r.phases[i];
        out += store::csv_line({std::to_string(i), std::string(sim::to_string(p.activity)), store::format_float(p.start_s),
                                store::format_float(p.end_s), opt_float(p.chest_mean), opt_float(p.watch_mean),
                                std::to_string(p.chest_count), std::to_string(p.watch_count),
                                std::to_string(p.watch_zeros)});
    }
    return out;
}

std::string merged_csv(std::span<const HrPoint> chest, std::span<const HrPoint> watch, std::int64_t start_boot_ns,
                       double duration_s, const sim::ActivityProtocol& protocol)
{
    const auto seconds = static_cast<std::size_t>(std::max(0.0, std::ceil(duration_s)));
    struct Bin {
        double chest_sum = 0, watch_sum = 0;
        int chest_n = 0, watch_n = 0, watch_zeros = 0;
    };
    std::vector<Bin> bins(seconds);
    auto bin_of = [&](std::int64_t t) -> Bin* {
        if (t < start_boot_ns)
            return nullptr;
        const auto s = static_cast<std::size_t>((t - start_boot_ns) / kNanosPerSecond);
        return s < bins.size() ? &bins[s] : nullptr;
    };
    for (const auto& p : chest)
        if (auto* b = bin_of(p.t_ns)) {
            b->chest_sum += static_cast<double>(p.bpm);
            ++b->chest_n;
        }
    for (const auto& p : watch)
        if (auto* b = bin_of(p.t_ns)) {
            if (p.bpm == 0) {
                ++b->watch_zeros;
            } else {
                b->watch_sum += static_cast<double>(p.bpm);
                ++b->watch_n;
            }
        }

    std::string out = "time_s,chest_bpm,watch_bpm,phase_label\n";
    for (std::size_t s = 0; s < bins.size(); ++s) {
        const auto& b = bins[s];
        std::string c = b.chest_n ? store::format_float(b.chest_sum / b.chest_n) : "";
        std::string w = b.watch_n ? store::format_float(b.watch_sum / b.watch_n) : (b.watch_zeros ? "0" : "");
        const auto phase = protocol.phases()[protocol.phase_index_at(static_cast<double>(s))].label;
        out += store::csv_line({std::to_string(s), c, w, std::string(sim::to_string(phase))});
    }
    return out;
}

SyncErrorReport sync_error_report(std::span<const SyncRound> rounds, std::optional<std::int64_t> true_offset_ns)
{
    if (!true_offset_ns)
        throw AnalysisError("no ground-truth offset: pass the simulated device's true offset");
    if (rounds.empty())
        throw AnalysisError("session has no sync rounds");
    SyncErrorReport r;
    r.true_offset_ns = *true_offset_ns;
    r.rounds = static_cast<std::int64_t>(rounds.size());
    r.corrected_offset_ns = aggregate_offset(rounds, Estimator::Corrected).mean_offset_ns;
    r.minus_half_rtt_offset_ns = aggregate_offset(rounds, Estimator::MinusHalfRtt).mean_offset_ns;
    r.corrected_error_ns = r.corrected_offset_ns - r.true_offset_ns;
    r.minus_half_rtt_error_ns = r.minus_half_rtt_offset_ns - r.true_offset_ns;
    std::vector<std::int64_t> rtts;
    for (const auto& round : rounds)
        rtts.push_back(round.rtt_ns());
    r.mean_rtt_ns = truncated_mean(rtts);
    return r;
}

std::string sync_error_csv(const SyncErrorReport& r)
{
    std::string out = "true_offset_ns,rounds,corrected_offset_ns,minus_half_rtt_offset_ns,corrected_error_ns,"
                      "minus_half_rtt_error_ns,mean_rtt_ns\n";
    out += store::csv_line({std::to_string(r.true_offset_ns), std::to_string(r.rounds),
                            std::to_string(r.corrected_offset_ns), std::to_string(r.minus_half_rtt_offset_ns),
                            std::to_string(r.corrected_error_ns), std::to_string(r.minus_half_rtt_error_ns),
                            std::to_string(r.mean_rtt_ns)});
    return out;
}

std::string sync_rounds_csv(std::span<const SyncRound> rounds, std::int64_t true_offset_ns)
{
    std::string out = "seq,t1_ns,t2_ns,t3_ns,rtt_ns,corrected_offset_ns,minus_half_rtt_offset_ns,corrected_error_ns,"
                      "minus_half_rtt_error_ns\n";
    for (const auto& r : rounds) {
        const auto c = estimate_offset_round(r, Estimator::Corrected);
        const auto p = estimate_offset_round(r, Estimator::MinusHalfRtt);
        out += store::csv_line({std::to_string(r.seq), std::to_string(r.t1.value), std::to_string(r.t2.value),
                                std::to_string(r.t3.value), std::to_string(r.rtt_ns()), std::to_string(c),
                                std::to_string(p), std::to_string(c - true_offset_ns),
                                std::to_string(p - true_offset_ns)});
    }
    return out;
}

}  // namespace wearsync::analysis
