#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace wearsync::sim {

struct LatencyModel {
    double mean_ms = 0.0;
    double jitter_std_ms = 0.0;
    std::uint64_t seed = 0;
};

// Per-message delays drawn from Normal(mean, jitter), truncated at zero.
class LatencySampler {
public:
    explicit LatencySampler(const LatencyModel& model)
        : model_(model)
        , rng_(model.seed)
    {
    }

    std::int64_t next_ns()
    {
        if (model_.jitter_std_ms <= 0.0)
            return std::max<std::int64_t>(0, static_cast<std::int64_t>(model_.mean_ms * 1e6));
        std::normal_distribution<double> dist(model_.mean_ms * 1e6, model_.jitter_std_ms * 1e6);
        return std::max<std::int64_t>(0, static_cast<std::int64_t>(dist(rng_)));
    }

private:
    LatencyModel model_;
    std::mt19937_64 rng_;
};

// Delays in each direction of a device link. Different means give an asymmetric link.
struct LinkLatency {
    LatencyModel uplink;    // device -> hub
    LatencyModel downlink;  // hub -> device

    static LinkLatency symmetric(double mean_ms, double jitter_std_ms, std::uint64_t seed)
    {
        return LinkLatency{LatencyModel{mean_ms, jitter_std_ms, seed}, LatencyModel{mean_ms, jitter_std_ms, seed ^ 0x9e3779b97f4a7c15ULL}};
    }
};

// FIFO delay line over an ordered stream: an item is released at
// max(previous release, sent + delay), so delays never reorder items.
template <class T>
class DelayLine {
public:
    void push(T item, std::int64_t sent_ns, std::int64_t delay_ns)
    {
        const std::int64_t release = std::max(last_release_, sent_ns + delay_ns);
        last_release_ = release;
        queue_.push_back(Entry{release, std::move(item)});
    }

    std::optional<std::int64_t> next_release() const
    {
        if (queue_.empty())
            return std::nullopt;
        return queue_.front().release_ns;
    }

    std::vector<T> pop_due(std::int64_t now_ns)
    {
        std::vector<T> due;
        while (!queue_.empty() && queue_.front().release_ns <= now_ns) {
            due.push_back(std::move(queue_.front().item));
            queue_.pop_front();
        }
        return due;
    }

    bool empty() const { return queue_.empty(); }
    void clear()
    {
        queue_.clear();
        last_release_ = std::numeric_limits<std::int64_t>::min();
    }

private:
    struct Entry {
        std::int64_t release_ns;
        T item;
    };
    std::deque<Entry> queue_;
    std::int64_t last_release_ = std::numeric_limits<std::int64_t>::min();
};

}  // namespace wearsync::sim
