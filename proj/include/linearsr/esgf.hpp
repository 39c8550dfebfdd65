#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"
#include "linearsr/trace.hpp"

#include <json.hpp>

namespace linearsr {

struct KneeConfig {
    std::size_t window = 9;      // centered moving-average width W
    double min_gain = 0.005;     // delta, as a fraction of total smoothed gain
    double osc_var_ratio = 4.0;  // rho
};

struct KneeReport {
    std::uint64_t knee_iteration = 0;
    std::size_t knee_index = 0;
    std::uint64_t improve_end_iteration = 0;   // end of the improving prefix
    std::int64_t oscillation_start_iteration = -1; // -1 when not detected
    bool truncated_at_divergence = false;
    std::uint64_t divergence_iteration = 0;
    MetricTrace smoothed_trace;
    KneeConfig config_used;
    double prefix_variance_baseline = 0.0;
};

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t w) {
    const std::size_t n = v.size();
    const std::size_t hw = w / 2;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Symmetric shrink at the edges; preserves linear sequences exactly.
        const std::size_t r = std::min({hw, i, n - 1 - i});
        double acc = 0;
        for (std::size_t j = i - r; j <= i + r; ++j) acc += v[j];
        out[i] = acc / static_cast<double>(2 * r + 1);
    }
    return out;
}

inline double window_variance(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    double mean = 0;
    for (std::size_t j = lo; j < hi; ++j) mean += v[j];
    const double m = static_cast<double>(hi - lo);
    mean /= m;
    double var = 0;
    for (std::size_t j = lo; j < hi; ++j) var += (v[j] - mean) * (v[j] - mean);
    return var / m;
}

} // namespace detail

/// Knee detection over a validation-metric trace:
///   1. centered moving average of width W (truncated at the edges);
///   2. fold orientation to higher-better, normalize to [0,1];
///   3. improving prefix ends at the first width-W window whose smoothed
///      gain falls below delta (= min_gain x total smoothed gain);
///   4. knee = argmax of vertical distance above the first-to-last chord of
///      the improving prefix, ties broken toward the LATEST iteration;
///   5. oscillation_start = first width-W window whose raw-value variance
///      exceeds rho x the median rolling variance inside the improving prefix.
/// A NaN divergence marker truncates the trace before analysis.
inline KneeReport detect_knee(const MetricTrace& trace, const KneeConfig& cfg = {}) {
    if (cfg.window < 1) throw DomainError("detect_knee: window must be >= 1");

    // Truncate at the first divergence marker.
    std::vector<std::uint64_t> iters;
    std::vector<double> raw;
    bool truncated = false;
    std::uint64_t div_iter = 0;
    for (const auto& [it, v] : trace.points) {
        if (std::isnan(v)) {
            truncated = true;
            div_iter = it;
            break;
        }
        if (!std::isfinite(v)) throw NonFiniteError("trace value at iteration " + std::to_string(it));
        iters.push_back(it);
        raw.push_back(trace.orientation == MetricOrientation::HigherBetter ? v : -v);
    }

    const std::size_t n = raw.size();
    const std::size_t w = cfg.window;
    if (n < 3 * w)
        throw TooShortError("detect_knee needs >= 3W points (" + std::to_string(3 * w) + "), got " +
                            std::to_string(n));

    std::vector<double> sm = detail::moving_average(raw, w);

    const double sm_max = *std::max_element(sm.begin(), sm.end());
    const double total_gain = sm_max - sm[0];
    if (!(total_gain > 1e-12))
        throw AllFlatError("total smoothed gain " + std::to_string(total_gain) + " is below threshold");
    const double delta = cfg.min_gain * total_gain;

    // (3) improving prefix
    std::size_t prefix_end = n - 1;
    for (std::size_t i = 0; i + w <= n; ++i) {
        if (sm[i + w - 1] - sm[i] < delta) {
            prefix_end = i + w - 1;
            break;
        }
    }

    // (4) chord distance over the normalized improving prefix
    const double it0 = static_cast<double>(iters[0]);
    const double it1 = static_cast<double>(iters[prefix_end]);
    double lo = sm[0], hi = sm[0];
    for (std::size_t i = 0; i <= prefix_end; ++i) {
        lo = std::min(lo, sm[i]);
        hi = std::max(hi, sm[i]);
    }
    const double span_x = std::max(it1 - it0, 1.0);
    const double span_y = std::max(hi - lo, 1e-300);
    const double y0 = (sm[0] - lo) / span_y;
    const double y1 = (sm[prefix_end] - lo) / span_y;
    std::size_t knee_idx = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= prefix_end; ++i) {
        const double x = (static_cast<double>(iters[i]) - it0) / span_x;
        const double y = (sm[i] - lo) / span_y;
        const double dist = y - (y0 + (y1 - y0) * x);
        // ties (within rounding) break toward the latest index
        if (dist >= best - 1e-9) {
            knee_idx = i;
            if (dist > best) best = dist;
        }
    }

    // (5) oscillation onset against the prefix's rolling-variance baseline
    std::vector<double> prefix_vars;
    for (std::size_t i = 0; i + w <= prefix_end + 1; ++i)
        prefix_vars.push_back(detail::window_variance(raw, i, i + w));
    double baseline = 0;
    if (!prefix_vars.empty()) {
        std::vector<double> sorted = prefix_vars;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        baseline = sorted[sorted.size() / 2];
    }
    std::int64_t osc_iter = -1;
    if (baseline > 0) {
        for (std::size_t i = 0; i + w <= n; ++i) {
            if (detail::window_variance(raw, i, i + w) > cfg.osc_var_ratio * baseline) {
                osc_iter = static_cast<std::int64_t>(iters[i]);
                break;
            }
        }
    }

    KneeReport r;
    r.knee_iteration = iters[knee_idx];
    r.knee_index = knee_idx;
    r.improve_end_iteration = iters[prefix_end];
    r.oscillation_start_iteration = osc_iter;
    r.truncated_at_divergence = truncated;
    r.divergence_iteration = div_iter;
    r.config_used = cfg;
    r.prefix_variance_baseline = baseline;
    r.smoothed_trace.name = trace.name + "_smoothed";
    r.smoothed_trace.orientation = MetricOrientation::HigherBetter;
    for (std::size_t i = 0; i < n; ++i) r.smoothed_trace.points.push_back({iters[i], sm[i]});
    return r;
}

inline nlohmann::json knee_report_json(const KneeReport& r) {
    nlohmann::json j;
    j["knee_iteration"] = r.knee_iteration;
    j["improve_end_iteration"] = r.improve_end_iteration;
    j["oscillation_start_iteration"] = r.oscillation_start_iteration;
    j["truncated_at_divergence"] = r.truncated_at_divergence;
    if (r.truncated_at_divergence) j["divergence_iteration"] = r.divergence_iteration;
    j["config"] = {{"window", r.config_used.window},
                   {"min_gain", r.config_used.min_gain},
                   {"osc_var_ratio", r.config_used.osc_var_ratio}};
    j["prefix_variance_baseline"] = r.prefix_variance_baseline;
    return j;
}

struct CheckpointRef {
    std::string path;
    std::uint64_t iteration = 0;
};

/// Median knee across metrics, then the nearest checkpoint at or before it.
inline CheckpointRef select_finetune_checkpoint(const std::vector<MetricTrace>& traces,
                                                const std::vector<CheckpointRef>& checkpoints,
                                                const KneeConfig& cfg = {}) {
    if (traces.empty()) throw TooShortError("select_finetune_checkpoint: no traces");
    if (checkpoints.empty()) throw NoCheckpointError("no checkpoints supplied");

    std::vector<std::uint64_t> knees;
    for (const auto& t : traces) knees.push_back(detect_knee(t, cfg).knee_iteration);
    std::sort(knees.begin(), knees.end());
    const std::uint64_t median = knees[(knees.size() - 1) / 2];

    const CheckpointRef* best = nullptr;
    for (const auto& c : checkpoints)
        if (c.iteration <= median && (!best || c.iteration > best->iteration)) best = &c;
    if (!best)
        throw NoCheckpointError("no checkpoint at or before median knee iteration " +
                                std::to_string(median));
    return *best;
}

struct StabilityRunSummary {
    std::string label; // "Stable" or "Collapse"
    double final_value = 0.0;
    std::size_t divergence_events = 0;
    double oscillation_amplitude = 0.0; // std of raw minus smoothed over the last third
};

struct StabilityReport {
    StabilityRunSummary run_a, run_b;
    double final_value_delta = 0.0; // a - b in higher-better terms
};

namespace detail {

inline StabilityRunSummary summarize_run(const MetricTrace& t) {
    StabilityRunSummary s;
    std::vector<double> finite;
    for (const auto& [it, v] : t.points) {
        if (std::isnan(v)) {
            ++s.divergence_events;
            continue;
        }
        finite.push_back(t.orientation == MetricOrientation::HigherBetter ? v : -v);
    }
    s.label = s.divergence_events > 0 ? "Collapse" : "Stable";
    s.final_value = finite.empty() ? std::nan("") : finite.back();
    if (finite.size() >= 6) {
        const std::size_t lo = finite.size() - finite.size() / 3;
        std::vector<double> sm = moving_average(finite, 5);
        double var = 0;
        for (std::size_t i = lo; i < finite.size(); ++i) {
            const double d = finite[i] - sm[i];
            var += d * d;
        }
        s.oscillation_amplitude = std::sqrt(var / static_cast<double>(finite.size() - lo));
    }
    return s;
}

} // namespace detail

inline StabilityReport compare_stability(const MetricTrace& run_a, const MetricTrace& run_b) {
    StabilityReport r;
    r.run_a = detail::summarize_run(run_a);
    r.run_b = detail::summarize_run(run_b);
    r.final_value_delta = r.run_a.final_value - r.run_b.final_value;
    return r;
}

inline nlohmann::json stability_report_json(const StabilityReport& r) {
    auto run = [](const StabilityRunSummary& s) {
        nlohmann::json j;
        j["label"] = s.label;
        if (std::isnan(s.final_value))
            j["final_value"] = nullptr;
        else
            j["final_value"] = s.final_value;
        j["divergence_events"] = s.divergence_events;
        j["oscillation_amplitude"] = s.oscillation_amplitude;
        return j;
    };
    nlohmann::json j;
    j["run_a"] = run(r.run_a);
    j["run_b"] = run(r.run_b);
    if (std::isnan(r.final_value_delta))
        j["final_value_delta"] = nullptr;
    else
        j["final_value_delta"] = r.final_value_delta;
    return j;
}

} // namespace linearsr
