#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "linearsr/attention.hpp"
#include "linearsr/errors.hpp"
#include "linearsr/rng.hpp"
#include "linearsr/tensor.hpp"

#include <json.hpp>

namespace linearsr {

enum class AttentionImpl { Linear, Naive, Noop };

inline const char* impl_name(AttentionImpl impl) {
    switch (impl) {
        case AttentionImpl::Linear: return "linear";
        case AttentionImpl::Naive: return "naive";
        case AttentionImpl::Noop: return "noop";
    }
    return "?";
}

struct BenchPoint {
    std::size_t n_tokens = 0;
    std::size_t d = 0;
    std::size_t heads = 0;
    AttentionImpl impl = AttentionImpl::Linear;
    double mean_seconds = 0;
    double std_seconds = 0;
    std::vector<double> rep_seconds;
    bool failed = false;
    std::string failure; // e.g. out-of-memory at large N
};

struct BenchConfig {
    std::vector<std::size_t> n_list = {256, 512, 1024, 2048, 4096, 8192};
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t reps = 5;
    std::size_t warmup = 1;
    double min_timed_seconds = 0.01; // inner-loop calibration floor per rep
    std::uint64_t seed = 42;
};

namespace bench_detail {

/// Multi-head forward over pre-split per-head inputs; forward timing only.
inline void run_impl(AttentionImpl impl, const std::vector<TensorF>& q,
                     const std::vector<TensorF>& k, const std::vector<TensorF>& v,
                     std::vector<TensorF>& out, double epsilon) {
    for (std::size_t h = 0; h < q.size(); ++h) {
        switch (impl) {
            case AttentionImpl::Linear:
                out[h] = linear_attention_forward(q[h], k[h], v[h], epsilon);
                break;
            case AttentionImpl::Naive:
                out[h] = naive_attention_forward(q[h], k[h], v[h], epsilon);
                break;
            case AttentionImpl::Noop:
                break;
        }
    }
}

} // namespace bench_detail

/// Timed sweep over sequence lengths. Inputs are reseeded per N; the two
/// real implementations are checked for agreement on each input before any
/// timing (correctness gates speed). Out-of-memory marks the point failed
/// and the sweep continues. Timing is single-threaded, steady_clock, with
/// the inner repeat count calibrated so each rep spans at least
/// min_timed_seconds.
inline std::vector<BenchPoint> run_sweep(AttentionImpl impl, const BenchConfig& cfg) {
    if (cfg.n_list.size() < 4) throw InsufficientDataError("run_sweep needs >= 4 sequence lengths");
    for (std::size_t i = 1; i < cfg.n_list.size(); ++i)
        if (cfg.n_list[i] <= cfg.n_list[i - 1])
            throw DomainError("run_sweep: n_list must be ascending");
    if (cfg.warmup < 1) throw DomainError("run_sweep: warmup must be >= 1");
    if (cfg.reps < 5) throw DomainError("run_sweep: reps must be >= 5");

    const double epsilon = 1e-4; // f32 benchmarking dtype needs a larger floor
    std::vector<BenchPoint> points;

    for (std::size_t n : cfg.n_list) {
        BenchPoint pt;
        pt.n_tokens = n;
        pt.d = cfg.d;
        pt.heads = cfg.heads;
        pt.impl = impl;
        try {
            Rng rng(cfg.seed ^ n);
            std::vector<TensorF> q, k, v;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                q.push_back(rng.normal_tensor<float>({n, cfg.d}));
                k.push_back(rng.normal_tensor<float>({n, cfg.d}));
                // Positive values: no cancellation in the weighted sums, so
                // the f32 equality gate is limited by rounding alone.
                v.push_back(rng.uniform_tensor<float>({n, cfg.d}, 0.1, 1.0));
            }

            // Correctness gate: both routes agree before we time anything.
            if (impl != AttentionImpl::Noop) {
                for (std::size_t h = 0; h < cfg.heads; ++h) {
                    TensorF lin = linear_attention_forward(q[h], k[h], v[h], epsilon);
                    TensorF nai = naive_attention_forward(q[h], k[h], v[h], epsilon);
                    const double rel = max_rel_diff(lin, nai, 1e-3);
                    if (rel > 1e-6)
                        throw NonFiniteError("correctness gate failed at N=" + std::to_string(n) +
                                             ": rel diff " + std::to_string(rel));
                }
            }

            std::vector<TensorF> out(cfg.heads);
            for (std::size_t wu = 0; wu < cfg.warmup; ++wu)
                bench_detail::run_impl(impl, q, k, v, out, epsilon);

            // Calibrate inner repeats so one timed region is measurable.
            std::size_t inner = 1;
            for (;;) {
                const auto t0 = std::chrono::steady_clock::now();
                for (std::size_t it = 0; it < inner; ++it)
                    bench_detail::run_impl(impl, q, k, v, out, epsilon);
                const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (el >= cfg.min_timed_seconds || inner >= (std::size_t(1) << 20)) break;
                inner *= 2;
            }

            for (std::size_t r = 0; r < cfg.reps; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                for (std::size_t it = 0; it < inner; ++it)
                    bench_detail::run_impl(impl, q, k, v, out, epsilon);
                const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                pt.rep_seconds.push_back(el / static_cast<double>(inner));
            }
            double mean = 0;
            for (double s : pt.rep_seconds) mean += s;
            mean /= static_cast<double>(pt.rep_seconds.size());
            double var = 0;
            for (double s : pt.rep_seconds) var += (s - mean) * (s - mean);
            pt.mean_seconds = mean;
            pt.std_seconds = std::sqrt(var / static_cast<double>(pt.rep_seconds.size()));
        } catch (const std::bad_alloc&) {
            pt.failed = true;
            pt.failure = "out of memory";
        }
        points.push_back(std::move(pt));
    }
    return points;
}

struct ScalingFit {
    double exponent = 0;
    double r_squared = 0;
    std::size_t points_used = 0;
};

/// OLS on (ln N, ln mean time). Needs >= 4 successful points spanning >= 8x in N.
inline ScalingFit fit_scaling(const std::vector<BenchPoint>& points) {
    std::vector<std::pair<double, double>> xy;
    std::size_t n_min = SIZE_MAX, n_max = 0;
    for (const auto& p : points) {
        if (p.failed || !(p.mean_seconds > 0)) continue;
        xy.push_back({std::log(static_cast<double>(p.n_tokens)), std::log(p.mean_seconds)});
        n_min = std::min(n_min, p.n_tokens);
        n_max = std::max(n_max, p.n_tokens);
    }
    if (xy.size() < 4)
        throw InsufficientDataError("fit_scaling needs >= 4 successful points, got " +
                                    std::to_string(xy.size()));
    if (n_max < 8 * n_min)
        throw InsufficientDataError("fit_scaling needs an >= 8x span in N");

    double sx = 0, sy = 0;
    for (auto& [x, y] : xy) {
        sx += x;
        sy += y;
    }
    const double mx = sx / xy.size(), my = sy / xy.size();
    double sxx = 0, sxy = 0, syy = 0;
    for (auto& [x, y] : xy) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    ScalingFit fit;
    fit.exponent = sxy / sxx;
    fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    fit.points_used = xy.size();
    return fit;
}

/// CSV schema: impl,n,d,heads,rep,seconds
inline std::string bench_points_csv(const std::vector<BenchPoint>& points) {
    std::ostringstream os;
    os.precision(12);
    os << "impl,n,d,heads,rep,seconds\n";
    for (const auto& p : points) {
        if (p.failed) {
            os << impl_name(p.impl) << "," << p.n_tokens << "," << p.d << "," << p.heads
               << ",failed," << p.failure << "\n";
            continue;
        }
        for (std::size_t r = 0; r < p.rep_seconds.size(); ++r)
            os << impl_name(p.impl) << "," << p.n_tokens << "," << p.d << "," << p.heads << ","
               << r << "," << p.rep_seconds[r] << "\n";
    }
    return os.str();
}

inline nlohmann::json bench_summary_json(const std::vector<BenchPoint>& points,
                                         const ScalingFit& fit) {
    nlohmann::json j;
    j["fit"] = {{"exponent", fit.exponent},
                {"r_squared", fit.r_squared},
                {"points_used", fit.points_used}};
    for (const auto& p : points) {
        nlohmann::json pj = {{"impl", impl_name(p.impl)}, {"n", p.n_tokens},
                             {"d", p.d},                  {"heads", p.heads},
                             {"failed", p.failed}};
        if (!p.failed) {
            pj["mean_seconds"] = p.mean_seconds;
            pj["std_seconds"] = p.std_seconds;
        } else {
            pj["failure"] = p.failure;
        }
        j["points"].push_back(std::move(pj));
    }
    return j;
}

} // namespace linearsr
