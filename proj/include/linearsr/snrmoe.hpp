#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"

#include <json.hpp>

namespace linearsr {

/// log-SNR of the flow-matching path: lambda(t) = 2(log(1-t) - log t).
/// t here follows the noise-schedule axis: t -> 1 is the pure-noise side.
inline double log_snr(double t, bool allow_infinite = false) {
    if (allow_infinite) {
        if (t == 0.0) return std::numeric_limits<double>::infinity();
        if (t == 1.0) return -std::numeric_limits<double>::infinity();
    }
    if (!(t > 0.0 && t < 1.0)) throw DomainError("log_snr: t must be in (0,1), got " + std::to_string(t));
    return 2.0 * (std::log(1.0 - t) - std::log(t));
}

/// Inverse: t(lambda) = 1 / (exp(lambda/2) + 1).
inline double inv_log_snr(double lambda) {
    if (!std::isfinite(lambda)) throw DomainError("inv_log_snr: lambda must be finite");
    return 1.0 / (std::exp(lambda / 2.0) + 1.0);
}

/// lambda = -2 log(sigma) applied to the sigma bounds of the noise schedule.
/// Returns (lambda_min, lambda_max) = (-2 ln sigma_max, -2 ln sigma_min).
inline std::pair<double, double> effective_range(double sigma_min_eff, double sigma_max_eff) {
    if (!(sigma_min_eff > 0.0) || !(sigma_max_eff > 0.0))
        throw DomainError("effective_range: sigma bounds must be positive");
    if (!(sigma_min_eff < sigma_max_eff))
        throw DomainError("effective_range: sigma_min must be < sigma_max");
    return {-2.0 * std::log(sigma_max_eff), -2.0 * std::log(sigma_min_eff)};
}

struct LogSnrSchedule {
    double sigma_min_eff = 0.0118;
    double sigma_max_eff = 33.78;
    double lambda_min = 0.0;
    double lambda_max = 0.0;

    static LogSnrSchedule from_sigma(double sigma_min_eff, double sigma_max_eff) {
        LogSnrSchedule s;
        s.sigma_min_eff = sigma_min_eff;
        s.sigma_max_eff = sigma_max_eff;
        std::tie(s.lambda_min, s.lambda_max) = effective_range(sigma_min_eff, sigma_max_eff);
        return s;
    }

    double lambda_of_t(double t) const { return log_snr(t); }
    double t_of_lambda(double lambda) const { return inv_log_snr(lambda); }
};

/// K = 2^depth experts over t in [0,1]. Intervals are half-open with the
/// boundary value belonging to the higher-t (higher-noise) side; the final
/// expert is closed at t = 1. Experts are indexed by generation order, i.e.
/// expert 0 owns the highest-t (noisiest) interval.
struct ExpertPartition {
    std::size_t num_experts = 4;
    double anchor_t = 0.875;
    // Interior boundaries, descending in t (equivalently ascending in lambda).
    std::vector<double> t_boundaries;
    std::vector<double> lambda_boundaries;
    double lambda_min = 0.0;
    double lambda_max = 0.0;

    /// Inclusive-by-table [t_lo, t_hi] bounds of expert k (0 = noisiest).
    std::pair<double, double> expert_t_range(std::size_t k) const {
        const double hi = (k == 0) ? 1.0 : t_boundaries[k - 1];
        const double lo = (k == num_experts - 1) ? 0.0 : t_boundaries[k];
        return {lo, hi};
    }

    std::pair<double, double> expert_lambda_range(std::size_t k) const {
        const double lo = (k == 0) ? lambda_min : lambda_boundaries[k - 1];
        const double hi = (k == num_experts - 1) ? lambda_max : lambda_boundaries[k];
        return {lo, hi};
    }
};

struct RouteDecision {
    std::size_t expert_index = 0;
    double t = 0.0;
    double lambda = 0.0;
};

/// Hierarchical midpoint bisection in log-SNR space. depth=1 splits at
/// lambda(anchor_t); each further level bisects every sub-interval at its
/// lambda-midpoint. Returns 2^depth experts.
inline ExpertPartition derive_partition(const LogSnrSchedule& schedule, double anchor_t,
                                        std::size_t depth) {
    if (depth == 0) throw DomainError("derive_partition: depth must be >= 1");
    if (!(anchor_t > 0.0 && anchor_t < 1.0))
        throw DomainError("derive_partition: anchor_t must be in (0,1)");
    const double lambda_anchor = schedule.lambda_of_t(anchor_t);
    if (!(lambda_anchor > schedule.lambda_min && lambda_anchor < schedule.lambda_max))
        throw DomainError("derive_partition: anchor lambda " + std::to_string(lambda_anchor) +
                          " outside effective range [" + std::to_string(schedule.lambda_min) + ", " +
                          std::to_string(schedule.lambda_max) + "]");

    // Ascending-lambda boundary list including the range ends.
    std::vector<double> bounds = {schedule.lambda_min, lambda_anchor, schedule.lambda_max};
    for (std::size_t level = 1; level < depth; ++level) {
        std::vector<double> refined;
        refined.push_back(bounds.front());
        for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
            refined.push_back(0.5 * (bounds[i] + bounds[i + 1]));
            refined.push_back(bounds[i + 1]);
        }
        bounds = std::move(refined);
    }

    ExpertPartition p;
    p.num_experts = std::size_t(1) << depth;
    p.anchor_t = anchor_t;
    p.lambda_min = schedule.lambda_min;
    p.lambda_max = schedule.lambda_max;
    p.lambda_boundaries.assign(bounds.begin() + 1, bounds.end() - 1);
    for (double lam : p.lambda_boundaries) p.t_boundaries.push_back(schedule.t_of_lambda(lam));
    return p;
}

/// Deterministic interval lookup; total on [0,1]. A boundary t belongs to the
/// interval where it is the lower edge, i.e. the higher-t (noisier) expert.
inline RouteDecision route(double t, const ExpertPartition& partition) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("route: t must be in [0,1]");
    std::size_t k = partition.num_experts - 1;
    // t_boundaries are descending in t; expert i owns [t_boundaries[i], prev).
    for (std::size_t i = 0; i < partition.t_boundaries.size(); ++i) {
        if (t >= partition.t_boundaries[i]) {
            k = i;
            break;
        }
    }
    RouteDecision d;
    d.expert_index = k;
    d.t = t;
    d.lambda = (t > 0.0 && t < 1.0) ? log_snr(t) : log_snr(t, /*allow_infinite=*/true);
    return d;
}

/// Adapter between the two time conventions: the flow-matching interpolant
/// has t=0 at the prior (noise) while the schedule axis has t=1 at pure
/// noise. Training code holding a flow time calls this.
inline RouteDecision route_flow_time(double t_flow, const ExpertPartition& partition) {
    if (!(t_flow >= 0.0 && t_flow <= 1.0)) throw DomainError("route_flow_time: t must be in [0,1]");
    return route(1.0 - t_flow, partition);
}

inline std::string expert_task_label(const ExpertPartition& p, std::size_t k) {
    if (p.num_experts == 4) {
        static const char* labels[] = {"Initial Denoising", "Coarse Structure", "Texture Generation",
                                       "Detail Refinement"};
        return labels[k];
    }
    if (p.num_experts == 2) return k == 0 ? "High-Noise Zone" : "Low-Noise Zone";
    std::ostringstream os;
    os << "Expert " << (k + 1) << " zone";
    return os.str();
}

/// Boundary table, one row per expert ordered by generation process
/// (noisiest first), as CSV or JSON.
inline std::string emit_routing_table(const ExpertPartition& p, const std::string& format) {
    if (format == "csv") {
        std::ostringstream os;
        os.precision(15);
        os << "expert,task,lambda_lo,lambda_hi,t_lo,t_hi\n";
        for (std::size_t k = 0; k < p.num_experts; ++k) {
            auto [llo, lhi] = p.expert_lambda_range(k);
            auto [tlo, thi] = p.expert_t_range(k);
            os << (k + 1) << "," << expert_task_label(p, k) << "," << llo << "," << lhi << ","
               << tlo << "," << thi << "\n";
        }
        return os.str();
    }
    if (format == "json") {
        nlohmann::json j;
        j["num_experts"] = p.num_experts;
        j["anchor_t"] = p.anchor_t;
        j["lambda_min"] = p.lambda_min;
        j["lambda_max"] = p.lambda_max;
        j["lambda_boundaries"] = p.lambda_boundaries;
        j["t_boundaries"] = p.t_boundaries;
        auto& experts = j["experts"];
        for (std::size_t k = 0; k < p.num_experts; ++k) {
            auto [llo, lhi] = p.expert_lambda_range(k);
            auto [tlo, thi] = p.expert_t_range(k);
            experts.push_back({{"expert", k + 1},
                               {"task", expert_task_label(p, k)},
                               {"lambda_range", {llo, lhi}},
                               {"t_range", {tlo, thi}}});
        }
        return j.dump(2) + "\n";
    }
    throw DomainError("emit_routing_table: unknown format '" + format + "'");
}

} // namespace linearsr
