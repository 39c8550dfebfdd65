#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"

namespace linearsr {

enum class MetricOrientation { HigherBetter, LowerBetter };

/// (iteration, value) series. NaN values are permitted only as explicit
/// divergence markers; everything else must be finite.
struct MetricTrace {
    std::string name;
    MetricOrientation orientation = MetricOrientation::HigherBetter;
    std::vector<std::pair<std::uint64_t, double>> points;

    void append(std::uint64_t iteration, double value) {
        if (!points.empty() && iteration <= points.back().first)
            throw DomainError("trace iterations must be strictly increasing");
        points.push_back({iteration, value});
    }

    std::size_t size() const { return points.size(); }

    bool has_divergence_marker() const {
        for (const auto& [it, v] : points)
            if (std::isnan(v)) return true;
        return false;
    }
};

/// CSV schema: `iteration,metric_name,value` with a header row, UTF-8, LF.
/// NaN divergence markers serialize as the literal `nan`.
inline void write_trace_csv(std::ostream& os, const std::vector<MetricTrace>& traces) {
    os << "iteration,metric_name,value\n";
    // Merge by iteration so the file reads as a chronological log.
    std::vector<std::tuple<std::uint64_t, std::string, double>> rows;
    for (const auto& t : traces)
        for (const auto& [it, v] : t.points) rows.push_back({it, t.name, v});
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    os.precision(17);
    for (const auto& [it, name, v] : rows) {
        os << it << "," << name << ",";
        if (std::isnan(v))
            os << "nan";
        else
            os << v;
        os << "\n";
    }
}

inline void write_trace_csv(const std::string& path, const std::vector<MetricTrace>& traces) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open trace file for writing: " + path);
    write_trace_csv(f, traces);
}

/// Orientation is not stored in the CSV; callers set it per metric name
/// (train_loss is lower-better, psnr higher-better, anything else defaults
/// to higher-better unless overridden).
inline std::vector<MetricTrace> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty trace CSV");
    if (line != "iteration,metric_name,value" && line != "iteration,metric_name,value\r")
        throw FormatError("bad trace CSV header: " + line);

    std::map<std::string, std::size_t> index;
    std::vector<MetricTrace> traces;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string it_s, name, v_s;
        if (!std::getline(ls, it_s, ',') || !std::getline(ls, name, ',') || !std::getline(ls, v_s))
            throw FormatError("bad trace CSV row at line " + std::to_string(lineno));
        std::uint64_t it = std::stoull(it_s);
        double v = (v_s == "nan" || v_s == "NaN") ? std::nan("") : std::stod(v_s);
        auto [pos, inserted] = index.try_emplace(name, traces.size());
        if (inserted) {
            MetricTrace t;
            t.name = name;
            t.orientation = (name == "train_loss" || name == "val_loss")
                                ? MetricOrientation::LowerBetter
                                : MetricOrientation::HigherBetter;
            traces.push_back(std::move(t));
        }
        traces[pos->second].append(it, v);
    }
    return traces;
}

inline std::vector<MetricTrace> read_trace_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open trace file: " + path);
    return read_trace_csv(f);
}

} // namespace linearsr
