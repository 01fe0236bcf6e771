#pragma once

// Map quality metrics: Renyi entropy, peak picking, location bias and a small
// timing harness.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bfl/error.hpp"
#include "bfl/solvers.hpp"
#include "bfl/train.hpp"

namespace bfl {

// R(alpha) = 1/(1-alpha) log2( sum |B|^alpha a / sum |B| a ), a = cell area.
// Note the denominator is not raised to alpha, so R depends on the map's scale.
inline double renyi_entropy(const Eigen::VectorXd& values, double cell_area, double alpha = 3.0) {
    if (alpha == 1.0) throw parameter_error("renyi entropy is undefined at alpha = 1");
    const double denom = values.cwiseAbs().sum() * cell_area;
    if (!(denom > 0)) throw parameter_error("renyi entropy of an all-zero map is undefined");
    const double num = values.cwiseAbs().array().pow(alpha).sum() * cell_area;
    return std::log2(num / denom) / (1.0 - alpha);
}

inline double renyi_entropy(const power_map& map, double alpha = 3.0) {
    if (!map.grid) throw parameter_error("map has no grid");
    return renyi_entropy(map.values, map.grid->cell_area, alpha);
}

struct peak_list {
    std::vector<vec3> positions;
    std::vector<std::size_t> indices;
    bool complete = true; // false when fewer than n_peaks positive values remained
};

// Greedy: take the largest remaining value (lowest index on ties), suppress every
// grid point closer than min_separation, repeat.
inline peak_list extract_locations(const power_map& map, std::size_t n_peaks, double min_separation) {
    if (n_peaks < 1) throw parameter_error("extract_locations needs n_peaks >= 1");
    if (!map.grid || map.grid->size() != static_cast<std::size_t>(map.values.size()))
        throw parameter_error("map and grid sizes differ");
    const auto& pts = map.grid->points;
    std::vector<bool> alive(pts.size(), true);
    const double cut = min_separation * (1 - 1e-9);
    peak_list out;
    while (out.indices.size() < n_peaks) {
        std::size_t best = pts.size();
        double best_v = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double v = map.values(static_cast<Eigen::Index>(i));
            if (alive[i] && v > best_v) {
                best_v = v;
                best = i;
            }
        }
        if (best == pts.size()) {
            out.complete = false;
            break;
        }
        out.indices.push_back(best);
        out.positions.push_back(pts[best]);
        for (std::size_t i = 0; i < pts.size(); ++i)
            if ((pts[i] - pts[best]).norm() < cut) alive[i] = false;
    }
    return out;
}

struct bias_result {
    double mean = 0;           // mean matched distance, meters
    std::size_t unmatched = 0; // truths left without an estimate
};

// Minimum-total-distance assignment between the two lists (bitmask DP over the
// larger side), then the mean matched distance.
inline bias_result location_bias(const std::vector<vec3>& estimated, const std::vector<vec3>& truth) {
    if (estimated.empty() || truth.empty()) throw parameter_error("location bias needs non-empty lists");
    const bool truth_small = truth.size() <= estimated.size();
    const auto& small = truth_small ? truth : estimated;
    const auto& large = truth_small ? estimated : truth;
    if (large.size() > 16) throw parameter_error("location bias supports at most 16 positions per list");
    const std::size_t states = std::size_t{1} << large.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    // cost[mask] after assigning the first popcount(mask) entries of `small`
    std::vector<double> cost(states, inf);
    cost[0] = 0;
    for (std::size_t mask = 0; mask < states; ++mask) {
        if (cost[mask] == inf) continue;
        const auto used = static_cast<std::size_t>(std::popcount(mask));
        if (used >= small.size()) continue;
        for (std::size_t j = 0; j < large.size(); ++j) {
            if (mask & (std::size_t{1} << j)) continue;
            const std::size_t next = mask | (std::size_t{1} << j);
            cost[next] = std::min(cost[next], cost[mask] + (small[used] - large[j]).norm());
        }
    }
    double best = inf;
    for (std::size_t mask = 0; mask < states; ++mask)
        if (static_cast<std::size_t>(std::popcount(mask)) == small.size()) best = std::min(best, cost[mask]);
    bias_result r;
    r.mean = best / static_cast<double>(small.size());
    r.unmatched = truth.size() > estimated.size() ? truth.size() - estimated.size() : 0;
    return r;
}

struct eval_report {
    std::string method_name;
    double renyi = std::numeric_limits<double>::quiet_NaN(); // NaN for an all-zero map
    double delta_l = 0;
    double wall_time = 0;
    std::size_t unmatched = 0;
};

struct benchmark_summary {
    std::vector<eval_report> reports;
    double mean_time = 0;
    double median_time = 0;
    double cv_time = 0; // standard deviation / mean of the wall times
    double mean_renyi = 0;
    double mean_delta_l = 0;
};

using map_method = std::function<power_map(const csm_matrix&)>;

// Times `method` on each instance; entropy and bias are computed outside the
// timed region. Peaks are picked with a 2-spacing suppression radius unless a
// radius is given.
inline benchmark_summary benchmark(const std::string& name, const map_method& method,
                                   const std::vector<labeled_sample>& instances, double min_separation = -1) {
    benchmark_summary s;
    for (const auto& inst : instances) {
        const auto start = std::chrono::steady_clock::now();
        const power_map map = method(inst.csm);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        eval_report r;
        r.method_name = name;
        r.wall_time = elapsed;
        if (map.values.cwiseAbs().sum() > 0) r.renyi = renyi_entropy(map);
        if (!inst.sources.empty()) {
            const double sep = min_separation >= 0 ? min_separation : 2 * map.grid->spacing();
            const auto peaks = extract_locations(map, inst.sources.size(), sep);
            std::vector<vec3> truth;
            for (const auto& t : inst.sources) truth.push_back(t.position);
            if (peaks.positions.empty()) {
                r.delta_l = std::numeric_limits<double>::infinity();
                r.unmatched = truth.size();
            } else {
                const auto b = location_bias(peaks.positions, truth);
                r.delta_l = b.mean;
                r.unmatched = b.unmatched;
            }
        }
        s.reports.push_back(r);
    }
    if (s.reports.empty()) return s;
    std::vector<double> times;
    double renyi_sum = 0, bias_sum = 0;
    std::size_t renyi_n = 0;
    for (const auto& r : s.reports) {
        times.push_back(r.wall_time);
        if (std::isfinite(r.renyi)) {
            renyi_sum += r.renyi;
            ++renyi_n;
        }
        bias_sum += r.delta_l;
    }
    const double n = static_cast<double>(times.size());
    s.mean_time = std::accumulate(times.begin(), times.end(), 0.0) / n;
    std::sort(times.begin(), times.end());
    s.median_time = times.size() % 2 ? times[times.size() / 2]
                                     : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    double var = 0;
    for (double t : times) var += (t - s.mean_time) * (t - s.mean_time);
    s.cv_time = s.mean_time > 0 ? std::sqrt(var / n) / s.mean_time : 0;
    s.mean_renyi = renyi_n ? renyi_sum / static_cast<double>(renyi_n) : std::numeric_limits<double>::quiet_NaN();
    s.mean_delta_l = bias_sum / n;
    return s;
}

} // namespace bfl
