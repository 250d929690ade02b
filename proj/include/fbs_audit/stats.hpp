#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fbs_audit/errors.hpp"
#include "fbs_audit/metrics.hpp"
#include "fbs_audit/pipelines.hpp"
#include "fbs_audit/rng.hpp"

namespace fbs {

struct BootstrapEstimate {
    double point = 0;   // FBS on the full test set
    double mean = 0;    // mean over bootstrap iterations
    double stdev = 0;   // population standard deviation over iterations
    int iterations = 0;
    std::uint64_t seed = 0;
    long redraws = 0;  // resamples rejected for producing an empty group
};

struct BootstrapOptions {
    int iterations = 10000;
    std::uint64_t seed = 42;
    // Redraw budget relative to the iteration count; tiny toy sets where most
    // resamples lose a group need this raised explicitly.
    double max_redraw_rate = 0.01;
};

namespace stats_detail {

// Paired hard labels plus group, the only per-instance state a resample needs.
struct PairedRow {
    int clean_hard;
    int exposed_hard;
    int group;
};

inline FbsResult fbs_of_rows(const std::vector<PairedRow>& rows,
                             const std::vector<int>& pick, BiasDirection direction) {
    long n0 = 0, n1 = 0, c0 = 0, c1 = 0, e0 = 0, e1 = 0;
    for (int i : pick) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        if (r.group == 0) {
            ++n0;
            c0 += r.clean_hard;
            e0 += r.exposed_hard;
        } else {
            ++n1;
            c1 += r.clean_hard;
            e1 += r.exposed_hard;
        }
    }
    if (n0 == 0 || n1 == 0) throw DomainError("empty group");
    GroupRates clean{static_cast<double>(c0) / static_cast<double>(n0),
                     static_cast<double>(c1) / static_cast<double>(n1), n0, n1};
    GroupRates exposed{static_cast<double>(e0) / static_cast<double>(n0),
                       static_cast<double>(e1) / static_cast<double>(n1), n0, n1};
    return fbs_score(clean, exposed, direction);
}

} // namespace stats_detail

// Paired bootstrap over test instances: every iteration draws n instance
// indices with replacement, takes the clean and exposed hard labels at those
// indices jointly, and recomputes FBS, so the spread reflects the
// exposure-induced shift rather than unrelated test-set variation. Iteration b
// draws from substream(seed, b), which keeps estimates bitwise reproducible no
// matter how iterations are scheduled; a resample that loses a group is
// redrawn from the same substream and counted.
inline BootstrapEstimate paired_bootstrap_fbs(const std::vector<stats_detail::PairedRow>& rows,
                                              BiasDirection direction, BootstrapOptions opt = {}) {
    if (rows.empty()) throw PairingError("bootstrap: no paired instances");
    if (opt.iterations < 1) throw DomainError("bootstrap: iteration count must be >= 1");
    if (direction == BiasDirection::None)
        throw DomainError("bootstrap: direction 'none' has no favored group");

    const int n = static_cast<int>(rows.size());
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

    BootstrapEstimate est;
    est.iterations = opt.iterations;
    est.seed = opt.seed;
    est.point = stats_detail::fbs_of_rows(rows, all, direction).fbs;  // throws if a group is absent

    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(opt.iterations));
    std::vector<int> pick(static_cast<std::size_t>(n));
    constexpr long kRedrawCap = 1000000;
    for (int b = 0; b < opt.iterations; ++b) {
        auto rng = SplitMix64::substream(opt.seed, static_cast<std::uint64_t>(b));
        for (;;) {
            bool seen0 = false, seen1 = false;
            for (int i = 0; i < n; ++i) {
                const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                pick[static_cast<std::size_t>(i)] = idx;
                (rows[static_cast<std::size_t>(idx)].group == 0 ? seen0 : seen1) = true;
            }
            if (seen0 && seen1) break;
            if (++est.redraws > kRedrawCap)
                throw DomainError("bootstrap: degenerate grouping, redraw cap exhausted");
        }
        values.push_back(stats_detail::fbs_of_rows(rows, pick, direction).fbs);
    }

    double sum = 0;
    for (double v : values) sum += v;
    est.mean = sum / static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) ss += (v - est.mean) * (v - est.mean);
    est.stdev = std::sqrt(ss / static_cast<double>(values.size()));

    const double redraw_rate =
        static_cast<double>(est.redraws) / static_cast<double>(opt.iterations);
    if (redraw_rate > opt.max_redraw_rate)
        throw DomainError("bootstrap: redraw rate " + std::to_string(redraw_rate) +
                          " exceeds limit " + std::to_string(opt.max_redraw_rate) +
                          " (degenerate group sizes)");
    return est;
}

// Convenience overload pairing two prediction sets; they must index the same
// instances in the same order.
inline BootstrapEstimate paired_bootstrap_fbs(const PredictionSet& clean,
                                              const PredictionSet& exposed,
                                              const std::vector<int>& groups,
                                              BiasDirection direction, BootstrapOptions opt = {}) {
    if (clean.size() != exposed.size() || clean.instance_ids != exposed.instance_ids)
        throw PairingError("bootstrap: prediction sets are not paired (instance ids differ)");
    if (groups.size() != clean.size())
        throw PairingError("bootstrap: groups not aligned with prediction sets");
    std::vector<stats_detail::PairedRow> rows;
    rows.reserve(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i)
        rows.push_back({clean.hard[i], exposed.hard[i], groups[i]});
    return paired_bootstrap_fbs(rows, direction, opt);
}

} // namespace fbs
