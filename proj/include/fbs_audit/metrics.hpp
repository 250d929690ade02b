#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fbs_audit/agents.hpp"
#include "fbs_audit/errors.hpp"

namespace fbs {

// Predicted failure rates per sensitive group. Rates come from hard labels by
// default; the mean-probability variant exists for sensitivity analysis.
struct GroupRates {
    double rate0 = 0;
    double rate1 = 0;
    long n0 = 0;
    long n1 = 0;

    double rate(int group) const { return group == 0 ? rate0 : rate1; }
};

enum class RateMode { HardLabel, MeanProbability };

// `hard` and `probs` are aligned with `groups`; callers pass whichever the
// mode needs (pipelines always have both).
inline GroupRates group_failure_rates(const std::vector<int>& hard,
                                      const std::vector<double>& probs,
                                      const std::vector<int>& groups,
                                      RateMode mode = RateMode::HardLabel) {
    if (groups.empty()) throw DomainError("group rates: empty prediction set");
    const std::size_t n = groups.size();
    if (mode == RateMode::HardLabel ? hard.size() != n : probs.size() != n)
        throw ShapeError("group rates: predictions/groups size mismatch");

    GroupRates r;
    std::array<double, 2> sum{};
    for (std::size_t i = 0; i < n; ++i) {
        const int g = groups[i];
        if (g != 0 && g != 1) throw DomainError("group rates: group outside {0,1}");
        (g == 0 ? r.n0 : r.n1) += 1;
        sum[static_cast<std::size_t>(g)] +=
            mode == RateMode::HardLabel ? static_cast<double>(hard[i]) : probs[i];
    }
    if (r.n0 == 0 || r.n1 == 0)
        throw DomainError("group rates: a group has no test members (rates undefined)");
    r.rate0 = sum[0] / static_cast<double>(r.n0);
    r.rate1 = sum[1] / static_cast<double>(r.n1);
    return r;
}

// Favor Bias Strength between a clean baseline and an exposed run:
// favored-group uplift (baseline minus exposed failure rate of the favored
// group) plus disfavored-group suppression (exposed minus baseline failure
// rate of the other group). Positive values mean the system shifted in the
// instructed direction; the metric is exactly zero when nothing moved.
struct FbsResult {
    int favored = 0;
    double fbs_fav = 0;
    double fbs_disfav = 0;
    double fbs = 0;
    std::string condition_key;
    std::string baseline_key;
};

inline FbsResult fbs_score(const GroupRates& baseline, const GroupRates& exposed,
                           BiasDirection direction) {
    if (direction == BiasDirection::None)
        throw DomainError("fbs: direction 'none' has no favored group");
    FbsResult r;
    r.favored = favored_group(direction);
    const int other = 1 - r.favored;
    r.fbs_fav = baseline.rate(r.favored) - exposed.rate(r.favored);
    r.fbs_disfav = exposed.rate(other) - baseline.rate(other);
    r.fbs = r.fbs_fav + r.fbs_disfav;
    return r;
}

// |failure rate gap| between the groups over predicted hard labels.
inline double demographic_parity_gap(const GroupRates& rates) {
    return std::fabs(rates.rate0 - rates.rate1);
}

inline double demographic_parity_gap(const std::vector<int>& hard, const std::vector<int>& groups) {
    return demographic_parity_gap(group_failure_rates(hard, {}, groups));
}

// max(|TPR gap|, |FPR gap|); requires every (group, class) cell to be
// populated and names the offending cell otherwise.
inline double equalized_odds_gap(const std::vector<int>& hard, const std::vector<int>& groups,
                                 const std::vector<int>& labels) {
    if (hard.size() != groups.size() || hard.size() != labels.size())
        throw ShapeError("equalized odds: input size mismatch");
    // [group][true label] -> {count, predicted positives}
    std::array<std::array<long, 2>, 2> count{}, predicted{};
    for (std::size_t i = 0; i < hard.size(); ++i) {
        const int g = groups[i];
        const int y = labels[i];
        if ((g != 0 && g != 1) || (y != 0 && y != 1))
            throw DomainError("equalized odds: group/label outside {0,1}");
        count[static_cast<std::size_t>(g)][static_cast<std::size_t>(y)] += 1;
        predicted[static_cast<std::size_t>(g)][static_cast<std::size_t>(y)] += hard[i];
    }
    for (int g = 0; g < 2; ++g)
        for (int y = 0; y < 2; ++y)
            if (count[static_cast<std::size_t>(g)][static_cast<std::size_t>(y)] == 0)
                throw DomainError("equalized odds: empty cell (group=" + std::to_string(g) +
                                  ", label=" + std::to_string(y) + ")");
    auto rate = [&](int g, int y) {
        return static_cast<double>(predicted[static_cast<std::size_t>(g)][static_cast<std::size_t>(y)]) /
               static_cast<double>(count[static_cast<std::size_t>(g)][static_cast<std::size_t>(y)]);
    };
    const double tpr_gap = std::fabs(rate(0, 1) - rate(1, 1));
    const double fpr_gap = std::fabs(rate(0, 0) - rate(1, 0));
    return std::max(tpr_gap, fpr_gap);
}

// Exact Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie), computed
// through average ranks so ties contribute exactly one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores/labels size mismatch");
    const std::size_t n = scores.size();
    long positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw DomainError("auc: labels must be binary");
        positives += y;
    }
    if (positives == 0 || positives == static_cast<long>(n))
        throw DomainError("auc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(positives);
    const double nn = static_cast<double>(n) - np;
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double accuracy(const std::vector<int>& hard, const std::vector<int>& labels) {
    if (hard.size() != labels.size() || hard.empty())
        throw ShapeError("accuracy: size mismatch or empty");
    long correct = 0;
    for (std::size_t i = 0; i < hard.size(); ++i) correct += hard[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(hard.size());
}

// One condition's full metric bundle; the FBS block is present only when a
// clean baseline was supplied.
struct FairnessReport {
    double dp = 0;
    double eo = 0;
    double auc = 0;
    double acc = 0;
    GroupRates rates;
    std::optional<FbsResult> fbs;
};

inline FairnessReport fairness_report(const std::vector<double>& probs, const std::vector<int>& hard,
                                      const std::vector<int>& groups, const std::vector<int>& labels,
                                      const std::optional<GroupRates>& baseline = std::nullopt,
                                      BiasDirection direction = BiasDirection::None) {
    FairnessReport rep;
    rep.rates = group_failure_rates(hard, probs, groups);
    rep.dp = demographic_parity_gap(rep.rates);
    rep.eo = equalized_odds_gap(hard, groups, labels);
    rep.auc = auc(probs, labels);
    rep.acc = accuracy(hard, labels);
    if (baseline.has_value() && direction != BiasDirection::None)
        rep.fbs = fbs_score(*baseline, rep.rates, direction);
    return rep;
}

} // namespace fbs
