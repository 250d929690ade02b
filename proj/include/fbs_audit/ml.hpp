#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbs_audit/errors.hpp"
#include "fbs_audit/hash.hpp"
#include "fbs_audit/rng.hpp"

namespace fbs {

// Per-feature standardization fit on the training split. A zero-spread
// feature keeps std 1 so constant columns pass through shifted, not divided
// away.
struct Scaler {
    std::vector<double> mean;
    std::vector<double> stddev;

    static Scaler fit(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw FitError("scaler: no rows");
        const std::size_t d = rows[0].size();
        Scaler s;
        s.mean.assign(d, 0.0);
        s.stddev.assign(d, 0.0);
        for (const auto& r : rows)
            for (std::size_t f = 0; f < d; ++f) s.mean[f] += r[f];
        for (std::size_t f = 0; f < d; ++f) s.mean[f] /= static_cast<double>(rows.size());
        for (const auto& r : rows)
            for (std::size_t f = 0; f < d; ++f)
                s.stddev[f] += (r[f] - s.mean[f]) * (r[f] - s.mean[f]);
        for (std::size_t f = 0; f < d; ++f) {
            s.stddev[f] = std::sqrt(s.stddev[f] / static_cast<double>(rows.size()));
            if (s.stddev[f] <= 0.0) s.stddev[f] = 1.0;
        }
        return s;
    }

    std::vector<double> transform(const std::vector<double>& x) const {
        if (x.size() != mean.size()) throw ShapeError("scaler: feature dimension mismatch");
        std::vector<double> out(x.size());
        for (std::size_t f = 0; f < x.size(); ++f) out[f] = (x[f] - mean[f]) / stddev[f];
        return out;
    }

    std::vector<std::vector<double>> transform_all(const std::vector<std::vector<double>>& rows) const {
        std::vector<std::vector<double>> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(transform(r));
        return out;
    }
};

struct GbtParams {
    int stages = 100;
    int max_depth = 4;
    double learning_rate = 0.1;
    double subsample = 0.8;
    int min_samples_split = 2;
};

// Flat tree storage; feature < 0 marks a leaf.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

// Optional post-hoc probability calibration applied on the raw score. Off by
// default; the reference setup uses none.
struct Calibration {
    bool enabled = false;
    double scale = 1.0;
    double offset = 0.0;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct GbtModel {
    double initial = 0.0;  // log-odds of the positive (failure) rate
    GbtParams params;
    std::uint64_t seed = 0;
    Calibration calibration;
    std::vector<RegressionTree> trees;
    std::vector<double> stage_train_loss;  // training log-loss after each stage
    std::size_t feature_count = 0;

    // logistic(initial + lr * sum of tree outputs), clamped to the open unit
    // interval. Inputs must already be scaled with the train-fit Scaler.
    double predict_proba(const std::vector<double>& scaled) const {
        if (scaled.size() != feature_count) throw ShapeError("predict: feature dimension mismatch");
        double z = initial;
        for (const auto& t : trees) z += params.learning_rate * t.predict(scaled);
        if (calibration.enabled) z = calibration.scale * z + calibration.offset;
        const double p = sigmoid(z);
        return std::clamp(p, 1e-12, 1.0 - 1e-12);
    }

    std::string to_json() const;
    static GbtModel from_json(const std::string& text);
    std::string hash() const { return content_hash(to_json()); }
};

// 1 iff p is strictly above the threshold; exactly 0.5 maps to pass.
inline int hard_label(double p, double threshold = 0.5) { return p > threshold ? 1 : 0; }

namespace gbt_detail {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// Exact greedy split minimizing squared error of residuals; thresholds are
// midpoints between consecutive distinct values. Ties on gain resolve to the
// lowest feature index, then the lowest threshold.
inline SplitChoice best_split(const std::vector<std::vector<double>>& X,
                              const std::vector<double>& residual,
                              const std::vector<int>& idx) {
    constexpr double kMinGain = 1e-12;
    const std::size_t n = idx.size();
    SplitChoice best;
    if (n < 2) return best;

    double total = 0.0;
    for (int i : idx) total += residual[static_cast<std::size_t>(i)];
    const double parent_score = total * total / static_cast<double>(n);

    const std::size_t d = X[0].size();
    std::vector<int> order(idx);
    for (std::size_t f = 0; f < d; ++f) {
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double va = X[static_cast<std::size_t>(a)][f];
            const double vb = X[static_cast<std::size_t>(b)][f];
            if (va != vb) return va < vb;
            return a < b;
        });
        double left_sum = 0.0;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            left_sum += residual[static_cast<std::size_t>(order[k])];
            const double v = X[static_cast<std::size_t>(order[k])][f];
            const double v_next = X[static_cast<std::size_t>(order[k + 1])][f];
            if (v == v_next) continue;
            const double nl = static_cast<double>(k + 1);
            const double nr = static_cast<double>(n - k - 1);
            const double right_sum = total - left_sum;
            const double gain =
                left_sum * left_sum / nl + right_sum * right_sum / nr - parent_score;
            // Candidates scan in ascending (feature, threshold) order and only a
            // strictly better gain replaces the incumbent, so equal gains resolve
            // to the lowest feature index, then the lowest threshold.
            if (gain > best.gain + kMinGain) {
                best.found = true;
                best.feature = static_cast<int>(f);
                best.threshold = v + 0.5 * (v_next - v);
                best.gain = gain;
            }
        }
    }
    return best;
}

struct BuildCtx {
    const std::vector<std::vector<double>>& X;
    const std::vector<double>& residual;
    const std::vector<double>& prob;  // current predicted probabilities
    const GbtParams& params;
};

// Grows one node (recursively); leaf values are the single Newton step for
// log-loss: sum(residual) / sum(p*(1-p)) over the in-bag rows of the leaf.
inline int build_node(BuildCtx& ctx, RegressionTree& tree, std::vector<int>&& idx, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    SplitChoice split;
    if (depth < ctx.params.max_depth &&
        static_cast<int>(idx.size()) >= ctx.params.min_samples_split) {
        split = best_split(ctx.X, ctx.residual, idx);
    }

    if (!split.found) {
        double num = 0.0, den = 0.0;
        for (int i : idx) {
            num += ctx.residual[static_cast<std::size_t>(i)];
            const double p = ctx.prob[static_cast<std::size_t>(i)];
            den += p * (1.0 - p);
        }
        tree.nodes[static_cast<std::size_t>(node_id)].value = num / (den + 1e-12);
        return node_id;
    }

    std::vector<int> left, right;
    left.reserve(idx.size());
    right.reserve(idx.size());
    for (int i : idx) {
        const double v = ctx.X[static_cast<std::size_t>(i)][static_cast<std::size_t>(split.feature)];
        (v <= split.threshold ? left : right).push_back(i);
    }
    idx.clear();
    idx.shrink_to_fit();

    const int l = build_node(ctx, tree, std::move(left), depth + 1);
    const int r = build_node(ctx, tree, std::move(right), depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return node_id;
}

inline double log_loss(const std::vector<int>& y, const std::vector<double>& prob) {
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = std::clamp(prob[i], 1e-15, 1.0 - 1e-15);
        loss -= y[i] ? std::log(p) : std::log(1.0 - p);
    }
    return loss / static_cast<double>(y.size());
}

} // namespace gbt_detail

// Binomial-deviance gradient boosting. Each stage fits a depth-limited
// regression tree to y - p residuals on a seeded row subsample (stage k draws
// from substream(seed, k), so results do not depend on evaluation order), and
// a stage whose root finds no usable split contributes nothing.
inline GbtModel fit_gbt(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                        const GbtParams& params = {}, std::uint64_t seed = 42) {
    const std::size_t n = X.size();
    if (n < 2) throw FitError("fit: need at least 2 records");
    if (y.size() != n) throw ShapeError("fit: labels/rows mismatch");
    long positives = 0;
    for (int v : y) positives += v;
    if (positives == 0 || positives == static_cast<long>(n))
        throw FitError("fit: single-class labels (initial log-odds infinite)");

    GbtModel model;
    model.params = params;
    model.seed = seed;
    model.feature_count = X[0].size();
    const double prior = static_cast<double>(positives) / static_cast<double>(n);
    model.initial = std::log(prior / (1.0 - prior));

    std::vector<double> score(n, model.initial);
    std::vector<double> prob(n), residual(n);
    const int in_bag =
        std::max(1, static_cast<int>(params.subsample * static_cast<double>(n)));

    for (int stage = 0; stage < params.stages; ++stage) {
        for (std::size_t i = 0; i < n; ++i) {
            prob[i] = sigmoid(score[i]);
            residual[i] = static_cast<double>(y[i]) - prob[i];
        }

        auto rng = SplitMix64::substream(seed, static_cast<std::uint64_t>(stage));
        std::vector<int> rows =
            params.subsample < 1.0
                ? sample_without_replacement(static_cast<int>(n), in_bag, rng)
                : [&] {
                      std::vector<int> all(n);
                      std::iota(all.begin(), all.end(), 0);
                      return all;
                  }();
        std::sort(rows.begin(), rows.end());

        RegressionTree tree;
        gbt_detail::BuildCtx ctx{X, residual, prob, params};
        gbt_detail::build_node(ctx, tree, std::move(rows), 0);

        if (tree.nodes.size() == 1) {
            // No usable split at the root: the stage contributes nothing
            // rather than nudging every prediction by one in-bag leaf value.
            tree.nodes[0].value = 0.0;
        }
        for (std::size_t i = 0; i < n; ++i)
            score[i] += params.learning_rate * tree.predict(X[i]);
        model.trees.push_back(std::move(tree));

        for (std::size_t i = 0; i < n; ++i) prob[i] = sigmoid(score[i]);
        model.stage_train_loss.push_back(gbt_detail::log_loss(y, prob));
    }
    return model;
}

inline std::string GbtModel::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "fbs-audit-gbt";
    j["version"] = 1;
    j["initial"] = initial;
    j["seed"] = seed;
    j["feature_count"] = feature_count;
    j["params"] = {{"stages", params.stages},
                   {"max_depth", params.max_depth},
                   {"learning_rate", params.learning_rate},
                   {"subsample", params.subsample},
                   {"min_samples_split", params.min_samples_split}};
    j["calibration"] = {{"enabled", calibration.enabled},
                        {"scale", calibration.scale},
                        {"offset", calibration.offset}};
    // Trees serialize as nested nodes.
    std::function<nlohmann::ordered_json(const RegressionTree&, int)> node_json =
        [&](const RegressionTree& t, int i) -> nlohmann::ordered_json {
        const auto& n = t.nodes[static_cast<std::size_t>(i)];
        if (n.feature < 0) return {{"leaf", n.value}};
        return {{"feature", n.feature},
                {"threshold", n.threshold},
                {"left", node_json(t, n.left)},
                {"right", node_json(t, n.right)}};
    };
    nlohmann::ordered_json trees_j = nlohmann::ordered_json::array();
    for (const auto& t : trees) trees_j.push_back(node_json(t, 0));
    j["trees"] = std::move(trees_j);
    j["stage_train_loss"] = stage_train_loss;
    return j.dump();
}

inline GbtModel GbtModel::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "fbs-audit-gbt")
        throw ParseError("model: unknown serialization format", text.substr(0, 64));
    GbtModel m;
    m.initial = j.at("initial").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.feature_count = j.at("feature_count").get<std::size_t>();
    const auto& p = j.at("params");
    m.params.stages = p.at("stages").get<int>();
    m.params.max_depth = p.at("max_depth").get<int>();
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.subsample = p.at("subsample").get<double>();
    m.params.min_samples_split = p.at("min_samples_split").get<int>();
    const auto& c = j.at("calibration");
    m.calibration.enabled = c.at("enabled").get<bool>();
    m.calibration.scale = c.at("scale").get<double>();
    m.calibration.offset = c.at("offset").get<double>();
    std::function<int(RegressionTree&, const nlohmann::json&)> read_node =
        [&](RegressionTree& t, const nlohmann::json& nj) -> int {
        const int id = static_cast<int>(t.nodes.size());
        t.nodes.emplace_back();
        if (nj.contains("leaf")) {
            t.nodes[static_cast<std::size_t>(id)].value = nj.at("leaf").get<double>();
        } else {
            const int l = read_node(t, nj.at("left"));
            const int r = read_node(t, nj.at("right"));
            auto& n = t.nodes[static_cast<std::size_t>(id)];
            n.feature = nj.at("feature").get<int>();
            n.threshold = nj.at("threshold").get<double>();
            n.left = l;
            n.right = r;
        }
        return id;
    };
    for (const auto& tj : j.at("trees")) {
        RegressionTree t;
        read_node(t, tj);
        m.trees.push_back(std::move(t));
    }
    m.stage_train_loss = j.at("stage_train_loss").get<std::vector<double>>();
    return m;
}

} // namespace fbs
