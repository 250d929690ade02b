#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fbs_audit/csv.hpp"
#include "fbs_audit/errors.hpp"
#include "fbs_audit/rng.hpp"

namespace fbs {

// One student instance. Feature names live on Dataset::schema; every record
// stores its encoded values in schema order, so all records of a dataset share
// the same feature set and ordering by construction.
struct StudentRecord {
    int id = 0;                    // position in the source file
    std::vector<double> features;  // encoded, schema order, excludes G3
    int group = 0;                 // sensitive attribute: 0=female, 1=male
    int label = 0;                 // 1 = fail, 0 = pass
};

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

struct Dataset {
    std::string name;  // "math" or "por"
    std::vector<std::string> schema;
    std::vector<StudentRecord> records;
    Split split;

    int size() const { return static_cast<int>(records.size()); }
    int feature_index(std::string_view feature) const {
        for (std::size_t i = 0; i < schema.size(); ++i)
            if (schema[i] == feature) return static_cast<int>(i);
        throw DomainError("unknown feature: " + std::string(feature));
    }
};

namespace student_schema {

struct Column {
    const char* name;
    // Empty domain means numeric (strict integer parse). Non-empty lists the
    // category strings sorted lexicographically; a value's code is its index.
    std::vector<const char*> domain;
};

// The 33 raw columns of the UCI student performance files, in file order.
inline const std::vector<Column>& columns() {
    static const std::vector<Column> cols = {
        {"school", {"GP", "MS"}},
        {"sex", {"F", "M"}},
        {"age", {}},
        {"address", {"R", "U"}},
        {"famsize", {"GT3", "LE3"}},
        {"Pstatus", {"A", "T"}},
        {"Medu", {}},
        {"Fedu", {}},
        {"Mjob", {"at_home", "health", "other", "services", "teacher"}},
        {"Fjob", {"at_home", "health", "other", "services", "teacher"}},
        {"reason", {"course", "home", "other", "reputation"}},
        {"guardian", {"father", "mother", "other"}},
        {"traveltime", {}},
        {"studytime", {}},
        {"failures", {}},
        {"schoolsup", {"no", "yes"}},
        {"famsup", {"no", "yes"}},
        {"paid", {"no", "yes"}},
        {"activities", {"no", "yes"}},
        {"nursery", {"no", "yes"}},
        {"higher", {"no", "yes"}},
        {"internet", {"no", "yes"}},
        {"romantic", {"no", "yes"}},
        {"famrel", {}},
        {"freetime", {}},
        {"goout", {}},
        {"Dalc", {}},
        {"Walc", {}},
        {"health", {}},
        {"absences", {}},
        {"G1", {}},
        {"G2", {}},
        {"G3", {}},
    };
    return cols;
}

constexpr int kColumnCount = 33;
constexpr int kPassThreshold = 10;  // G3 >= 10 counts as pass

} // namespace student_schema

namespace detail {

inline bool parse_int_strict(const std::string& s, long& out) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    long v = 0;
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
    }
    out = (s[0] == '-') ? -v : v;
    return true;
}

} // namespace detail

// Parse a UCI student CSV into encoded records. Categorical columns become
// integer codes in lexicographic domain order ('F'->0/'M'->1, no->0/yes->1),
// the label is 1 iff G3 < 10, and G3 itself is dropped from the features.
inline Dataset load_csv(const std::filesystem::path& path, const std::string& name) {
    const CsvTable table = read_csv(path, ';');
    const auto& cols = student_schema::columns();

    if (table.header.size() != cols.size())
        throw CsvError("expected " + std::to_string(cols.size()) + " columns, got " +
                       std::to_string(table.header.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (table.header[c] != cols[c].name)
            throw CsvError("unexpected header column '" + table.header[c] + "', expected '" +
                           std::string(cols[c].name) + "'");
    }

    Dataset d;
    d.name = name;
    for (const auto& col : cols)
        if (std::string_view(col.name) != "G3") d.schema.push_back(col.name);

    const int sex_col = 1;
    const int g3_col = student_schema::kColumnCount - 1;

    d.records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const long row = static_cast<long>(r) + 1;
        const auto& fields = table.rows[r];
        if (fields.size() != cols.size())
            throw CsvError("wrong column count: expected " + std::to_string(cols.size()) +
                               ", got " + std::to_string(fields.size()),
                           row);
        StudentRecord rec;
        rec.id = static_cast<int>(r);
        rec.features.reserve(d.schema.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto& col = cols[c];
            double encoded = 0.0;
            if (col.domain.empty()) {
                long v = 0;
                if (!detail::parse_int_strict(fields[c], v)) {
                    const bool grade = std::string_view(col.name).substr(0, 1) == "G" &&
                                       std::string_view(col.name).size() == 2;
                    throw CsvError(std::string(grade ? "non-integer grade" : "non-integer value") +
                                       " '" + fields[c] + "' in column " + col.name,
                                   row);
                }
                encoded = static_cast<double>(v);
            } else {
                auto it = std::find_if(col.domain.begin(), col.domain.end(),
                                       [&](const char* v) { return fields[c] == v; });
                if (it == col.domain.end())
                    throw CsvError("unknown categorical value '" + fields[c] + "' in column " +
                                       col.name,
                                   row);
                encoded = static_cast<double>(it - col.domain.begin());
            }
            if (static_cast<int>(c) == sex_col) rec.group = static_cast<int>(encoded);
            if (static_cast<int>(c) == g3_col) {
                rec.label = encoded < student_schema::kPassThreshold ? 1 : 0;
            } else {
                rec.features.push_back(encoded);
            }
        }
        d.records.push_back(std::move(rec));
    }
    return d;
}

// Stratified train/test partition. Per-class test counts start at
// round(class_count * fraction) and are reconciled so the total equals
// round(N * fraction); class membership is drawn by a seeded shuffle, and the
// returned index lists are sorted ascending.
inline Split stratified_split(const Dataset& d, std::uint64_t seed, double test_fraction = 0.2) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw DomainError("test_fraction must be in (0, 1)");

    std::array<std::vector<int>, 2> by_class;
    for (const auto& rec : d.records) by_class[static_cast<std::size_t>(rec.label)].push_back(rec.id);
    for (int cls = 0; cls < 2; ++cls) {
        if (by_class[static_cast<std::size_t>(cls)].size() < 2)
            throw DomainError("stratification error: label class " + std::to_string(cls) +
                              " has fewer than 2 members");
    }

    const auto target = static_cast<long>(std::llround(d.size() * test_fraction));
    std::array<long, 2> take{};
    std::array<double, 2> exact{};
    for (int cls = 0; cls < 2; ++cls) {
        exact[static_cast<std::size_t>(cls)] =
            static_cast<double>(by_class[static_cast<std::size_t>(cls)].size()) * test_fraction;
        take[static_cast<std::size_t>(cls)] = std::llround(exact[static_cast<std::size_t>(cls)]);
    }
    // Reconcile the per-class rounding to the global test size: move single
    // slots toward the class whose allocation is farthest from exact, never
    // past a class's population.
    const std::array<long, 2> limit{static_cast<long>(by_class[0].size()),
                                    static_cast<long>(by_class[1].size())};
    long total = take[0] + take[1];
    while (total != target) {
        const double under0 = exact[0] - static_cast<double>(take[0]);
        const double under1 = exact[1] - static_cast<double>(take[1]);
        if (total < target) {
            int cls = (under0 >= under1) ? 0 : 1;
            if (take[static_cast<std::size_t>(cls)] >= limit[static_cast<std::size_t>(cls)])
                cls = 1 - cls;
            ++take[static_cast<std::size_t>(cls)];
            ++total;
        } else {
            int cls = (under0 <= under1) ? 0 : 1;
            if (take[static_cast<std::size_t>(cls)] <= 0) cls = 1 - cls;
            --take[static_cast<std::size_t>(cls)];
            --total;
        }
    }

    Split s;
    for (int cls = 0; cls < 2; ++cls) {
        auto ids = by_class[static_cast<std::size_t>(cls)];
        auto rng = SplitMix64::substream(seed, static_cast<std::uint64_t>(cls));
        shuffle(ids, rng);
        const long t = take[static_cast<std::size_t>(cls)];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            (static_cast<long>(i) < t ? s.test : s.train).push_back(ids[i]);
        }
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

struct FeatureStats {
    std::string name;
    double mean = 0, stddev = 0, min = 0, max = 0;
    double corr_label = 0;  // Pearson vs the failure label
    double corr_group = 0;  // Pearson vs the sensitive attribute
    double mean_group0 = 0, mean_group1 = 0;
    bool zero_variance = false;
};

struct DatasetStats {
    int train_count = 0;
    double pass_rate_overall = 0;
    double pass_rate_group0 = 0;
    double pass_rate_group1 = 0;
    std::vector<FeatureStats> features;  // schema order
    std::vector<int> top_features;       // indices into `features`, by |corr_label|
    std::string text;                    // rendered block for the Explanation prompt
};

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;  // zero variance reports as 0
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace detail

// Training-split statistics plus the rendered text block consumed by the
// Explanation agent. The text is a pure function of the numeric fields and is
// aggregate-only: it never mentions individual record ids.
inline DatasetStats compute_stats(const Dataset& d, const std::vector<int>& train_idx) {
    if (train_idx.empty()) throw DomainError("compute_stats: empty training split");

    DatasetStats st;
    st.train_count = static_cast<int>(train_idx.size());

    std::vector<double> labels, groups;
    labels.reserve(train_idx.size());
    groups.reserve(train_idx.size());
    long pass = 0;
    std::array<long, 2> group_n{}, group_pass{};
    for (int id : train_idx) {
        const auto& rec = d.records[static_cast<std::size_t>(id)];
        labels.push_back(rec.label);
        groups.push_back(rec.group);
        pass += rec.label == 0;
        ++group_n[static_cast<std::size_t>(rec.group)];
        group_pass[static_cast<std::size_t>(rec.group)] += rec.label == 0;
    }
    st.pass_rate_overall = static_cast<double>(pass) / static_cast<double>(train_idx.size());
    st.pass_rate_group0 = group_n[0] ? static_cast<double>(group_pass[0]) / static_cast<double>(group_n[0]) : 0.0;
    st.pass_rate_group1 = group_n[1] ? static_cast<double>(group_pass[1]) / static_cast<double>(group_n[1]) : 0.0;

    std::vector<double> col(train_idx.size());
    for (std::size_t f = 0; f < d.schema.size(); ++f) {
        FeatureStats fs;
        fs.name = d.schema[f];
        double mn = 0, mx = 0, sum = 0;
        std::array<double, 2> gsum{};
        for (std::size_t i = 0; i < train_idx.size(); ++i) {
            const auto& rec = d.records[static_cast<std::size_t>(train_idx[i])];
            const double v = rec.features[f];
            col[i] = v;
            sum += v;
            gsum[static_cast<std::size_t>(rec.group)] += v;
            if (i == 0 || v < mn) mn = v;
            if (i == 0 || v > mx) mx = v;
        }
        fs.mean = sum / static_cast<double>(train_idx.size());
        double ss = 0;
        for (double v : col) ss += (v - fs.mean) * (v - fs.mean);
        fs.stddev = std::sqrt(ss / static_cast<double>(train_idx.size()));
        fs.min = mn;
        fs.max = mx;
        fs.zero_variance = ss <= 0.0;
        fs.corr_label = detail::pearson(col, labels);
        fs.corr_group = detail::pearson(col, groups);
        fs.mean_group0 = group_n[0] ? gsum[0] / static_cast<double>(group_n[0]) : 0.0;
        fs.mean_group1 = group_n[1] ? gsum[1] / static_cast<double>(group_n[1]) : 0.0;
        st.features.push_back(std::move(fs));
    }

    std::vector<int> order(st.features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double ca = std::fabs(st.features[static_cast<std::size_t>(a)].corr_label);
        const double cb = std::fabs(st.features[static_cast<std::size_t>(b)].corr_label);
        if (ca != cb) return ca > cb;
        return a < b;
    });
    order.resize(std::min<std::size_t>(10, order.size()));
    st.top_features = order;

    std::string t;
    t += "Training split: " + std::to_string(st.train_count) + " records, " +
         std::to_string(d.schema.size()) + " features.\n";
    t += "Overall pass rate: " + detail::fmt3(st.pass_rate_overall) + " (fail rate " +
         detail::fmt3(1.0 - st.pass_rate_overall) + ").\n";
    t += "Pass rate by sex: sex=0 (female) " + detail::fmt3(st.pass_rate_group0) +
         "; sex=1 (male) " + detail::fmt3(st.pass_rate_group1) + ".\n";
    t += "Top features by |correlation| with the failure label:\n";
    for (std::size_t k = 0; k < st.top_features.size(); ++k) {
        const auto& fs = st.features[static_cast<std::size_t>(st.top_features[k])];
        t += "  " + std::to_string(k + 1) + ". " + fs.name + ": corr_label=" +
             detail::fmt3(fs.corr_label) + ", mean[sex=0]=" + detail::fmt3(fs.mean_group0) +
             ", mean[sex=1]=" + detail::fmt3(fs.mean_group1) + "\n";
    }
    std::string flagged;
    for (const auto& fs : st.features) {
        if (fs.zero_variance) flagged += (flagged.empty() ? "" : ", ") + fs.name;
    }
    if (!flagged.empty())
        t += "Zero-variance features (correlation reported as 0): " + flagged + ".\n";
    st.text = std::move(t);
    return st;
}

namespace detail {

// Shortest decimal form that still distinguishes integral values ("2", "0.5").
inline std::string fmt_value(double v) {
    if (v == static_cast<long long>(v) && std::fabs(v) < 1e15) {
        return std::to_string(static_cast<long long>(v));
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace detail

// Canonical JSON-lines dump: one record per line, fixed key order, used for
// cache-key hashing and as the exchange format for external tooling.
inline std::string to_jsonl(const Dataset& d) {
    std::string out;
    for (const auto& rec : d.records) {
        out += "{\"id\":" + std::to_string(rec.id) + ",\"group\":" + std::to_string(rec.group) +
               ",\"label\":" + std::to_string(rec.label) + ",\"features\":{";
        for (std::size_t f = 0; f < d.schema.size(); ++f) {
            if (f) out += ",";
            out += "\"" + d.schema[f] + "\":" + detail::fmt_value(rec.features[f]);
        }
        out += "}}\n";
    }
    return out;
}

} // namespace fbs
