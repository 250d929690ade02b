#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fbs_audit/errors.hpp"
#include "fbs_audit/rng.hpp"

namespace fbs {

// Deterministic generator for UCI-student-schema CSV fixtures. The project
// ships these so every pipeline, metric and report path can run offline; the
// real UCI files are drop-in replacements (same 33 columns, same domains).
//
// Row counts and the direction of the sex/outcome gap follow the published
// dataset cards: math n=395 with a higher female pass rate, por n=649 with a
// higher overall pass rate and a higher male pass rate.
struct SyntheticSpec {
    std::string name;        // "math" or "por"
    int rows = 395;
    std::uint64_t seed = 0x5eedu;
    double female_share = 0.527;
    double base_shift = 0.0;        // added to the latent ability of everyone
    double female_shift = 0.25;     // added to the latent ability of sex=0
    double outcome_noise = 2.35;    // grade points of unpredictable G3 noise

    static SyntheticSpec math() {
        SyntheticSpec s;
        s.name = "math";
        s.rows = 395;
        s.seed = 0xb084;
        s.female_share = 0.527;
        s.base_shift = 0.10;
        s.female_shift = 0.28;
        return s;
    }
    static SyntheticSpec por() {
        SyntheticSpec s;
        s.name = "por";
        s.rows = 649;
        s.seed = 0x706f72u;  // "por"
        s.female_share = 0.590;
        s.base_shift = 0.95;
        s.female_shift = -0.22;  // negative: males pass more often here
        return s;
    }
};

namespace detail {

// Approximately standard normal: Irwin-Hall(4), centered and rescaled.
inline double approx_normal(SplitMix64& rng) {
    const double s = rng.unit() + rng.unit() + rng.unit() + rng.unit();
    return (s - 2.0) * 1.7320508075688772;
}

inline int clamp_round(double v, int lo, int hi) {
    return std::clamp(static_cast<int>(std::lround(v)), lo, hi);
}

// Weighted categorical pick; weights need not sum to 1.
inline int pick(SplitMix64& rng, const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double u = rng.unit() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        u -= weights[i];
        if (u < 0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
}

} // namespace detail

// Render one synthetic dataset as a complete CSV file body (header included).
// Strings are double-quoted, numerics bare, fields semicolon-separated.
inline std::string synthetic_csv(const SyntheticSpec& spec) {
    SplitMix64 rng(spec.seed);

    static const char* header =
        "school;sex;age;address;famsize;Pstatus;Medu;Fedu;Mjob;Fjob;reason;guardian;traveltime;"
        "studytime;failures;schoolsup;famsup;paid;activities;nursery;higher;internet;romantic;"
        "famrel;freetime;goout;Dalc;Walc;health;absences;G1;G2;G3";

    static const char* mjob[] = {"at_home", "health", "other", "services", "teacher"};
    static const char* reason[] = {"course", "home", "other", "reputation"};
    static const char* guardian[] = {"father", "mother", "other"};

    std::string out = header;
    out += "\n";

    auto yn = [](int v) { return v ? "\"yes\"" : "\"no\""; };

    for (int r = 0; r < spec.rows; ++r) {
        const bool female = rng.unit() < spec.female_share;
        double ability = detail::approx_normal(rng) + spec.base_shift +
                         (female ? spec.female_shift : 0.0);

        const int school = rng.unit() < 0.88 ? 0 : 1;  // GP / MS
        const int age = detail::clamp_round(16.7 + detail::approx_normal(rng) * 1.2 -
                                                ability * 0.3,
                                            15, 22);
        const int address = rng.unit() < 0.78 ? 1 : 0;  // U / R
        const int famsize = rng.unit() < 0.71 ? 0 : 1;  // GT3 / LE3
        const int pstatus = rng.unit() < 0.10 ? 0 : 1;  // A / T

        const int medu = detail::clamp_round(2.6 + 0.55 * ability + detail::approx_normal(rng), 0, 4);
        const int fedu = detail::clamp_round(
            2.4 + 0.35 * ability + 0.45 * (medu - 2.5) + detail::approx_normal(rng) * 0.9, 0, 4);
        const int mjob_i = detail::pick(rng, {14, 9, 36, 26, 15});
        const int fjob_i = detail::pick(rng, {5, 5, 55, 28, 7});
        const int reason_i = detail::pick(rng, {37, 27, 9, 27});
        const int guardian_i = detail::pick(rng, {23, 69, 8});

        const int traveltime = detail::clamp_round(1.4 + detail::approx_normal(rng) * 0.7, 1, 4);
        const int studytime =
            detail::clamp_round(1.9 + 0.45 * ability + detail::approx_normal(rng) * 0.8, 1, 4);
        ability += 0.22 * (studytime - 2);

        const int failures = detail::clamp_round(
            (ability < -0.9 ? 1.4 : 0.12) - 0.5 * ability + detail::approx_normal(rng) * 0.55, 0, 3);
        ability -= 0.55 * failures;

        const int schoolsup = rng.unit() < (ability < -0.5 ? 0.25 : 0.08) ? 1 : 0;
        const int famsup = rng.unit() < 0.61 ? 1 : 0;
        const int paid = rng.unit() < (spec.name == "math" ? 0.46 : 0.07) ? 1 : 0;
        const int activities = rng.unit() < 0.51 ? 1 : 0;
        const int nursery = rng.unit() < 0.79 ? 1 : 0;
        const int higher = rng.unit() < (ability > -1.0 ? 0.97 : 0.72) ? 1 : 0;
        const int internet = rng.unit() < 0.83 ? 1 : 0;
        const int romantic = rng.unit() < 0.33 ? 1 : 0;

        const int famrel = detail::clamp_round(3.9 + detail::approx_normal(rng) * 0.9, 1, 5);
        const int freetime = detail::clamp_round(3.2 + detail::approx_normal(rng) * 1.0, 1, 5);
        const int goout = detail::clamp_round(3.1 - 0.2 * ability + detail::approx_normal(rng), 1, 5);
        const int dalc = detail::clamp_round(1.2 + 0.4 * (goout - 3) + rng.unit() * 1.3, 1, 5);
        const int walc = detail::clamp_round(dalc + 0.8 + detail::approx_normal(rng) * 0.9, 1, 5);
        const int health = detail::clamp_round(3.5 + detail::approx_normal(rng) * 1.2, 1, 5);
        const int absences = detail::clamp_round(
            std::fabs(detail::approx_normal(rng)) * 5.2 - 0.8 * ability, 0, 40);
        ability -= 0.02 * absences;

        const int g1 = detail::clamp_round(10.9 + 2.45 * ability + detail::approx_normal(rng) * 1.5,
                                           3, 19);
        const int g2 = detail::clamp_round(
            0.62 * g1 + 0.38 * (10.9 + 2.45 * ability) + detail::approx_normal(rng) * 1.35, 0, 20);
        const int g3 = detail::clamp_round(0.28 * g1 + 0.50 * g2 + 0.22 * (10.6 + 2.0 * ability) +
                                               detail::approx_normal(rng) * spec.outcome_noise,
                                           0, 20);

        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "\"%s\";\"%s\";%d;\"%s\";\"%s\";\"%s\";%d;%d;\"%s\";\"%s\";\"%s\";\"%s\";"
                      "%d;%d;%d;%s;%s;%s;%s;%s;%s;%s;%s;%d;%d;%d;%d;%d;%d;%d;\"%d\";\"%d\";%d\n",
                      school ? "MS" : "GP", female ? "F" : "M", age, address ? "U" : "R",
                      famsize ? "LE3" : "GT3", pstatus ? "T" : "A", medu, fedu, mjob[mjob_i],
                      mjob[fjob_i], reason[reason_i], guardian[guardian_i], traveltime, studytime,
                      failures, yn(schoolsup), yn(famsup), yn(paid), yn(activities), yn(nursery),
                      yn(higher), yn(internet), yn(romantic), famrel, freetime, goout, dalc, walc,
                      health, absences, g1, g2, g3);
        out += buf;
    }
    return out;
}

inline void write_fixture(const SyntheticSpec& spec, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write fixture: " + path.string());
    f << synthetic_csv(spec);
}

// The two standard fixtures: student-mat.csv and student-por.csv.
inline void write_fixtures(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_fixture(SyntheticSpec::math(), dir / "student-mat.csv");
    write_fixture(SyntheticSpec::por(), dir / "student-por.csv");
}

} // namespace fbs
