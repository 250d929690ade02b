#include <doctest.h>

#include <cmath>

#include "fbs_audit/dataset.hpp"
#include "fbs_audit/ml.hpp"
#include "fbs_audit/pipelines.hpp"
#include "test_util.hpp"

using namespace fbs;

namespace {

// Linearly separable toy problem in two features plus a noise column.
void separable_toy(std::vector<std::vector<double>>& X, std::vector<int>& y) {
    SplitMix64 rng(99);
    for (int i = 0; i < 20; ++i) {
        const int label = i % 2;
        const double a = label ? 1.0 + rng.unit() : -1.0 - rng.unit();
        const double b = label ? 0.5 + rng.unit() : -0.5 - rng.unit();
        X.push_back({a, b, rng.unit()});
        y.push_back(label);
    }
}

} // namespace

TEST_CASE("scaler standardizes and passes constant features through shifted") {
    const std::vector<std::vector<double>> rows = {{1, 5, 7}, {3, 5, 9}, {5, 5, 11}};
    const Scaler s = Scaler::fit(rows);
    CHECK(s.mean[0] == doctest::Approx(3.0));
    CHECK(s.stddev[1] == 1.0);  // zero spread replaced by 1
    const auto t = s.transform({3, 5, 9});
    CHECK(t[0] == doctest::Approx(0.0));
    CHECK(t[1] == doctest::Approx(0.0));
    CHECK(t[2] == doctest::Approx(0.0));
    const auto t2 = s.transform({5, 6, 11});
    CHECK(t2[1] == doctest::Approx(1.0));  // shifted, not divided away
    CHECK_THROWS_AS(s.transform({1, 2}), ShapeError);
}

TEST_CASE("separable toy set reaches training accuracy 1.0") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    separable_toy(X, y);
    const GbtModel m = fit_gbt(X, y, {}, 42);
    long correct = 0;
    for (std::size_t i = 0; i < X.size(); ++i)
        correct += hard_label(m.predict_proba(X[i])) == y[i];
    CHECK(correct == 20);  // brute-force check of final hard labels
}

TEST_CASE("identical features with balanced labels predict 0.5 everywhere") {
    std::vector<std::vector<double>> X(20, std::vector<double>{1.0, 2.0});
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 2);
    const GbtModel m = fit_gbt(X, y, {}, 42);
    for (const auto& x : X) CHECK(std::fabs(m.predict_proba(x) - 0.5) <= 1e-9);
}

TEST_CASE("zero-stage model on balanced labels returns 0.5") {
    std::vector<std::vector<double>> X = {{0.0}, {1.0}, {2.0}, {3.0}};
    std::vector<int> y = {0, 1, 0, 1};
    GbtParams p;
    p.stages = 0;
    const GbtModel m = fit_gbt(X, y, p, 42);
    CHECK(m.predict_proba({5.0}) == doctest::Approx(0.5));
}

TEST_CASE("predicted probabilities stay inside the open unit interval") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    separable_toy(X, y);
    const GbtModel m = fit_gbt(X, y, {}, 42);
    SplitMix64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const double p = m.predict_proba({rng.unit() * 8 - 4, rng.unit() * 8 - 4, rng.unit()});
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("single-class labels refuse to fit") {
    std::vector<std::vector<double>> X = {{0.0}, {1.0}, {2.0}};
    CHECK_THROWS_AS(fit_gbt(X, {1, 1, 1}, {}, 42), FitError);
    CHECK_THROWS_AS(fit_gbt(X, {0, 0, 0}, {}, 42), FitError);
    CHECK_THROWS_AS(fit_gbt({{1.0}}, {1}, {}, 42), FitError);
}

TEST_CASE("feature dimension mismatch raises a shape error") {
    std::vector<std::vector<double>> X = {{0.0, 1.0}, {1.0, 0.0}, {0.5, 0.2}, {0.1, 0.9}};
    const GbtModel m = fit_gbt(X, {0, 1, 0, 1}, {}, 42);
    CHECK_THROWS_AS(m.predict_proba({1.0}), ShapeError);
    CHECK_THROWS_AS(m.predict_proba({1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("hard label threshold is strict: exactly 0.5 maps to pass") {
    CHECK(hard_label(0.51, 0.5) == 1);
    CHECK(hard_label(0.5, 0.5) == 0);
    CHECK(hard_label(0.0, 0.5) == 0);
    CHECK(hard_label(1.0, 0.5) == 1);
    CHECK(hard_label(0.3, 0.2) == 1);
}

TEST_CASE("fits are bitwise reproducible under a fixed seed") {
    Dataset math = load_csv(test_util::math_csv(), "math");
    math.split = stratified_split(math, 42, 0.2);
    const ModelBundle a = fit_reference_model(math, 42);
    const ModelBundle b = fit_reference_model(math, 42);
    CHECK(a.model.to_json() == b.model.to_json());
    CHECK(a.model.hash() == b.model.hash());

    const ModelBundle c = fit_reference_model(math, 43);
    CHECK(c.model.hash() != a.model.hash());
}

TEST_CASE("per-stage training log-loss is non-increasing on the math split") {
    Dataset math = load_csv(test_util::math_csv(), "math");
    math.split = stratified_split(math, 42, 0.2);
    const ModelBundle mb = fit_reference_model(math, 42);
    const auto& losses = mb.model.stage_train_loss;
    REQUIRE(losses.size() == 100);
    for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1] + 1e-12);
}

TEST_CASE("model serialization round-trips predictions exactly") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    separable_toy(X, y);
    const GbtModel m = fit_gbt(X, y, {}, 7);
    const GbtModel back = GbtModel::from_json(m.to_json());
    for (const auto& x : X) CHECK(back.predict_proba(x) == m.predict_proba(x));
    CHECK(back.to_json() == m.to_json());
    CHECK_THROWS_AS(GbtModel::from_json("{\"format\":\"something-else\"}"), ParseError);
}

TEST_CASE("model fit depends only on the training rows") {
    Dataset math = load_csv(test_util::math_csv(), "math");
    math.split = stratified_split(math, 42, 0.2);
    const std::string before = fit_reference_model(math, 42).model.hash();

    // Scrambling every held-out record must not move the model.
    Dataset mutated = math;
    for (int id : mutated.split.test)
        for (auto& v : mutated.records[static_cast<std::size_t>(id)].features) v += 1000.0;
    const std::string after = fit_reference_model(mutated, 42).model.hash();
    CHECK(before == after);
}

TEST_CASE("calibration hook is off by default and applies when enabled") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    separable_toy(X, y);
    GbtModel m = fit_gbt(X, y, {}, 7);
    CHECK_FALSE(m.calibration.enabled);
    const double base = m.predict_proba(X[0]);
    m.calibration = {true, 0.5, 0.0};  // temper the scores toward 0.5
    const double tempered = m.predict_proba(X[0]);
    CHECK(std::fabs(tempered - 0.5) < std::fabs(base - 0.5));
}
