#include <doctest.h>

#include <map>

#include "fbs_audit/pipelines.hpp"
#include "test_util.hpp"

using namespace fbs;
using test_util::Row;
using test_util::TempDir;

namespace {

// Toy dataset: sex alternates F/M; G1 controls the handcrafted ML model below.
Dataset toy_dataset(TempDir& tmp, const std::vector<std::pair<char, int>>& sex_g1) {
    std::vector<Row> rows;
    for (const auto& [sex, g1] : sex_g1) {
        Row r;
        r.sex = std::string(1, sex);
        r.g1 = g1;
        r.g3 = g1 >= 10 ? 13 : 6;
        rows.push_back(r);
    }
    test_util::write_file(tmp / "toy.csv", test_util::student_csv(rows));
    Dataset d = load_csv(tmp / "toy.csv", "math");
    for (int i = 0; i < d.size(); ++i) d.split.test.push_back(i);
    return d;
}

// One-split tree on raw G1: fail probability 0.953 below/at the threshold,
// 0.047 above (identity scaler keeps raw feature values).
ModelBundle scripted_ml(const Dataset& d, std::uint64_t seed, double g1_threshold = 10.5) {
    ModelBundle b;
    b.dataset_name = d.name;
    b.seed = seed;
    b.scaler.mean.assign(d.schema.size(), 0.0);
    b.scaler.stddev.assign(d.schema.size(), 1.0);
    b.model.initial = 0.0;
    b.model.feature_count = d.schema.size();
    b.model.params.learning_rate = 0.1;
    RegressionTree t;
    t.nodes.resize(3);
    t.nodes[0].feature = d.feature_index("G1");
    t.nodes[0].threshold = g1_threshold;
    t.nodes[0].left = 1;
    t.nodes[0].right = 2;
    t.nodes[1].value = 30.0;   // low G1 -> fail-side
    t.nodes[2].value = -30.0;  // high G1 -> pass-side
    b.model.trees.push_back(t);
    return b;
}

// Backend that misbehaves for the first `bad_calls` completions.
class FlakyBackend : public AgentBackend {
public:
    FlakyBackend(std::string bad_response, int bad_calls)
        : bad_(std::move(bad_response)), remaining_(bad_calls) {}
    std::string complete(const AgentConfig& config, const RenderedPrompt& p,
                         const BatchContext& ctx) override {
        if (remaining_-- > 0) return bad_;
        return inner_.complete(config, p, ctx);
    }

private:
    std::string bad_;
    int remaining_;
    MockBackend inner_;
};

class DeadBackend : public AgentBackend {
public:
    std::string complete(const AgentConfig&, const RenderedPrompt&, const BatchContext&) override {
        throw EndpointError("endpoint unreachable after 3 attempts");
    }
};

AgentConfig agent(AgentRole role, BiasDirection bias) {
    AgentConfig a;
    a.role = role;
    a.bias = bias;
    return a;
}

struct Probs {
    std::map<int, double> by_id;
    double operator()(int id) const { return by_id.at(id); }
};

} // namespace

TEST_CASE("E0 with zero deltas reproduces the base scorer output") {
    TempDir tmp("pipe_e0_zero");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}});
    Probs base{{{0, 0.62}, {1, 0.35}, {2, 0.51}, {3, 0.44}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};

    auto cfg = agent(AgentRole::Prediction, BiasDirection::ProFemale);
    cfg.mock.delta_favored = cfg.mock.delta_disfavored = 0.0;
    const PredictionSet ps = run_e0(ctx, cfg);
    REQUIRE(ps.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(ps.probs[i] == doctest::Approx(base(static_cast<int>(i))).epsilon(1e-9));
        CHECK(ps.provenance[i] == Provenance::Llm);
        CHECK(ps.hard[i] == hard_label(ps.probs[i]));
    }
    CHECK(ps.instance_ids == d.split.test);
    CHECK(ps.pipeline == PipelineId::E0);
}

TEST_CASE("E0 exposed: every in-band favored instance shifts down by delta") {
    TempDir tmp("pipe_e0_shift");
    // Six female instances, all in the band.
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'F', 12}, {'F', 12}, {'F', 5}, {'F', 5}, {'F', 5}});
    Probs base{{{0, 0.35}, {1, 0.45}, {2, 0.55}, {3, 0.65}, {4, 0.70}, {5, 0.30}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 4};

    const PredictionSet ps = run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::ProFemale));
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(ps.probs[i] == doctest::Approx(base(static_cast<int>(i)) - 0.2).epsilon(1e-9));
}

TEST_CASE("empty test split is refused") {
    TempDir tmp("pipe_empty");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}});
    d.split.test.clear();
    Probs base;
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};
    CHECK_THROWS_AS(run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::None)), DomainError);
}

TEST_CASE("E1 with only the explanation exposed leaves predictions at base") {
    TempDir tmp("pipe_e1_expl");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}});
    Probs base{{{0, 0.6}, {1, 0.6}, {2, 0.4}, {3, 0.4}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};

    const PredictionSet ps = run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::ProFemale),
                                    agent(AgentRole::Prediction, BiasDirection::None));
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(ps.probs[i] == doctest::Approx(base(static_cast<int>(i))).epsilon(1e-9));
}

TEST_CASE("E1 with both agents exposed shifts by delta times gain") {
    TempDir tmp("pipe_e1_both");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}});
    Probs base{{{0, 0.6}, {1, 0.6}, {2, 0.4}, {3, 0.4}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};

    const PredictionSet ps = run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::ProFemale),
                                    agent(AgentRole::Prediction, BiasDirection::ProFemale));
    CHECK(ps.probs[0] == doctest::Approx(0.6 - 0.25).epsilon(1e-9));  // favored, shift 0.2 * 1.25
    CHECK(ps.probs[1] == doctest::Approx(0.6 + 0.25).epsilon(1e-9));  // disfavored
    CHECK(ps.probs[2] == doctest::Approx(0.4 - 0.25).epsilon(1e-9));
    CHECK(ps.probs[3] == doctest::Approx(0.4 + 0.25).epsilon(1e-9));

    // Single-exposure shift is strictly smaller (gain >= 1).
    const PredictionSet single =
        run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::None),
               agent(AgentRole::Prediction, BiasDirection::ProFemale));
    CHECK(single.probs[0] == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(std::fabs(ps.probs[0] - 0.6) > std::fabs(single.probs[0] - 0.6));
}

TEST_CASE("E2 adopts the ML probability on agreement and routes disagreement to the judge") {
    TempDir tmp("pipe_e2");
    // G1 >= 11 -> ml prob 0.047 (pass side); G1 <= 10 -> 0.953 (fail side).
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}, {'F', 5}, {'M', 12}});
    // llm (clean mock = base): pass, fail, pass(!), fail(!) -> last two disagree with ML.
    Probs base{{{0, 0.2}, {1, 0.9}, {2, 0.3}, {3, 0.9}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};

    const ModelBundle ml = scripted_ml(d, 42);
    CHECK(ml.failure_prob(d, 0) == doctest::Approx(1.0 / (1.0 + std::exp(3.0))));

    const PredictionSet ps =
        run_e2(ctx, agent(AgentRole::Explanation, BiasDirection::None),
               agent(AgentRole::Prediction, BiasDirection::None),
               agent(AgentRole::Judge, BiasDirection::None), ml);

    // Instance 0: llm 0.2 pass, ml 0.047 pass -> agreement, final = ml.
    CHECK(ps.provenance[0] == Provenance::MlAgreement);
    CHECK(ps.probs[0] == doctest::Approx(ml.failure_prob(d, 0)));
    // Instance 1: llm 0.9 fail, ml 0.953 fail -> agreement.
    CHECK(ps.provenance[1] == Provenance::MlAgreement);
    CHECK(ps.probs[1] == doctest::Approx(ml.failure_prob(d, 1)));
    // Instance 2: llm 0.3 pass, ml 0.953 fail -> judge. mean 0.6265 -> stays.
    CHECK(ps.provenance[2] == Provenance::Judge);
    CHECK(ps.probs[2] == doctest::Approx(0.5 * (0.3 + ml.failure_prob(d, 2))));
    // Instance 3: llm 0.9 fail, ml 0.047 pass -> judge. mean 0.4735 -> pushed to 0.39.
    CHECK(ps.provenance[3] == Provenance::Judge);
    CHECK(ps.probs[3] == doctest::Approx(0.39));

    CHECK(disagreement_rate(ps) == doctest::Approx(0.5));
}

TEST_CASE("disagreement rate covers the trivial and counted cases") {
    TempDir tmp("pipe_rate");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}});
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    const ModelBundle ml = scripted_ml(d, 42);

    // All agreements: base == ml side everywhere.
    Probs agree{{{0, 0.1}, {1, 0.1}, {2, 0.9}, {3, 0.9}}};
    PipelineContext ctx1{d, "stats", agree, ep, "k1", 42, 10};
    const PredictionSet all_agree =
        run_e2(ctx1, agent(AgentRole::Explanation, BiasDirection::None),
               agent(AgentRole::Prediction, BiasDirection::None),
               agent(AgentRole::Judge, BiasDirection::None), ml);
    CHECK(disagreement_rate(all_agree) == 0.0);

    // All disagreements.
    Probs flip{{{0, 0.9}, {1, 0.9}, {2, 0.1}, {3, 0.1}}};
    PipelineContext ctx2{d, "stats", flip, ep, "k2", 42, 10};
    const PredictionSet none_agree =
        run_e2(ctx2, agent(AgentRole::Explanation, BiasDirection::None),
               agent(AgentRole::Prediction, BiasDirection::None),
               agent(AgentRole::Judge, BiasDirection::None), ml);
    CHECK(disagreement_rate(none_agree) == 1.0);

    // Non-E2 prediction sets have no disagreement rate.
    Probs base{{{0, 0.5}, {1, 0.5}, {2, 0.5}, {3, 0.5}}};
    PipelineContext ctx3{d, "stats", base, ep, "k3", 42, 10};
    const PredictionSet e0 = run_e0(ctx3, agent(AgentRole::Prediction, BiasDirection::None));
    CHECK_THROWS_AS(disagreement_rate(e0), DomainError);
}

TEST_CASE("E2 refuses a model fit for another dataset or seed") {
    TempDir tmp("pipe_mismatch");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}});
    Probs base{{{0, 0.5}, {1, 0.5}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};

    ModelBundle wrong_seed = scripted_ml(d, 43);
    CHECK_THROWS_AS(run_e2(ctx, agent(AgentRole::Explanation, BiasDirection::None),
                           agent(AgentRole::Prediction, BiasDirection::None),
                           agent(AgentRole::Judge, BiasDirection::None), wrong_seed),
                    ConfigError);

    ModelBundle wrong_data = scripted_ml(d, 42);
    wrong_data.dataset_name = "por";
    CHECK_THROWS_AS(run_e2(ctx, agent(AgentRole::Explanation, BiasDirection::None),
                           agent(AgentRole::Prediction, BiasDirection::None),
                           agent(AgentRole::Judge, BiasDirection::None), wrong_data),
                    ConfigError);
}

TEST_CASE("clean and exposed runs pair instance-for-instance") {
    TempDir tmp("pipe_pairing");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}, {'F', 12}, {'M', 5}});
    Probs base{{{0, 0.42}, {1, 0.58}, {2, 0.51}, {3, 0.49}, {4, 0.66}, {5, 0.34}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 2};

    const PredictionSet clean = run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::None));
    const PredictionSet exposed =
        run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::ProMale));
    CHECK(clean.instance_ids == exposed.instance_ids);
    CHECK(clean.instance_ids == d.split.test);
}

TEST_CASE("mock pipelines are bitwise reproducible") {
    TempDir tmp("pipe_repro");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 12}, {'F', 5}, {'M', 5}});
    Probs base{{{0, 0.62}, {1, 0.37}, {2, 0.55}, {3, 0.45}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 2};

    const auto a = run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::ProFemale),
                          agent(AgentRole::Prediction, BiasDirection::ProFemale));
    const auto b = run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::ProFemale),
                          agent(AgentRole::Prediction, BiasDirection::ProFemale));
    CHECK(a.probs == b.probs);
    CHECK(a.hard == b.hard);
    CHECK(a.to_jsonl() == b.to_jsonl());
}

TEST_CASE("one malformed batch response is retried, persistent garbage fails the condition") {
    TempDir tmp("pipe_retry");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}});
    Probs base{{{0, 0.4}, {1, 0.6}}};

    {
        auto backend = std::make_shared<FlakyBackend>("gibberish with no marker", 1);
        AgentEndpoint ep(backend);
        PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};
        const PredictionSet ps = run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::None));
        CHECK(ps.probs[0] == doctest::Approx(0.4));
        CHECK(ep.backend_calls() == 2);  // one garbage, one retry
    }
    {
        auto backend = std::make_shared<FlakyBackend>("gibberish with no marker", 1000);
        AgentEndpoint ep(backend);
        PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};
        CHECK_THROWS_AS(run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::None)),
                        ConditionError);
    }
}

TEST_CASE("an unreachable endpoint fails the whole condition, E1 before any prediction call") {
    TempDir tmp("pipe_dead");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}});
    Probs base{{{0, 0.4}, {1, 0.6}}};
    auto backend = std::make_shared<DeadBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};
    CHECK_THROWS_WITH_AS(run_e1(ctx, agent(AgentRole::Explanation, BiasDirection::None),
                                agent(AgentRole::Prediction, BiasDirection::None)),
                         doctest::Contains("before prediction"), ConditionError);
    CHECK(ep.backend_calls() == 1);  // only the explanation attempt
}

TEST_CASE("batching splits the test set and reassembles in order") {
    TempDir tmp("pipe_batching");
    std::vector<std::pair<char, int>> spec;
    for (int i = 0; i < 7; ++i) spec.push_back({i % 2 ? 'M' : 'F', 12});
    Dataset d = toy_dataset(tmp, spec);
    Probs base;
    for (int i = 0; i < 7; ++i) base.by_id[i] = 0.1 + 0.1 * i;
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 3};  // 3 batches: 3+3+1

    const PredictionSet ps = run_e0(ctx, agent(AgentRole::Prediction, BiasDirection::None));
    CHECK(ep.backend_calls() == 3);
    for (int i = 0; i < 7; ++i)
        CHECK(ps.probs[static_cast<std::size_t>(i)] == doctest::Approx(base(i)).epsilon(1e-9));
}

TEST_CASE("prediction sets round-trip through JSONL") {
    TempDir tmp("pipe_jsonl");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}, {'F', 5}, {'M', 12}});
    Probs base{{{0, 0.2}, {1, 0.9}, {2, 0.3}, {3, 0.9}}};
    auto backend = std::make_shared<MockBackend>();
    AgentEndpoint ep(backend);
    PipelineContext ctx{d, "stats", base, ep, "key", 42, 10};
    const PredictionSet ps =
        run_e2(ctx, agent(AgentRole::Explanation, BiasDirection::None),
               agent(AgentRole::Prediction, BiasDirection::None),
               agent(AgentRole::Judge, BiasDirection::None), scripted_ml(d, 42));

    const PredictionSet back = PredictionSet::from_jsonl(ps.to_jsonl());
    CHECK(back.condition_key == ps.condition_key);
    CHECK(back.pipeline == ps.pipeline);
    CHECK(back.seed == ps.seed);
    CHECK(back.instance_ids == ps.instance_ids);
    CHECK(back.probs == ps.probs);
    CHECK(back.hard == ps.hard);
    CHECK(back.provenance == ps.provenance);
}

TEST_CASE("render_batch_data lists features without labels") {
    TempDir tmp("pipe_render");
    Dataset d = toy_dataset(tmp, {{'F', 12}, {'M', 5}});
    const std::string batch = render_batch_data(d, d.split.test);
    CHECK(batch.find("\"G1\":12") != std::string::npos);
    CHECK(batch.find("\"row\":0") != std::string::npos);
    CHECK(batch.find("\"row\":1") != std::string::npos);
    CHECK(batch.find("label") == std::string::npos);
    CHECK(batch.find("G3") == std::string::npos);
    CHECK_THROWS_AS(render_batch_data(d, {}), RenderError);

    const std::string with_preds =
        render_batch_with_preds(d, d.split.test, std::vector<double>{0.9, 0.1},
                                std::vector<double>{0.2, 0.8});
    CHECK(with_preds.find("\"llm_fail_prob\":0.9") != std::string::npos);
    CHECK(with_preds.find("\"ml_fail_prob\":0.2") != std::string::npos);
}
