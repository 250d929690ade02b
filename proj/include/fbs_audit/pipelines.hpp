#pragma once

#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fbs_audit/agents.hpp"
#include "fbs_audit/dataset.hpp"
#include "fbs_audit/errors.hpp"
#include "fbs_audit/ml.hpp"

namespace fbs {

enum class PipelineId { E0, E1, E2 };

inline std::string to_string(PipelineId p) {
    switch (p) {
        case PipelineId::E0: return "E0";
        case PipelineId::E1: return "E1";
        case PipelineId::E2: return "E2";
    }
    return "?";
}

inline PipelineId pipeline_from_string(const std::string& s) {
    if (s == "E0" || s == "e0") return PipelineId::E0;
    if (s == "E1" || s == "e1") return PipelineId::E1;
    if (s == "E2" || s == "e2") return PipelineId::E2;
    throw ConfigError("unknown pipeline: " + s);
}

// Which agents a pipeline contains (and therefore which can be exposed).
inline const std::set<AgentRole>& pipeline_agents(PipelineId p) {
    static const std::set<AgentRole> e0 = {AgentRole::Prediction};
    static const std::set<AgentRole> e1 = {AgentRole::Explanation, AgentRole::Prediction};
    static const std::set<AgentRole> e2 = {AgentRole::Explanation, AgentRole::Prediction,
                                           AgentRole::Judge};
    switch (p) {
        case PipelineId::E0: return e0;
        case PipelineId::E1: return e1;
        case PipelineId::E2: return e2;
    }
    return e0;
}

enum class Provenance { Llm, MlAgreement, Judge };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Llm: return "llm";
        case Provenance::MlAgreement: return "ml_agreement";
        case Provenance::Judge: return "judge";
    }
    return "?";
}

// Final per-instance outputs of one condition run, in test-split order.
struct PredictionSet {
    std::string condition_key;
    PipelineId pipeline = PipelineId::E0;
    std::uint64_t seed = 0;
    std::vector<int> instance_ids;
    std::vector<double> probs;
    std::vector<int> hard;
    std::vector<Provenance> provenance;

    std::size_t size() const { return instance_ids.size(); }

    std::string to_jsonl() const {
        nlohmann::ordered_json head;
        head["condition_key"] = condition_key;
        head["pipeline"] = to_string(pipeline);
        head["seed"] = seed;
        std::string out = head.dump() + "\n";
        for (std::size_t i = 0; i < instance_ids.size(); ++i) {
            nlohmann::ordered_json j;
            j["instance_id"] = instance_ids[i];
            j["prob"] = probs[i];
            j["hard"] = hard[i];
            j["provenance"] = to_string(provenance[i]);
            out += j.dump() + "\n";
        }
        return out;
    }

    static PredictionSet from_jsonl(const std::string& text) {
        PredictionSet ps;
        std::istringstream in(text);
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (header) {
                ps.condition_key = j.at("condition_key").get<std::string>();
                ps.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
                ps.seed = j.at("seed").get<std::uint64_t>();
                header = false;
                continue;
            }
            ps.instance_ids.push_back(j.at("instance_id").get<int>());
            ps.probs.push_back(j.at("prob").get<double>());
            ps.hard.push_back(j.at("hard").get<int>());
            const auto prov = j.at("provenance").get<std::string>();
            ps.provenance.push_back(prov == "ml_agreement" ? Provenance::MlAgreement
                                    : prov == "judge"      ? Provenance::Judge
                                                           : Provenance::Llm);
        }
        if (header) throw ParseError("prediction set: missing header line", text.substr(0, 64));
        return ps;
    }
};

// Fraction of instances the Judge decided; only meaningful for E2 runs.
inline double disagreement_rate(const PredictionSet& ps) {
    if (ps.pipeline != PipelineId::E2)
        throw DomainError("disagreement rate is defined for E2 prediction sets only");
    if (ps.size() == 0) throw DomainError("disagreement rate: empty prediction set");
    long judged = 0;
    for (auto p : ps.provenance) judged += p == Provenance::Judge;
    return static_cast<double>(judged) / static_cast<double>(ps.size());
}

// ---------------------------------------------------------------------------
// Batch rendering into prompt slots
// ---------------------------------------------------------------------------

// One record per line as a fixed-key-order JSON object; `row` numbers the
// record within its batch. Labels never appear here.
inline std::string render_batch_data(const Dataset& d, std::span<const int> ids) {
    if (ids.empty()) throw RenderError("render: empty batch");
    std::string out;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& rec = d.records[static_cast<std::size_t>(ids[k])];
        out += "{\"row\":" + std::to_string(k);
        for (std::size_t f = 0; f < d.schema.size(); ++f)
            out += ",\"" + d.schema[f] + "\":" + detail::fmt_value(rec.features[f]);
        out += "}\n";
    }
    return out;
}

inline std::string render_batch_with_preds(const Dataset& d, std::span<const int> ids,
                                           std::span<const double> llm_probs,
                                           std::span<const double> ml_probs) {
    if (ids.empty()) throw RenderError("render: empty batch");
    if (llm_probs.size() != ids.size() || ml_probs.size() != ids.size())
        throw ShapeError("render: predictions/batch size mismatch");
    std::string out;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& rec = d.records[static_cast<std::size_t>(ids[k])];
        out += "{\"row\":" + std::to_string(k);
        for (std::size_t f = 0; f < d.schema.size(); ++f)
            out += ",\"" + d.schema[f] + "\":" + detail::fmt_value(rec.features[f]);
        out += ",\"llm_fail_prob\":" + detail::format_prob(llm_probs[k]);
        out += ",\"ml_fail_prob\":" + detail::format_prob(ml_probs[k]);
        out += "}\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline execution
// ---------------------------------------------------------------------------

// A fitted reference model pinned to the dataset/seed it was trained on.
struct ModelBundle {
    GbtModel model;
    Scaler scaler;
    std::string dataset_name;
    std::uint64_t seed = 0;

    double failure_prob(const Dataset& d, int instance_id) const {
        return model.predict_proba(
            scaler.transform(d.records[static_cast<std::size_t>(instance_id)].features));
    }
};

inline ModelBundle fit_reference_model(const Dataset& d, std::uint64_t seed,
                                       const GbtParams& params = {}) {
    if (d.split.train.empty()) throw ConfigError("fit: dataset has no train split");
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    X.reserve(d.split.train.size());
    for (int id : d.split.train) {
        X.push_back(d.records[static_cast<std::size_t>(id)].features);
        y.push_back(d.records[static_cast<std::size_t>(id)].label);
    }
    ModelBundle b;
    b.scaler = Scaler::fit(X);
    b.model = fit_gbt(b.scaler.transform_all(X), y, params, seed);
    b.dataset_name = d.name;
    b.seed = seed;
    return b;
}

// Everything shared by every agent call of one condition run.
struct PipelineContext {
    const Dataset& data;
    std::string stats_text;
    // Failure probability of the data-grounded scorer per instance id. The
    // mock backend shifts these; E2 arbitrates against them.
    std::function<double(int)> base_scorer;
    AgentEndpoint& endpoint;
    std::string condition_key;
    std::uint64_t seed = 0;
    int batch_size = 10;
};

namespace pipeline_detail {

inline std::vector<std::vector<int>> make_batches(const std::vector<int>& ids, int batch_size) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(ids.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                             ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

inline BatchContext make_batch_context(const PipelineContext& ctx, const std::vector<int>& ids,
                                       const std::string& explanation) {
    BatchContext bc;
    bc.instance_ids = ids;
    bc.expected_count = static_cast<int>(ids.size());
    bc.upstream_explanation = explanation;
    for (int id : ids) {
        bc.groups.push_back(ctx.data.records[static_cast<std::size_t>(id)].group);
        bc.base_probs.push_back(ctx.base_scorer(id));
    }
    return bc;
}

// Invokes the Prediction agent over every test batch and concatenates the
// parsed probabilities in split order. Any batch failing after the single
// re-invoke aborts the condition; no partial prediction set escapes.
inline std::vector<double> predict_probs(const PipelineContext& ctx, const AgentConfig& prediction,
                                         const std::optional<std::string>& explanation) {
    std::vector<double> probs;
    for (const auto& ids : make_batches(ctx.data.split.test, ctx.batch_size)) {
        PromptInputs in;
        in.batch_data = render_batch_data(ctx.data, ids);
        if (explanation.has_value()) in.explanation = *explanation;
        const RenderedPrompt rp = render_prompt(AgentRole::Prediction, in, prediction.bias);
        const BatchContext bc =
            make_batch_context(ctx, ids, explanation.value_or(std::string{}));
        try {
            const AgentTranscript t =
                ctx.endpoint.invoke_validated(prediction, rp, bc, ctx.condition_key, ctx.seed);
            probs.insert(probs.end(), t.probabilities.begin(), t.probabilities.end());
        } catch (const ParseError& e) {
            throw ConditionError("condition " + ctx.condition_key +
                                 " failed: prediction batch unparseable after retry: " + e.what());
        } catch (const EndpointError& e) {
            throw ConditionError("condition " + ctx.condition_key + " failed: " + e.what());
        }
    }
    return probs;
}

inline std::string run_explanation(const PipelineContext& ctx, const AgentConfig& explanation) {
    PromptInputs in;
    in.stats_text = ctx.stats_text;
    const RenderedPrompt rp = render_prompt(AgentRole::Explanation, in, explanation.bias);
    BatchContext bc;
    bc.stats_text = ctx.stats_text;
    bc.expected_count = 0;
    try {
        return ctx.endpoint.invoke(explanation, rp, bc, ctx.condition_key, ctx.seed).text_payload;
    } catch (const EndpointError& e) {
        throw ConditionError("condition " + ctx.condition_key +
                             " failed before prediction calls: " + e.what());
    }
}

inline PredictionSet assemble(const PipelineContext& ctx, PipelineId pipeline,
                              std::vector<double> probs, std::vector<Provenance> prov) {
    PredictionSet ps;
    ps.condition_key = ctx.condition_key;
    ps.pipeline = pipeline;
    ps.seed = ctx.seed;
    ps.instance_ids = ctx.data.split.test;
    ps.probs = std::move(probs);
    ps.hard.reserve(ps.probs.size());
    for (double p : ps.probs) ps.hard.push_back(hard_label(p));
    ps.provenance = std::move(prov);
    return ps;
}

} // namespace pipeline_detail

// E0: the Prediction agent alone, template variant without the explanation
// slot.
inline PredictionSet run_e0(const PipelineContext& ctx, const AgentConfig& prediction) {
    if (ctx.data.split.test.empty()) throw DomainError("run: empty test split");
    auto probs = pipeline_detail::predict_probs(ctx, prediction, std::nullopt);
    return pipeline_detail::assemble(ctx, PipelineId::E0, std::move(probs),
                                     std::vector<Provenance>(ctx.data.split.test.size(),
                                                             Provenance::Llm));
}

// E1: one Explanation call per run feeds every Prediction batch.
inline PredictionSet run_e1(const PipelineContext& ctx, const AgentConfig& explanation,
                            const AgentConfig& prediction) {
    if (ctx.data.split.test.empty()) throw DomainError("run: empty test split");
    const std::string expl = pipeline_detail::run_explanation(ctx, explanation);
    auto probs = pipeline_detail::predict_probs(ctx, prediction, expl);
    return pipeline_detail::assemble(ctx, PipelineId::E1, std::move(probs),
                                     std::vector<Provenance>(ctx.data.split.test.size(),
                                                             Provenance::Llm));
}

// E2: thresholded LLM and ML predictions that agree adopt the ML probability;
// disagreements go to the Judge in batches carrying features, the explanation
// and both probabilities.
inline PredictionSet run_e2(const PipelineContext& ctx, const AgentConfig& explanation,
                            const AgentConfig& prediction, const AgentConfig& judge,
                            const ModelBundle& ml) {
    if (ctx.data.split.test.empty()) throw DomainError("run: empty test split");
    if (ml.dataset_name != ctx.data.name || ml.seed != ctx.seed)
        throw ConfigError("run: ML model was fit for (" + ml.dataset_name + ", seed " +
                          std::to_string(ml.seed) + "), condition wants (" + ctx.data.name +
                          ", seed " + std::to_string(ctx.seed) + ")");

    const std::string expl = pipeline_detail::run_explanation(ctx, explanation);
    const std::vector<double> llm_probs = pipeline_detail::predict_probs(ctx, prediction, expl);

    const auto& test = ctx.data.split.test;
    std::vector<double> final_probs(test.size());
    std::vector<Provenance> prov(test.size(), Provenance::MlAgreement);
    std::vector<std::size_t> disagreed;
    std::vector<double> ml_probs(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        ml_probs[i] = ml.failure_prob(ctx.data, test[i]);
        if (hard_label(llm_probs[i]) == hard_label(ml_probs[i])) {
            final_probs[i] = ml_probs[i];
        } else {
            disagreed.push_back(i);
        }
    }

    for (std::size_t start = 0; start < disagreed.size();
         start += static_cast<std::size_t>(ctx.batch_size)) {
        const auto end =
            std::min(disagreed.size(), start + static_cast<std::size_t>(ctx.batch_size));
        std::vector<int> ids;
        std::vector<double> batch_llm, batch_ml;
        for (std::size_t k = start; k < end; ++k) {
            ids.push_back(test[disagreed[k]]);
            batch_llm.push_back(llm_probs[disagreed[k]]);
            batch_ml.push_back(ml_probs[disagreed[k]]);
        }
        PromptInputs in;
        in.explanation = expl;
        in.batch_with_preds = render_batch_with_preds(ctx.data, ids, batch_llm, batch_ml);
        const RenderedPrompt rp = render_prompt(AgentRole::Judge, in, judge.bias);
        BatchContext bc = pipeline_detail::make_batch_context(ctx, ids, expl);
        bc.llm_probs = batch_llm;
        bc.ml_probs = batch_ml;
        try {
            const AgentTranscript t =
                ctx.endpoint.invoke_validated(judge, rp, bc, ctx.condition_key, ctx.seed);
            for (std::size_t k = start; k < end; ++k) {
                final_probs[disagreed[k]] = t.probabilities[k - start];
                prov[disagreed[k]] = Provenance::Judge;
            }
        } catch (const ParseError& e) {
            throw ConditionError("condition " + ctx.condition_key +
                                 " failed: judge batch unparseable after retry: " + e.what());
        } catch (const EndpointError& e) {
            throw ConditionError("condition " + ctx.condition_key + " failed: " + e.what());
        }
    }
    return pipeline_detail::assemble(ctx, PipelineId::E2, std::move(final_probs), std::move(prov));
}

} // namespace fbs
