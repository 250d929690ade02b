#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fbs_audit/agents.hpp"
#include "fbs_audit/dataset.hpp"
#include "fbs_audit/errors.hpp"
#include "fbs_audit/http_backend.hpp"
#include "fbs_audit/metrics.hpp"
#include "fbs_audit/pipelines.hpp"
#include "fbs_audit/stats.hpp"

namespace fbs {

// ---------------------------------------------------------------------------
// Conditions and the experiment grid
// ---------------------------------------------------------------------------

// One experiment cell. The clean baseline of a pairing group carries direction
// none and an empty target set.
struct Condition {
    std::string dataset;
    PipelineId pipeline = PipelineId::E0;
    std::set<AgentRole> targets;
    BiasDirection direction = BiasDirection::None;
    std::string model;
    std::uint64_t seed = 0;

    bool is_clean() const { return direction == BiasDirection::None; }

    void validate() const {
        if (is_clean() != targets.empty())
            throw ConfigError("condition: direction 'none' must pair with an empty target set");
        const auto& allowed = pipeline_agents(pipeline);
        for (AgentRole r : targets)
            if (!allowed.count(r))
                throw ConfigError("condition: target '" + to_string(r) + "' is not part of " +
                                  to_string(pipeline));
    }

    // Canonical order Explanation < Prediction < Judge, joined by '+'.
    std::string targets_label() const {
        if (targets.empty()) return "none";
        std::string out;
        for (AgentRole r :
             {AgentRole::Explanation, AgentRole::Prediction, AgentRole::Judge}) {
            if (!targets.count(r)) continue;
            if (!out.empty()) out += "+";
            out += to_string(r);
        }
        return out;
    }

    std::string key() const {
        return dataset + "|" + to_string(pipeline) + "|" + targets_label() + "|" +
               to_string(direction) + "|" + model + "|s" + std::to_string(seed);
    }

    // Conditions sharing this key are compared against the same clean baseline.
    std::string pairing_group() const {
        return dataset + "|" + to_string(pipeline) + "|" + model + "|s" + std::to_string(seed);
    }

    std::string baseline_key() const {
        Condition c = *this;
        c.targets.clear();
        c.direction = BiasDirection::None;
        return c.key();
    }
};

struct ExperimentConfig {
    struct DatasetRef {
        std::string name;
        std::string csv;
    };

    std::vector<DatasetRef> datasets;
    std::vector<std::string> models;
    std::vector<PipelineId> pipelines;
    std::vector<BiasDirection> directions{BiasDirection::ProFemale, BiasDirection::ProMale};
    std::vector<std::uint64_t> seeds{42, 43, 44};
    int batch_size = 10;
    int bootstrap_iterations = 10000;
    std::string backend = "mock";  // "mock" | "http"
    MockSpec mock;
    std::string output_dir = "out";
    std::string cache_dir = "out/cache";
    int workers = 2;
    bool e2_power_set = false;
    std::string aggregation = "pooled";  // "pooled" | "averaged"
    double test_fraction = 0.2;
    double temperature = 0.0;
    int max_tokens = 4096;
    GbtParams gbt;

    void validate() const {
        if (datasets.empty()) throw ConfigError("config: no datasets");
        if (pipelines.empty()) throw ConfigError("config: no pipelines");
        if (backend != "mock" && backend != "http")
            throw ConfigError("config: backend must be 'mock' or 'http'");
        if (aggregation != "pooled" && aggregation != "averaged")
            throw ConfigError("config: aggregation must be 'pooled' or 'averaged'");
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (workers < 1) throw ConfigError("config: workers must be >= 1");
        for (BiasDirection d : directions)
            if (d == BiasDirection::None)
                throw ConfigError("config: 'none' is implicit (clean baselines are always run)");
        mock.validate();
    }

    nlohmann::ordered_json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

inline nlohmann::ordered_json ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["datasets"] = nlohmann::ordered_json::array();
    for (const auto& d : datasets) j["datasets"].push_back({{"name", d.name}, {"csv", d.csv}});
    j["models"] = models;
    j["pipelines"] = nlohmann::ordered_json::array();
    for (auto p : pipelines) j["pipelines"].push_back(to_string(p));
    j["directions"] = nlohmann::ordered_json::array();
    for (auto d : directions) j["directions"].push_back(to_string(d));
    j["seeds"] = seeds;
    j["batch_size"] = batch_size;
    j["bootstrap_iterations"] = bootstrap_iterations;
    j["backend"] = backend;
    j["mock"] = {{"delta_favored", mock.delta_favored},
                 {"delta_disfavored", mock.delta_disfavored},
                 {"band_lo", mock.band_lo},
                 {"band_hi", mock.band_hi},
                 {"propagation_gain", mock.propagation_gain}};
    j["output_dir"] = output_dir;
    j["cache_dir"] = cache_dir;
    j["workers"] = workers;
    j["e2_power_set"] = e2_power_set;
    j["aggregation"] = aggregation;
    j["test_fraction"] = test_fraction;
    j["temperature"] = temperature;
    j["max_tokens"] = max_tokens;
    j["gbt"] = {{"stages", gbt.stages},
                {"max_depth", gbt.max_depth},
                {"learning_rate", gbt.learning_rate},
                {"subsample", gbt.subsample},
                {"min_samples_split", gbt.min_samples_split}};
    return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.datasets.clear();
    for (const auto& d : j.at("datasets"))
        c.datasets.push_back({d.at("name").get<std::string>(), d.at("csv").get<std::string>()});
    c.models = j.at("models").get<std::vector<std::string>>();
    c.pipelines.clear();
    for (const auto& p : j.at("pipelines"))
        c.pipelines.push_back(pipeline_from_string(p.get<std::string>()));
    if (j.contains("directions")) {
        c.directions.clear();
        for (const auto& d : j.at("directions"))
            c.directions.push_back(bias_from_string(d.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.bootstrap_iterations = j.value("bootstrap_iterations", c.bootstrap_iterations);
    c.backend = j.value("backend", c.backend);
    if (j.contains("mock")) {
        const auto& m = j.at("mock");
        c.mock.delta_favored = m.value("delta_favored", c.mock.delta_favored);
        c.mock.delta_disfavored = m.value("delta_disfavored", c.mock.delta_disfavored);
        c.mock.band_lo = m.value("band_lo", c.mock.band_lo);
        c.mock.band_hi = m.value("band_hi", c.mock.band_hi);
        c.mock.propagation_gain = m.value("propagation_gain", c.mock.propagation_gain);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    c.workers = j.value("workers", c.workers);
    c.e2_power_set = j.value("e2_power_set", c.e2_power_set);
    c.aggregation = j.value("aggregation", c.aggregation);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    if (j.contains("gbt")) {
        const auto& g = j.at("gbt");
        c.gbt.stages = g.value("stages", c.gbt.stages);
        c.gbt.max_depth = g.value("max_depth", c.gbt.max_depth);
        c.gbt.learning_rate = g.value("learning_rate", c.gbt.learning_rate);
        c.gbt.subsample = g.value("subsample", c.gbt.subsample);
        c.gbt.min_samples_split = g.value("min_samples_split", c.gbt.min_samples_split);
    }
    return c;
}

// The exposure target sets one pipeline contributes to the grid. E2 defaults
// to the five reported sets; the power-set flag expands to all seven
// combinations of its agents.
inline std::vector<std::set<AgentRole>> target_sets(PipelineId p, bool e2_power_set) {
    using R = AgentRole;
    switch (p) {
        case PipelineId::E0:
            return {{R::Prediction}};
        case PipelineId::E1:
            return {{R::Prediction}, {R::Explanation}, {R::Explanation, R::Prediction}};
        case PipelineId::E2:
            if (!e2_power_set)
                return {{R::Prediction},
                        {R::Explanation},
                        {R::Judge},
                        {R::Explanation, R::Prediction},
                        {R::Explanation, R::Prediction, R::Judge}};
            return {{R::Prediction},
                    {R::Explanation},
                    {R::Judge},
                    {R::Explanation, R::Prediction},
                    {R::Explanation, R::Judge},
                    {R::Prediction, R::Judge},
                    {R::Explanation, R::Prediction, R::Judge}};
    }
    return {};
}

// Every (dataset, model, seed, pipeline) yields one clean baseline plus one
// exposed condition per direction and allowed target set.
inline std::vector<Condition> expand_grid(const ExperimentConfig& config) {
    config.validate();
    std::vector<Condition> grid;
    std::set<std::string> keys;
    for (const auto& ds : config.datasets) {
        for (const auto& model : config.models) {
            for (std::uint64_t seed : config.seeds) {
                for (PipelineId p : config.pipelines) {
                    Condition clean{ds.name, p, {}, BiasDirection::None, model, seed};
                    clean.validate();
                    grid.push_back(clean);
                    for (BiasDirection dir : config.directions) {
                        for (const auto& targets : target_sets(p, config.e2_power_set)) {
                            Condition c{ds.name, p, targets, dir, model, seed};
                            c.validate();
                            grid.push_back(c);
                        }
                    }
                }
            }
        }
    }
    for (const auto& c : grid)
        if (!keys.insert(c.key()).second) throw ConfigError("grid: duplicate key " + c.key());
    return grid;
}

// ---------------------------------------------------------------------------
// Run ledger
// ---------------------------------------------------------------------------

struct LedgerEntry {
    std::string key;
    std::string status;  // "completed" | "failed"
    std::string dataset, pipeline, targets, direction, model;
    std::uint64_t seed = 0;
    std::string baseline_key;
    std::string error;
    // Metrics (meaningful for completed rows; FBS block only for exposed rows).
    double dp = 0, eo = 0, auc = 0, acc = 0, rate0 = 0, rate1 = 0;
    std::optional<double> disagreement;
    std::optional<double> fbs, fbs_fav, fbs_disfav, fbs_mean, fbs_std;
    int bootstrap_iterations = 0;
    long redraws = 0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["key"] = key;
        j["status"] = status;
        j["dataset"] = dataset;
        j["pipeline"] = pipeline;
        j["targets"] = targets;
        j["direction"] = direction;
        j["model"] = model;
        j["seed"] = seed;
        j["baseline_key"] = baseline_key;
        j["error"] = error;
        j["dp"] = dp;
        j["eo"] = eo;
        j["auc"] = auc;
        j["acc"] = acc;
        j["rate0"] = rate0;
        j["rate1"] = rate1;
        auto opt = [](const std::optional<double>& v) {
            return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
        };
        j["disagreement_rate"] = opt(disagreement);
        j["fbs"] = opt(fbs);
        j["fbs_fav"] = opt(fbs_fav);
        j["fbs_disfav"] = opt(fbs_disfav);
        j["fbs_mean"] = opt(fbs_mean);
        j["fbs_std"] = opt(fbs_std);
        j["bootstrap_B"] = bootstrap_iterations;
        j["redraws"] = redraws;
        return j;
    }

    static LedgerEntry from_json(const nlohmann::json& j) {
        LedgerEntry e;
        e.key = j.at("key").get<std::string>();
        e.status = j.at("status").get<std::string>();
        e.dataset = j.at("dataset").get<std::string>();
        e.pipeline = j.at("pipeline").get<std::string>();
        e.targets = j.at("targets").get<std::string>();
        e.direction = j.at("direction").get<std::string>();
        e.model = j.at("model").get<std::string>();
        e.seed = j.at("seed").get<std::uint64_t>();
        e.baseline_key = j.at("baseline_key").get<std::string>();
        e.error = j.at("error").get<std::string>();
        e.dp = j.at("dp").get<double>();
        e.eo = j.at("eo").get<double>();
        e.auc = j.at("auc").get<double>();
        e.acc = j.at("acc").get<double>();
        e.rate0 = j.at("rate0").get<double>();
        e.rate1 = j.at("rate1").get<double>();
        auto opt = [&](const char* k) -> std::optional<double> {
            if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
            return j.at(k).get<double>();
        };
        e.disagreement = opt("disagreement_rate");
        e.fbs = opt("fbs");
        e.fbs_fav = opt("fbs_fav");
        e.fbs_disfav = opt("fbs_disfav");
        e.fbs_mean = opt("fbs_mean");
        e.fbs_std = opt("fbs_std");
        e.bootstrap_iterations = j.value("bootstrap_B", 0);
        e.redraws = j.value("redraws", 0L);
        return e;
    }
};

// Append-only JSONL ledger; the single synchronized mutation point of a run.
class RunLedger {
public:
    explicit RunLedger(std::filesystem::path dir) : path_(std::move(dir)) {
        std::filesystem::create_directories(path_);
        path_ /= "ledger.jsonl";
        load();
    }

    bool contains(const std::string& key) const {
        std::lock_guard lock(mu_);
        return entries_.count(key) > 0;
    }

    std::optional<LedgerEntry> get(const std::string& key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    // Appends the entry on disk; in memory the latest entry per key wins, so a
    // retried condition keeps one logical row.
    void append(const LedgerEntry& e) {
        std::lock_guard lock(mu_);
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw Error("ledger: cannot append to " + path_.string());
        out << e.to_json().dump() << "\n";
        out.flush();
        if (entries_.find(e.key) == entries_.end()) order_.push_back(e.key);
        entries_[e.key] = e;
    }

    std::vector<LedgerEntry> rows() const {
        std::lock_guard lock(mu_);
        std::vector<LedgerEntry> out;
        out.reserve(order_.size());
        for (const auto& k : order_) out.push_back(entries_.at(k));
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return order_.size();
    }

    bool exists_on_disk() const { return std::filesystem::exists(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    void load() {
        std::ifstream in(path_, std::ios::binary);
        if (!in) return;
        std::string line;
        long n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            try {
                auto e = LedgerEntry::from_json(nlohmann::json::parse(line));
                if (entries_.find(e.key) == entries_.end()) order_.push_back(e.key);
                entries_[e.key] = e;
            } catch (const std::exception& ex) {
                throw Error("ledger: corrupt line " + std::to_string(n) + " in " + path_.string() +
                            ": " + ex.what());
            }
        }
    }

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::map<std::string, LedgerEntry> entries_;
    std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

inline std::string sanitize_filename(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                        c == '_' || c == '+';
        if (!ok) c = '_';
    }
    return out;
}

struct RunResult {
    int completed = 0;
    int failed = 0;
    int skipped = 0;
    std::uint64_t backend_calls = 0;
    std::size_t ledger_rows = 0;

    int exit_code() const { return failed > 0 ? 2 : 0; }
};

using BackendFactory = std::function<std::shared_ptr<AgentBackend>(const ExperimentConfig&)>;

namespace runner_detail {

// Everything derived once per (dataset, seed) and shared read-only by every
// condition of that cell.
struct PreparedData {
    Dataset data;  // split filled in
    std::string stats_text;
    ModelBundle ml;
    std::vector<int> test_groups;
    std::vector<int> test_labels;
};

inline AgentConfig agent_config(const ExperimentConfig& cfg, const Condition& c, AgentRole role) {
    AgentConfig a;
    a.role = role;
    a.model_id = c.model;
    a.bias = c.targets.count(role) ? c.direction : BiasDirection::None;
    a.backend = cfg.backend == "http" ? BackendKind::Http : BackendKind::Mock;
    a.mock = cfg.mock;
    a.temperature = cfg.temperature;
    a.max_tokens = cfg.max_tokens;
    return a;
}

inline PredictionSet run_condition(const ExperimentConfig& cfg, const Condition& c,
                                   const PreparedData& prep, AgentEndpoint& endpoint) {
    PipelineContext ctx{prep.data,
                        prep.stats_text,
                        [&](int id) { return prep.ml.failure_prob(prep.data, id); },
                        endpoint,
                        c.key(),
                        c.seed,
                        cfg.batch_size};
    switch (c.pipeline) {
        case PipelineId::E0:
            return run_e0(ctx, agent_config(cfg, c, AgentRole::Prediction));
        case PipelineId::E1:
            return run_e1(ctx, agent_config(cfg, c, AgentRole::Explanation),
                          agent_config(cfg, c, AgentRole::Prediction));
        case PipelineId::E2:
            return run_e2(ctx, agent_config(cfg, c, AgentRole::Explanation),
                          agent_config(cfg, c, AgentRole::Prediction),
                          agent_config(cfg, c, AgentRole::Judge), prep.ml);
    }
    throw Error("run: unhandled pipeline");
}

inline LedgerEntry make_entry(const Condition& c) {
    LedgerEntry e;
    e.key = c.key();
    e.dataset = c.dataset;
    e.pipeline = to_string(c.pipeline);
    e.targets = c.targets_label();
    e.direction = to_string(c.direction);
    e.model = c.model;
    e.seed = c.seed;
    e.baseline_key = c.is_clean() ? "" : c.baseline_key();
    return e;
}

} // namespace runner_detail

// Runs the whole grid. Clean baselines run before their exposed conditions;
// per-condition failures are recorded in the ledger without aborting the rest;
// on resume, keys already in the ledger are skipped outright.
inline RunResult execute(const ExperimentConfig& cfg, bool resume = false,
                         BackendFactory backend_factory = nullptr) {
    cfg.validate();
    const auto grid = expand_grid(cfg);

    std::filesystem::create_directories(cfg.output_dir);
    std::filesystem::create_directories(std::filesystem::path(cfg.output_dir) / "predsets");

    RunLedger ledger(cfg.output_dir);
    if (!resume && ledger.size() > 0)
        throw Error("output dir already holds a run ledger; pass resume=true or use a fresh dir");

    {  // resolved config snapshot, used later by report emission
        std::ofstream out(std::filesystem::path(cfg.output_dir) / "run_config.json",
                          std::ios::binary);
        out << cfg.to_json().dump(2) << "\n";
    }

    std::shared_ptr<AgentBackend> backend;
    if (backend_factory) {
        backend = backend_factory(cfg);
    } else if (cfg.backend == "mock") {
        backend = std::make_shared<MockBackend>();
    } else {
        backend = std::make_shared<HttpBackend>();
    }

    // Datasets and per-(dataset, seed) artifacts.
    std::map<std::string, Dataset> raw;
    for (const auto& ds : cfg.datasets) raw.emplace(ds.name, load_csv(ds.csv, ds.name));
    std::map<std::string, std::shared_ptr<runner_detail::PreparedData>> prepared;
    for (const auto& ds : cfg.datasets) {
        for (std::uint64_t seed : cfg.seeds) {
            auto p = std::make_shared<runner_detail::PreparedData>();
            p->data = raw.at(ds.name);
            p->data.split = stratified_split(p->data, seed, cfg.test_fraction);
            p->stats_text = compute_stats(p->data, p->data.split.train).text;
            p->ml = fit_reference_model(p->data, seed, cfg.gbt);
            for (int id : p->data.split.test) {
                p->test_groups.push_back(p->data.records[static_cast<std::size_t>(id)].group);
                p->test_labels.push_back(p->data.records[static_cast<std::size_t>(id)].label);
            }
            prepared[ds.name + "|s" + std::to_string(seed)] = std::move(p);
        }
    }

    // Pairing groups in first-seen order; clean conditions lead each group.
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<Condition>> groups;
    for (const auto& c : grid) {
        auto [it, inserted] = groups.try_emplace(c.pairing_group());
        if (inserted) group_order.push_back(c.pairing_group());
        it->second.push_back(c);
    }

    // One transcript cache per (model, pipeline, seed), shared across datasets.
    std::map<std::string, std::shared_ptr<TranscriptCache>> caches;
    std::mutex caches_mu;
    auto cache_for = [&](const Condition& c) {
        std::lock_guard lock(caches_mu);
        const std::string k = c.model + "|" + to_string(c.pipeline) + "|" + std::to_string(c.seed);
        auto it = caches.find(k);
        if (it == caches.end())
            it = caches
                     .emplace(k, std::make_shared<TranscriptCache>(cfg.cache_dir, c.model,
                                                                   to_string(c.pipeline), c.seed))
                     .first;
        return it->second;
    };

    std::mutex result_mu;
    RunResult result;
    std::vector<std::shared_ptr<AgentEndpoint>> endpoints;
    std::mutex endpoints_mu;

    auto run_group = [&](const std::string& group_key) {
        const auto& conditions = groups.at(group_key);
        std::optional<PredictionSet> baseline_ps;
        bool baseline_ok = false;

        for (const auto& c : conditions) {
            const std::filesystem::path ps_path = std::filesystem::path(cfg.output_dir) /
                                                  "predsets" /
                                                  (sanitize_filename(c.key()) + ".jsonl");

            LedgerEntry entry = runner_detail::make_entry(c);
            try {
                // Completed keys skip outright; previously failed ones retry.
                const auto prev = ledger.get(c.key());
                if (prev.has_value() && prev->status == "completed") {
                    if (c.is_clean()) {
                        std::ifstream in(ps_path, std::ios::binary);
                        if (in) {
                            std::stringstream buf;
                            buf << in.rdbuf();
                            baseline_ps = PredictionSet::from_jsonl(buf.str());
                            baseline_ok = true;
                        }
                    }
                    std::lock_guard lock(result_mu);
                    ++result.skipped;
                    continue;
                }

                if (!c.is_clean() && !baseline_ok)
                    throw ConditionError("pairing error: baseline " + c.baseline_key() +
                                         " missing or failed");

                const auto prep = prepared.at(c.dataset + "|s" + std::to_string(c.seed));
                auto endpoint = std::make_shared<AgentEndpoint>(backend, cache_for(c));
                {
                    std::lock_guard lock(endpoints_mu);
                    endpoints.push_back(endpoint);
                }
                PredictionSet ps = runner_detail::run_condition(cfg, c, *prep, *endpoint);
                {
                    std::ofstream out(ps_path, std::ios::binary);
                    out << ps.to_jsonl();
                }

                const auto rates =
                    group_failure_rates(ps.hard, ps.probs, prep->test_groups);
                entry.dp = demographic_parity_gap(rates);
                entry.eo = equalized_odds_gap(ps.hard, prep->test_groups, prep->test_labels);
                entry.auc = auc(ps.probs, prep->test_labels);
                entry.acc = accuracy(ps.hard, prep->test_labels);
                entry.rate0 = rates.rate0;
                entry.rate1 = rates.rate1;
                if (c.pipeline == PipelineId::E2) entry.disagreement = disagreement_rate(ps);

                if (c.is_clean()) {
                    baseline_ps = ps;
                    baseline_ok = true;
                } else {
                    BootstrapOptions opt;
                    opt.iterations = cfg.bootstrap_iterations;
                    opt.seed = c.seed;
                    const auto est = paired_bootstrap_fbs(*baseline_ps, ps, prep->test_groups,
                                                          c.direction, opt);
                    const auto baseline_rates = group_failure_rates(
                        baseline_ps->hard, baseline_ps->probs, prep->test_groups);
                    auto f = fbs_score(baseline_rates, rates, c.direction);
                    f.condition_key = c.key();
                    f.baseline_key = c.baseline_key();
                    entry.fbs = f.fbs;
                    entry.fbs_fav = f.fbs_fav;
                    entry.fbs_disfav = f.fbs_disfav;
                    entry.fbs_mean = est.mean;
                    entry.fbs_std = est.stdev;
                    entry.bootstrap_iterations = est.iterations;
                    entry.redraws = est.redraws;
                }
                entry.status = "completed";
                ledger.append(entry);
                std::lock_guard lock(result_mu);
                ++result.completed;
            } catch (const std::exception& e) {
                entry.status = "failed";
                entry.error = e.what();
                ledger.append(entry);
                std::lock_guard lock(result_mu);
                ++result.failed;
            }
        }
    };

    if (cfg.workers <= 1) {
        for (const auto& g : group_order) run_group(g);
    } else {
        std::mutex queue_mu;
        std::size_t next = 0;
        auto worker = [&] {
            for (;;) {
                std::string g;
                {
                    std::lock_guard lock(queue_mu);
                    if (next >= group_order.size()) return;
                    g = group_order[next++];
                }
                run_group(g);
            }
        };
        std::vector<std::thread> pool;
        const int n = std::min<int>(cfg.workers, static_cast<int>(group_order.size()));
        pool.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& ep : endpoints) result.backend_calls += ep->backend_calls();
    result.ledger_rows = ledger.size();
    return result;
}

} // namespace fbs
