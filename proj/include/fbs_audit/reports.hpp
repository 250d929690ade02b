#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fbs_audit/csv.hpp"
#include "fbs_audit/runner.hpp"

namespace fbs {

namespace report_detail {

// Exact round-trip float formatting for the flat CSV.
inline std::string fmt_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt_exact(*v) : std::string{};
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

} // namespace report_detail

inline const std::vector<std::string>& report_csv_columns() {
    static const std::vector<std::string> cols = {
        "dataset",   "pipeline", "targets",  "direction",         "model",
        "seed",      "status",   "key",      "baseline_key",      "dp",
        "eo",        "auc",      "acc",      "rate0",             "rate1",
        "disagreement_rate",     "fbs",      "fbs_fav",           "fbs_disfav",
        "fbs_mean",  "fbs_std",  "B",                             "redraws",
        "error"};
    return cols;
}

inline std::string report_rows_csv(const std::vector<LedgerEntry>& rows) {
    using report_detail::csv_escape;
    using report_detail::fmt_exact;
    using report_detail::fmt_opt;
    std::string out;
    const auto& cols = report_csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += "\n";
    for (const auto& e : rows) {
        std::vector<std::string> f = {
            e.dataset, e.pipeline, e.targets, e.direction, e.model, std::to_string(e.seed),
            e.status, e.key, e.baseline_key, fmt_exact(e.dp), fmt_exact(e.eo), fmt_exact(e.auc),
            fmt_exact(e.acc), fmt_exact(e.rate0), fmt_exact(e.rate1), fmt_opt(e.disagreement),
            fmt_opt(e.fbs), fmt_opt(e.fbs_fav), fmt_opt(e.fbs_disfav), fmt_opt(e.fbs_mean),
            fmt_opt(e.fbs_std), std::to_string(e.bootstrap_iterations), std::to_string(e.redraws),
            e.error};
        for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + csv_escape(f[i]);
        out += "\n";
    }
    return out;
}

inline std::vector<LedgerEntry> parse_report_rows_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("report csv: empty", text.substr(0, 64));
    std::vector<LedgerEntry> rows;
    long n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line, ',', n);
        if (f.size() != report_csv_columns().size())
            throw CsvError("report csv: wrong column count", n);
        LedgerEntry e;
        std::size_t i = 0;
        auto opt = [&](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::strtod(s.c_str(), nullptr);
        };
        e.dataset = f[i++];
        e.pipeline = f[i++];
        e.targets = f[i++];
        e.direction = f[i++];
        e.model = f[i++];
        e.seed = std::stoull(f[i++]);
        e.status = f[i++];
        e.key = f[i++];
        e.baseline_key = f[i++];
        e.dp = std::strtod(f[i++].c_str(), nullptr);
        e.eo = std::strtod(f[i++].c_str(), nullptr);
        e.auc = std::strtod(f[i++].c_str(), nullptr);
        e.acc = std::strtod(f[i++].c_str(), nullptr);
        e.rate0 = std::strtod(f[i++].c_str(), nullptr);
        e.rate1 = std::strtod(f[i++].c_str(), nullptr);
        e.disagreement = opt(f[i++]);
        e.fbs = opt(f[i++]);
        e.fbs_fav = opt(f[i++]);
        e.fbs_disfav = opt(f[i++]);
        e.fbs_mean = opt(f[i++]);
        e.fbs_std = opt(f[i++]);
        e.bootstrap_iterations = std::stoi(f[i++]);
        e.redraws = std::stol(f[i++]);
        e.error = f[i++];
        rows.push_back(std::move(e));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Aggregation across seeds
// ---------------------------------------------------------------------------

// One (dataset, pipeline, targets, direction, model) cell pooled over seeds.
struct AggregateCell {
    std::string dataset, pipeline, targets, direction, model;
    double fbs = 0;      // mean of per-seed FBS point estimates
    double fbs_std = 0;  // pooled-bootstrap std, or combined per-seed stds
    double auc = 0;      // mean over seeds
    double acc = 0;
    int seeds = 0;
};

namespace report_detail {

struct PairKey {
    std::string dataset, pipeline, targets, direction, model;
    bool operator<(const PairKey& o) const {
        return std::tie(dataset, pipeline, targets, direction, model) <
               std::tie(o.dataset, o.pipeline, o.targets, o.direction, o.model);
    }
};

inline PredictionSet load_predset(const std::filesystem::path& run_dir, const std::string& key) {
    const auto path = run_dir / "predsets" / (sanitize_filename(key) + ".jsonl");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("report: missing prediction set " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return PredictionSet::from_jsonl(buf.str());
}

} // namespace report_detail

// Pools each exposed pairing across its seeds. In "pooled" mode the
// uncertainty comes from one paired bootstrap over the seeds' stacked
// (clean, exposed) hard labels; in "averaged" mode per-seed bootstrap
// variances combine as the variance of the mean. The point estimate is the
// arithmetic mean of per-seed FBS either way (seeds share one test-split
// size, so this equals the stacked-rate computation).
inline std::vector<AggregateCell> aggregate_pairings(const std::filesystem::path& run_dir,
                                                     const ExperimentConfig& cfg,
                                                     const std::vector<LedgerEntry>& rows) {
    std::map<report_detail::PairKey, std::vector<const LedgerEntry*>> by_pair;
    for (const auto& e : rows) {
        if (e.status != "completed" || !e.fbs.has_value()) continue;
        by_pair[{e.dataset, e.pipeline, e.targets, e.direction, e.model}].push_back(&e);
    }

    std::map<std::string, Dataset> datasets;
    auto groups_of = [&](const std::string& name) -> const Dataset& {
        auto it = datasets.find(name);
        if (it == datasets.end()) {
            for (const auto& d : cfg.datasets)
                if (d.name == name) {
                    it = datasets.emplace(name, load_csv(d.csv, d.name)).first;
                    break;
                }
            if (it == datasets.end()) throw ConfigError("report: dataset not in config: " + name);
        }
        return it->second;
    };

    std::vector<AggregateCell> cells;
    for (const auto& [key, entries] : by_pair) {
        AggregateCell cell;
        cell.dataset = key.dataset;
        cell.pipeline = key.pipeline;
        cell.targets = key.targets;
        cell.direction = key.direction;
        cell.model = key.model;
        cell.seeds = static_cast<int>(entries.size());

        std::vector<const LedgerEntry*> sorted(entries);
        std::sort(sorted.begin(), sorted.end(),
                  [](const LedgerEntry* a, const LedgerEntry* b) { return a->seed < b->seed; });

        double fbs_sum = 0, auc_sum = 0, acc_sum = 0, var_sum = 0;
        std::vector<stats_detail::PairedRow> stacked;
        std::uint64_t min_seed = ~0ull;
        for (const auto* e : sorted) {
            fbs_sum += *e->fbs;
            auc_sum += e->auc;
            acc_sum += e->acc;
            var_sum += *e->fbs_std * *e->fbs_std;
            min_seed = std::min(min_seed, e->seed);
            if (cfg.aggregation == "pooled") {
                const auto clean = report_detail::load_predset(run_dir, e->baseline_key);
                const auto exposed = report_detail::load_predset(run_dir, e->key);
                const auto& data = groups_of(e->dataset);
                for (std::size_t i = 0; i < clean.size(); ++i)
                    stacked.push_back(
                        {clean.hard[i], exposed.hard[i],
                         data.records[static_cast<std::size_t>(clean.instance_ids[i])].group});
            }
        }
        const double n = static_cast<double>(sorted.size());
        cell.fbs = fbs_sum / n;
        cell.auc = auc_sum / n;
        cell.acc = acc_sum / n;
        if (cfg.aggregation == "pooled") {
            BootstrapOptions opt;
            opt.iterations = cfg.bootstrap_iterations;
            opt.seed = min_seed;
            cell.fbs_std =
                paired_bootstrap_fbs(stacked, bias_from_string(key.direction), opt).stdev;
        } else {
            cell.fbs_std = std::sqrt(var_sum) / n;
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Markdown table (one per dataset) and scatter CSVs (one per pipeline)
// ---------------------------------------------------------------------------

namespace report_detail {

inline std::vector<std::string> target_order_for(PipelineId p, bool power_set) {
    std::vector<std::string> out;
    for (const auto& t : target_sets(p, power_set)) {
        Condition c;
        c.targets = t;
        c.direction = BiasDirection::ProFemale;
        out.push_back(c.targets_label());
    }
    return out;
}

} // namespace report_detail

// Per-dataset markdown table: one row per (pipeline, exposed agents,
// direction), one column per model, cells are FBS mean ± std with the best
// (highest) FBS per (pipeline, direction) block bolded per column.
inline std::string render_table_markdown(const std::string& dataset, const ExperimentConfig& cfg,
                                         const std::vector<AggregateCell>& cells) {
    std::map<std::string, const AggregateCell*> lookup;  // pipeline|targets|direction|model
    for (const auto& c : cells) {
        if (c.dataset != dataset) continue;
        lookup[c.pipeline + "|" + c.targets + "|" + c.direction + "|" + c.model] = &c;
    }

    std::string out;
    out += "# FBS report: " + dataset + "\n\n";
    out += "Cells are FBS mean ± bootstrap std aggregated over " +
           std::to_string(cfg.seeds.size()) + " seed(s), aggregation mode `" + cfg.aggregation +
           "`. Bold marks the strongest exposure per (pipeline, direction) block and model.\n\n";
    out += "| Pipeline | Exposed Agents | Bias Direction |";
    for (const auto& m : cfg.models) out += " " + m + " |";
    out += "\n|---|---|---|";
    for (std::size_t i = 0; i < cfg.models.size(); ++i) out += "---|";
    out += "\n";

    for (PipelineId p : {PipelineId::E0, PipelineId::E1, PipelineId::E2}) {
        if (std::find(cfg.pipelines.begin(), cfg.pipelines.end(), p) == cfg.pipelines.end())
            continue;
        const auto targets = report_detail::target_order_for(p, cfg.e2_power_set);
        for (const std::string direction : {"pro_female", "pro_male"}) {
            bool any_direction = false;
            for (const auto& d : cfg.directions)
                any_direction |= to_string(d) == direction;
            if (!any_direction) continue;

            // Column-wise best FBS in this (pipeline, direction) block.
            std::map<std::string, double> best;
            for (const auto& m : cfg.models) {
                for (const auto& t : targets) {
                    auto it = lookup.find(to_string(p) + "|" + t + "|" + direction + "|" + m);
                    if (it == lookup.end()) continue;
                    auto b = best.find(m);
                    if (b == best.end() || it->second->fbs > b->second) best[m] = it->second->fbs;
                }
            }

            for (const auto& t : targets) {
                bool row_has_data = false;
                std::string row = "| " + to_string(p) + " | " + t + " | " + direction + " |";
                for (const auto& m : cfg.models) {
                    auto it = lookup.find(to_string(p) + "|" + t + "|" + direction + "|" + m);
                    if (it == lookup.end()) {
                        row += " n/a |";
                        continue;
                    }
                    row_has_data = true;
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%+.3f ± %.3f", it->second->fbs,
                                  it->second->fbs_std);
                    const bool bold = best.count(m) && it->second->fbs == best[m];
                    row += bold ? " **" + std::string(buf) + "** |" : " " + std::string(buf) + " |";
                }
                if (row_has_data) out += row + "\n";
            }
        }
    }
    return out;
}

// Scatter data for external plotting: one CSV per (dataset, pipeline) with
// both exposed aggregates and the clean baselines (FBS pinned at 0).
inline std::string render_scatter_csv(const std::string& dataset, const std::string& pipeline,
                                      const std::vector<AggregateCell>& cells,
                                      const std::vector<LedgerEntry>& rows) {
    std::string out = "model,direction,target,fbs,fbs_std,auc,acc\n";
    using report_detail::fmt_exact;
    // Clean baselines: mean auc/acc over seeds.
    std::map<std::string, std::pair<double, int>> clean_auc, clean_acc;
    for (const auto& e : rows) {
        if (e.status != "completed" || e.direction != "none") continue;
        if (e.dataset != dataset || e.pipeline != pipeline) continue;
        clean_auc[e.model].first += e.auc;
        clean_auc[e.model].second += 1;
        clean_acc[e.model].first += e.acc;
        clean_acc[e.model].second += 1;
    }
    for (const auto& [model, a] : clean_auc) {
        out += model + ",none,none,0,0," + fmt_exact(a.first / a.second) + "," +
               fmt_exact(clean_acc[model].first / clean_acc[model].second) + "\n";
    }
    for (const auto& c : cells) {
        if (c.dataset != dataset || c.pipeline != pipeline) continue;
        out += c.model + "," + c.direction + "," + c.targets + "," + fmt_exact(c.fbs) + "," +
               fmt_exact(c.fbs_std) + "," + fmt_exact(c.auc) + "," + fmt_exact(c.acc) + "\n";
    }
    return out;
}

struct ReportOutputs {
    std::vector<std::filesystem::path> files;
    std::vector<AggregateCell> cells;
};

// Reads a run directory (ledger + run_config + prediction sets) and writes the
// flat rows CSV, one markdown table per dataset and one scatter CSV per
// (dataset, pipeline).
inline ReportOutputs emit_reports(const std::filesystem::path& run_dir) {
    std::ifstream cfg_in(run_dir / "run_config.json", std::ios::binary);
    if (!cfg_in) throw Error("report: missing run_config.json in " + run_dir.string());
    const auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(cfg_in));

    RunLedger ledger(run_dir);
    const auto rows = ledger.rows();

    bool any_pairing = false;
    for (const auto& e : rows)
        any_pairing |= e.status == "completed" && e.fbs.has_value();
    if (!any_pairing) throw Error("report: ledger has no completed pairing");

    ReportOutputs outputs;
    outputs.cells = aggregate_pairings(run_dir, cfg, rows);

    auto write = [&](const std::filesystem::path& p, const std::string& content) {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw Error("report: cannot write " + p.string());
        f << content;
        outputs.files.push_back(p);
    };

    write(run_dir / "report_rows.csv", report_rows_csv(rows));
    for (const auto& ds : cfg.datasets) {
        write(run_dir / ("table_" + ds.name + ".md"),
              render_table_markdown(ds.name, cfg, outputs.cells));
        for (PipelineId p : cfg.pipelines) {
            write(run_dir / ("scatter_" + ds.name + "_" + to_string(p) + ".csv"),
                  render_scatter_csv(ds.name, to_string(p), outputs.cells, rows));
        }
    }
    return outputs;
}

} // namespace fbs
