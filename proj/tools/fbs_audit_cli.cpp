// fbs-audit: fairness-audit harness for multi-agent student-outcome
// prediction pipelines. Subcommands cover dataset ingestion, reference-model
// training, grid execution against a mock or HTTP backend, report emission,
// standalone paired bootstraps and synthetic fixture generation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbs_audit/dataset.hpp"
#include "fbs_audit/ml.hpp"
#include "fbs_audit/pipelines.hpp"
#include "fbs_audit/reports.hpp"
#include "fbs_audit/runner.hpp"
#include "fbs_audit/stats.hpp"
#include "fbs_audit/synthetic.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitHardError = 1;

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw fbs::Error("cannot open " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw fbs::Error("cannot write " + p.string());
    out << content;
}

int cmd_ingest(const std::string& csv, const std::string& name, const std::string& out,
               const std::string& split_out, std::uint64_t seed, double test_fraction,
               bool show_stats) {
    fbs::Dataset d = fbs::load_csv(csv, name);
    d.split = fbs::stratified_split(d, seed, test_fraction);
    std::cout << "dataset " << d.name << ": N=" << d.size() << ", features=" << d.schema.size()
              << ", train=" << d.split.train.size() << ", test=" << d.split.test.size() << "\n";
    if (!out.empty()) {
        write_file(out, fbs::to_jsonl(d));
        std::cout << "wrote canonical dump: " << out << "\n";
    }
    if (!split_out.empty()) {
        nlohmann::ordered_json j;
        j["name"] = d.name;
        j["seed"] = seed;
        j["test_fraction"] = test_fraction;
        j["train"] = d.split.train;
        j["test"] = d.split.test;
        write_file(split_out, j.dump(2) + "\n");
        std::cout << "wrote split indices: " << split_out << "\n";
    }
    if (show_stats) std::cout << fbs::compute_stats(d, d.split.train).text;
    return kExitOk;
}

int cmd_train_ml(const std::string& csv, const std::string& dataset, std::uint64_t seed,
                 const std::string& out, const fbs::GbtParams& params, double test_fraction) {
    fbs::Dataset d = fbs::load_csv(csv, dataset);
    d.split = fbs::stratified_split(d, seed, test_fraction);
    const fbs::ModelBundle bundle = fbs::fit_reference_model(d, seed, params);

    long correct = 0;
    for (int id : d.split.test) {
        const double p = bundle.failure_prob(d, id);
        correct += fbs::hard_label(p) == d.records[static_cast<std::size_t>(id)].label;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(d.split.test.size());
    std::cout << "model hash: " << bundle.model.hash() << "\n";
    std::cout << "test accuracy @0.5: " << acc << " (" << d.split.test.size() << " instances)\n";
    if (!out.empty()) {
        write_file(out, bundle.model.to_json() + "\n");
        std::cout << "wrote model: " << out << "\n";
    }
    return kExitOk;
}

int cmd_run(const std::string& config_path, bool resume, const std::string& backend_override) {
    auto cfg = fbs::ExperimentConfig::from_json(nlohmann::json::parse(read_file(config_path)));
    if (!backend_override.empty()) cfg.backend = backend_override;
    const auto grid = fbs::expand_grid(cfg);
    std::cout << "grid: " << grid.size() << " conditions, backend=" << cfg.backend << "\n";
    const fbs::RunResult r = fbs::execute(cfg, resume);
    std::cout << "completed=" << r.completed << " failed=" << r.failed << " skipped=" << r.skipped
              << " backend_calls=" << r.backend_calls << " ledger_rows=" << r.ledger_rows << "\n";
    if (r.failed > 0) std::cout << "some conditions failed; see " << cfg.output_dir << "/ledger.jsonl\n";
    return r.exit_code();
}

int cmd_report(const std::string& ledger_dir) {
    const auto outputs = fbs::emit_reports(ledger_dir);
    for (const auto& f : outputs.files) std::cout << "wrote " << f.string() << "\n";
    return kExitOk;
}

int cmd_bootstrap(const std::string& clean_path, const std::string& exposed_path,
                  const std::string& direction, const std::string& csv, const std::string& name,
                  int iterations, std::uint64_t seed, double max_redraw_rate) {
    const auto clean = fbs::PredictionSet::from_jsonl(read_file(clean_path));
    const auto exposed = fbs::PredictionSet::from_jsonl(read_file(exposed_path));
    const fbs::Dataset d = fbs::load_csv(csv, name);
    std::vector<int> groups;
    groups.reserve(clean.size());
    for (int id : clean.instance_ids)
        groups.push_back(d.records.at(static_cast<std::size_t>(id)).group);

    fbs::BootstrapOptions opt;
    opt.iterations = iterations;
    opt.seed = seed;
    opt.max_redraw_rate = max_redraw_rate;
    const auto est =
        fbs::paired_bootstrap_fbs(clean, exposed, groups, fbs::bias_from_string(direction), opt);
    nlohmann::ordered_json j;
    j["fbs"] = est.point;
    j["fbs_mean"] = est.mean;
    j["fbs_std"] = est.stdev;
    j["B"] = est.iterations;
    j["seed"] = est.seed;
    j["redraws"] = est.redraws;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_synth_data(const std::string& out_dir) {
    fbs::write_fixtures(out_dir);
    std::cout << "wrote " << out_dir << "/student-mat.csv (395 rows)\n";
    std::cout << "wrote " << out_dir << "/student-por.csv (649 rows)\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness-audit harness for multi-agent decision pipelines"};
    app.require_subcommand(1);

    // ingest
    std::string in_csv, in_name, in_out, in_split_out;
    std::uint64_t in_seed = 42;
    double in_fraction = 0.2;
    bool in_stats = false;
    auto* ingest = app.add_subcommand("ingest", "parse a student CSV and report/export it");
    ingest->add_option("csv", in_csv, "semicolon-delimited student CSV")->required();
    ingest->add_option("--name", in_name, "dataset name (math|por)")->required();
    ingest->add_option("--out", in_out, "write canonical JSONL dump here");
    ingest->add_option("--split-out", in_split_out, "write train/test indices as JSON");
    ingest->add_option("--seed", in_seed, "split seed");
    ingest->add_option("--test-fraction", in_fraction, "held-out fraction");
    ingest->add_flag("--stats", in_stats, "print the training-split statistics block");

    // train-ml
    std::string tm_csv, tm_dataset, tm_out;
    std::uint64_t tm_seed = 42;
    double tm_fraction = 0.2;
    fbs::GbtParams tm_params;
    auto* train = app.add_subcommand("train-ml", "fit the reference gradient-boosted model");
    train->add_option("--csv", tm_csv, "student CSV")->required();
    train->add_option("--dataset", tm_dataset, "dataset name")->required();
    train->add_option("--seed", tm_seed, "split + subsampling seed");
    train->add_option("--out", tm_out, "write the serialized model here");
    train->add_option("--stages", tm_params.stages, "boosting stages");
    train->add_option("--depth", tm_params.max_depth, "max tree depth");
    train->add_option("--learning-rate", tm_params.learning_rate, "shrinkage");
    train->add_option("--subsample", tm_params.subsample, "row subsample fraction");
    train->add_option("--test-fraction", tm_fraction, "held-out fraction");

    // run
    std::string run_config, run_backend;
    bool run_resume = false;
    auto* run = app.add_subcommand("run", "execute the experiment grid from a config file");
    run->add_option("--config", run_config, "experiment config JSON")->required();
    run->add_flag("--resume", run_resume, "skip conditions already completed in the ledger");
    run->add_option("--backend", run_backend, "override backend: mock|http")
        ->check(CLI::IsMember({"mock", "http"}));

    // report
    std::string rep_dir;
    auto* report = app.add_subcommand("report", "emit tables and CSVs from a run directory");
    report->add_option("--ledger", rep_dir, "run directory containing ledger.jsonl")->required();

    // bootstrap
    std::string bs_clean, bs_exposed, bs_direction, bs_csv, bs_name;
    int bs_iterations = 10000;
    std::uint64_t bs_seed = 42;
    double bs_redraw = 0.01;
    auto* boot = app.add_subcommand("bootstrap", "paired bootstrap over two prediction sets");
    boot->add_option("--clean", bs_clean, "clean prediction set JSONL")->required();
    boot->add_option("--exposed", bs_exposed, "exposed prediction set JSONL")->required();
    boot->add_option("--direction", bs_direction, "pro_female|pro_male")->required();
    boot->add_option("--csv", bs_csv, "student CSV (source of instance groups)")->required();
    boot->add_option("--name", bs_name, "dataset name")->required();
    boot->add_option("--iterations", bs_iterations, "bootstrap iterations");
    boot->add_option("--seed", bs_seed, "bootstrap RNG seed");
    boot->add_option("--max-redraw-rate", bs_redraw, "tolerated empty-group redraw rate");

    // synth-data
    std::string sd_dir = "data";
    auto* synth = app.add_subcommand("synth-data", "write deterministic schema-exact fixtures");
    synth->add_option("--out-dir", sd_dir, "target directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest)
            return cmd_ingest(in_csv, in_name, in_out, in_split_out, in_seed, in_fraction, in_stats);
        if (*train)
            return cmd_train_ml(tm_csv, tm_dataset, tm_seed, tm_out, tm_params, tm_fraction);
        if (*run) return cmd_run(run_config, run_resume, run_backend);
        if (*report) return cmd_report(rep_dir);
        if (*boot)
            return cmd_bootstrap(bs_clean, bs_exposed, bs_direction, bs_csv, bs_name, bs_iterations,
                                 bs_seed, bs_redraw);
        if (*synth) return cmd_synth_data(sd_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitHardError;
    }
    return kExitHardError;
}
