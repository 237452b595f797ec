#pragma once

#include <optional>
#include <string>
#include <vector>

#include "echo/ablation.hpp"
#include "echo/harness.hpp"

namespace echo {

struct CoinFlipSpec {
    int n = 0;
    int flips_per_sample = 2;
    std::uint64_t seed = 0;
};

struct DatasetEntry {
    std::string name;
    std::string path;                      // empty when generated
    DatasetSchema schema = DatasetSchema::native_jsonl;
    std::optional<DropSubset> subset;      // applied after loading
    std::optional<CoinFlipSpec> generator;
    bool gsmic = false;                    // load via the GSMIC adapter
};

struct ExperimentConfig {
    std::string run_name;
    BackendSpec backend;
    std::string model = "default";
    std::vector<DatasetEntry> datasets;
    std::vector<MethodConfig> methods;  // preset ids already resolved
    std::string baseline_method;
    int max_in_flight = 4;
    long long seed = 0;
    std::string output_dir = "runs";
    double abort_error_rate = 0.5;  // abort when a cell exceeds this failure rate
};

ExperimentConfig load_experiment_config(const std::string& path);
void validate_experiment_config(const ExperimentConfig& config);

Dataset load_dataset_entry(const DatasetEntry& entry);

// Runs every (dataset, method) cell, persists transcripts.jsonl,
// results.jsonl and the report files under output_dir/run_name, and returns
// that directory.  Deterministic (byte-identical outputs) for scripted and
// cached backends.
std::string run_experiment(const ExperimentConfig& config);

struct RephraseGenReport {
    int backend_calls = 0;
    std::vector<std::string> empty_cells;  // "question / structure" labels
    bool complete() const { return empty_cells.empty(); }
};

// Fills the requested rephrase structures of every exemplar via the rephrase
// generation prompts; repeat entries are the question itself, no model call.
ExemplarSet generate_exemplar_rephrases(const ExemplarSet& set,
                                        const std::vector<RephraseStructure>& structures,
                                        Backend& backend, const std::string& model,
                                        RephraseGenReport* report = nullptr);

// Rebuilds report.md and report.csv from the persisted results; renders what
// exists and flags gaps.
void render_report(const std::string& run_dir);

}  // namespace echo
