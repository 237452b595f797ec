#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "echo/runner.hpp"

namespace {

std::vector<echo::RephraseStructure> parse_structures(const std::string& csv) {
    std::vector<echo::RephraseStructure> out;
    std::stringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(echo::rephrase_structure_from_string(item));
    }
    if (out.empty()) throw std::runtime_error("no rephrase structures given");
    return out;
}

int cmd_run(const std::string& config_path) {
    auto config = echo::load_experiment_config(config_path);
    const std::string run_dir = echo::run_experiment(config);
    std::cout << "run complete: " << run_dir << "\n";
    std::ifstream report(run_dir + "/report.md");
    std::cout << report.rdbuf();
    return 0;
}

int cmd_validate(const std::string& config_path) {
    auto config = echo::load_experiment_config(config_path);
    echo::validate_experiment_config(config);
    for (const auto& m : config.methods) {
        if (m.exemplar_set) echo::load_bundled_exemplars(*m.exemplar_set);
    }
    std::cout << "config ok: " << config.run_name << " (" << config.datasets.size()
              << " datasets x " << config.methods.size() << " methods)\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    echo::render_report(run_dir);
    std::ifstream report(run_dir + "/report.md");
    if (!report) throw std::runtime_error("no report.md under " + run_dir);
    std::cout << report.rdbuf();
    return 0;
}

int cmd_gen_coinflip(int n, int flips, long long seed, const std::string& out) {
    auto dataset = echo::generate_coin_flip(n, flips, static_cast<std::uint64_t>(seed));
    echo::save_native_jsonl(dataset, out);
    std::cout << "wrote " << dataset.queries.size() << " queries to " << out << "\n";
    return 0;
}

int cmd_rephrase_exemplars(const std::string& set_path, const std::string& structures_csv,
                           const std::string& out, const std::string& backend_config,
                           const std::string& model_override) {
    auto set = echo::load_bundled_exemplars(set_path);
    auto structures = parse_structures(structures_csv);

    auto config = echo::load_experiment_config(backend_config);
    auto backend = echo::make_backend(config.backend);
    const std::string model = model_override.empty() ? config.model : model_override;

    echo::RephraseGenReport report;
    auto rephrased = echo::generate_exemplar_rephrases(set, structures, *backend, model, &report);
    echo::save_exemplar_set(rephrased, out);
    std::cout << "wrote " << rephrased.exemplars.size() << " exemplars to " << out << " ("
              << report.backend_calls << " backend calls)\n";
    if (!report.complete()) {
        std::cout << "incomplete: " << report.empty_cells.size() << " empty cells\n";
        for (const auto& cell : report.empty_cells) std::cout << "  " << cell << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EchoPrompt evaluation harness"};
    app.require_subcommand(1);

    std::string data_dir;
    app.add_option("--data-dir", data_dir, "Override the bundled data directory");

    std::string run_config;
    auto* run = app.add_subcommand("run", "Run a method x dataset experiment grid");
    run->add_option("config", run_config, "Experiment config (JSON)")->required();

    std::string validate_config;
    auto* validate = app.add_subcommand("validate", "Validate a config without running it");
    validate->add_option("config", validate_config, "Experiment config (JSON)")->required();

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Re-render the report for a finished run");
    report->add_option("run_dir", report_dir, "Run directory")->required();

    int cf_n = 0;
    int cf_flips = 2;
    long long cf_seed = 0;
    std::string cf_out;
    auto* coinflip = app.add_subcommand("gen-coinflip", "Generate a coin-flip dataset");
    coinflip->add_option("--n", cf_n, "Number of samples")->required();
    coinflip->add_option("--flips", cf_flips, "People per sample");
    coinflip->add_option("--seed", cf_seed, "Generation seed");
    coinflip->add_option("--out", cf_out, "Output path (native JSONL)")->required();

    std::string rx_set;
    std::string rx_structures = "compound,question_first,simple";
    std::string rx_out;
    std::string rx_config;
    std::string rx_model;
    auto* rephrase = app.add_subcommand("rephrase-exemplars",
                                        "Generate exemplar rephrases through a backend");
    rephrase->add_option("set", rx_set, "Exemplar set name or path")->required();
    rephrase->add_option("--structures", rx_structures, "Comma-separated structures");
    rephrase->add_option("--out", rx_out, "Output exemplar file")->required();
    rephrase->add_option("--config", rx_config, "Experiment config supplying the backend")
        ->required();
    rephrase->add_option("--model", rx_model, "Model name override");

    CLI11_PARSE(app, argc, argv);
    if (!data_dir.empty()) echo::set_data_dir(data_dir);

    try {
        if (run->parsed()) return cmd_run(run_config);
        if (validate->parsed()) return cmd_validate(validate_config);
        if (report->parsed()) return cmd_report(report_dir);
        if (coinflip->parsed()) return cmd_gen_coinflip(cf_n, cf_flips, cf_seed, cf_out);
        if (rephrase->parsed())
            return cmd_rephrase_exemplars(rx_set, rx_structures, rx_out, rx_config, rx_model);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
