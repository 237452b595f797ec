#include "echo/runner.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace echo {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return doc;
}

BackendSpec backend_from_json(const json& rec, const std::string& config_dir) {
    BackendSpec spec;
    const std::string kind = rec.value("kind", std::string("scripted"));
    if (kind == "http") spec.kind = BackendKind::http;
    else if (kind == "scripted") spec.kind = BackendKind::scripted;
    else if (kind == "replay") spec.kind = BackendKind::replay;
    else throw std::runtime_error("unknown backend kind: " + kind);

    if (rec.contains("endpoint")) spec.endpoint = rec.at("endpoint").get<std::string>();
    if (rec.contains("script")) {
        std::vector<ScriptEntry> script;
        for (const auto& e : rec.at("script")) {
            ScriptEntry entry;
            entry.matcher = e.value("matcher", std::string("substring")) == "exact"
                                ? ScriptEntry::Matcher::exact
                                : ScriptEntry::Matcher::substring;
            entry.pattern = e.at("pattern").get<std::string>();
            entry.response = e.at("response").get<std::string>();
            script.push_back(std::move(entry));
        }
        spec.script = std::move(script);
    } else if (rec.contains("script_path")) {
        std::string path = rec.at("script_path").get<std::string>();
        if (!fs::path(path).is_absolute()) path = config_dir + "/" + path;
        spec.script = load_script(path);
    }
    if (rec.contains("cache_dir")) spec.cache_dir = rec.at("cache_dir").get<std::string>();
    spec.api_key_env = rec.value("api_key_env", std::string());
    return spec;
}

MethodConfig method_from_json(const json& entry) {
    if (entry.is_string()) return preset(entry.get<std::string>());
    // Inline configs may start from a preset and override fields.
    MethodConfig c;
    if (entry.contains("preset")) c = preset(entry.at("preset").get<std::string>());
    if (entry.contains("id")) {
        if (!entry.contains("preset") && preset_catalog().count(entry.at("id").get<std::string>()) &&
            entry.size() > 1) {
            c = preset(entry.at("id").get<std::string>());
        }
        c.id = entry.at("id").get<std::string>();
    }
    if (entry.contains("shot_mode"))
        c.shot_mode = entry.at("shot_mode").get<std::string>() == "few_shot" ? ShotMode::few_shot
                                                                             : ShotMode::zero_shot;
    if (entry.contains("reasoning"))
        c.reasoning = entry.at("reasoning").get<std::string>() == "cot" ? Reasoning::cot
                                                                        : Reasoning::standard;
    if (entry.contains("echo")) {
        if (entry.at("echo").is_null()) c.echo.reset();
        else c.echo = rephrase_structure_from_string(entry.at("echo").get<std::string>());
    }
    if (entry.contains("stage1_template"))
        c.stage1_template = entry.at("stage1_template").get<std::string>();
    if (entry.contains("extraction_template"))
        c.extraction_template = entry.at("extraction_template").get<std::string>();
    if (entry.contains("num_rephrases")) c.num_rephrases = entry.at("num_rephrases").get<int>();
    if (entry.contains("quoted_repetition"))
        c.quoted_repetition = entry.at("quoted_repetition").get<bool>();
    if (entry.contains("exemplar_set")) {
        if (entry.at("exemplar_set").is_null()) c.exemplar_set.reset();
        else c.exemplar_set = entry.at("exemplar_set").get<std::string>();
    }
    if (c.id.empty()) throw std::runtime_error("inline method config needs an id");
    return c;
}

DatasetEntry dataset_entry_from_json(const json& rec, const std::string& config_dir,
                                     std::uint64_t default_seed) {
    DatasetEntry entry;
    entry.name = rec.at("name").get<std::string>();
    if (rec.contains("generator")) {
        const auto& gen = rec.at("generator");
        CoinFlipSpec spec;
        spec.n = gen.at("n").get<int>();
        spec.flips_per_sample = gen.value("flips_per_sample", gen.value("flips", 2));
        spec.seed = gen.value("seed", default_seed);  // run seed unless pinned
        entry.generator = spec;
        return entry;
    }
    entry.path = rec.at("path").get<std::string>();
    if (!fs::path(entry.path).is_absolute()) entry.path = config_dir + "/" + entry.path;
    const std::string schema = rec.value("schema", std::string("native_jsonl"));
    if (schema == "gsmic") {
        entry.gsmic = true;
    } else {
        entry.schema = schema_from_string(schema);
    }
    if (rec.contains("subset")) {
        const std::string subset = rec.at("subset").get<std::string>();
        if (subset == "football") entry.subset = DropSubset::football;
        else if (subset == "census") entry.subset = DropSubset::census;
        else throw std::runtime_error("unknown drop subset: " + subset);
    }
    return entry;
}

bool filesystem_safe(const std::string& name) {
    if (name.empty()) return false;
    return std::all_of(name.begin(), name.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_' || c == '.';
    });
}

json method_to_json(const MethodConfig& c) {
    json rec;
    rec["id"] = c.id;
    rec["shot_mode"] = c.shot_mode == ShotMode::few_shot ? "few_shot" : "zero_shot";
    rec["reasoning"] = c.reasoning == Reasoning::cot ? "cot" : "standard";
    if (c.echo) rec["echo"] = to_string(*c.echo);
    rec["stage1_template"] = c.stage1_template;
    rec["extraction_template"] = c.extraction_template;
    rec["num_rephrases"] = c.num_rephrases;
    rec["quoted_repetition"] = c.quoted_repetition;
    if (c.exemplar_set) rec["exemplar_set"] = *c.exemplar_set;
    return rec;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    const json doc = read_json_file(path);
    const std::string config_dir = fs::path(path).has_parent_path()
                                       ? fs::path(path).parent_path().string()
                                       : std::string(".");
    ExperimentConfig config;
    config.run_name = doc.at("run_name").get<std::string>();
    config.backend = backend_from_json(doc.at("backend"), config_dir);
    config.model = doc.value("model", std::string("default"));
    config.seed = doc.value("seed", 0);
    for (const auto& d : doc.at("datasets"))
        config.datasets.push_back(
            dataset_entry_from_json(d, config_dir, static_cast<std::uint64_t>(config.seed)));
    for (const auto& m : doc.at("methods")) config.methods.push_back(method_from_json(m));
    config.baseline_method = doc.value("baseline_method", std::string());
    if (config.baseline_method.empty() && !config.methods.empty())
        config.baseline_method = config.methods.front().id;
    config.max_in_flight = doc.value("max_in_flight", 4);
    config.output_dir = doc.value("output_dir", std::string("runs"));
    if (!fs::path(config.output_dir).is_absolute())
        config.output_dir = config_dir + "/" + config.output_dir;
    config.abort_error_rate = doc.value("abort_error_rate", 0.5);
    return config;
}

void validate_experiment_config(const ExperimentConfig& config) {
    if (!filesystem_safe(config.run_name))
        throw std::runtime_error("run_name must be non-empty and filesystem-safe: '" +
                                 config.run_name + "'");
    if (config.methods.empty()) throw std::runtime_error("config lists no methods");
    if (config.datasets.empty()) throw std::runtime_error("config lists no datasets");
    if (config.max_in_flight < 1) throw std::runtime_error("max_in_flight must be >= 1");

    std::set<std::string> method_ids;
    for (const auto& m : config.methods) {
        validate_method_config(m);
        if (!method_ids.insert(m.id).second)
            throw std::runtime_error("duplicate method id " + m.id);
    }
    if (!method_ids.count(config.baseline_method))
        throw std::runtime_error("baseline_method " + config.baseline_method +
                                 " is not among the configured methods");

    std::set<std::string> dataset_names;
    for (const auto& d : config.datasets) {
        if (!dataset_names.insert(d.name).second)
            throw std::runtime_error("duplicate dataset name " + d.name);
        if (!d.generator && !fs::exists(d.path))
            throw std::runtime_error("dataset file not found: " + d.path);
    }
    if (config.backend.kind == BackendKind::scripted && !config.backend.script)
        throw std::runtime_error("scripted backend needs a script");
    if (config.backend.kind == BackendKind::http && !config.backend.endpoint)
        throw std::runtime_error("http backend needs an endpoint");
}

Dataset load_dataset_entry(const DatasetEntry& entry) {
    Dataset d;
    if (entry.generator) {
        d = generate_coin_flip(entry.generator->n, entry.generator->flips_per_sample,
                               entry.generator->seed);
    } else if (entry.gsmic) {
        d = load_gsmic(entry.path);
    } else {
        d = load_queries(entry.path, entry.schema);
    }
    if (entry.subset) {
        d.queries = filter_drop_subset(d.queries, *entry.subset);
    }
    d.name = entry.name;
    return d;
}

namespace {

json grade_to_json(const Grade& g) {
    json rec;
    if (g.correct) rec["correct"] = *g.correct;
    if (g.f1) rec["f1"] = *g.f1;
    if (g.matched_gold) rec["matched_gold"] = *g.matched_gold;
    return rec;
}

json transcript_to_json(const Transcript& t) {
    json stages = json::array();
    for (const auto& s : t.stages) {
        stages.push_back({{"prompt", s.prompt},
                          {"completion", s.completion},
                          {"finish_reason", to_string(s.finish_reason)},
                          {"prompt_tokens", s.prompt_tokens},
                          {"completion_tokens", s.completion_tokens}});
    }
    json rec;
    rec["query_id"] = t.query_id;
    rec["method_id"] = t.method_id;
    rec["dataset"] = t.dataset;
    rec["stages"] = stages;
    rec["rephrases"] = t.parsed.rephrases;
    rec["reasoning"] = t.parsed.reasoning;
    rec["raw_answer"] = t.parsed.raw_answer;
    if (t.parsed.answer) rec["answer"] = t.parsed.answer->text;
    rec["grade"] = grade_to_json(t.grade);
    rec["wall_time_ms"] = t.wall_time_ms;
    return rec;
}

json result_to_json(const MethodResult& r) {
    json rec;
    rec["method_id"] = r.method_id;
    rec["dataset"] = r.dataset;
    rec["n"] = r.n;
    if (r.accuracy) rec["accuracy"] = *r.accuracy;
    if (r.mean_f1) rec["mean_f1"] = *r.mean_f1;
    rec["transcripts_ref"] = r.transcripts_ref;
    return rec;
}

MethodResult result_from_json(const json& rec) {
    MethodResult r;
    r.method_id = rec.at("method_id").get<std::string>();
    r.dataset = rec.at("dataset").get<std::string>();
    r.n = rec.at("n").get<int>();
    if (rec.contains("accuracy")) r.accuracy = rec.at("accuracy").get<double>();
    if (rec.contains("mean_f1")) r.mean_f1 = rec.at("mean_f1").get<double>();
    r.transcripts_ref = rec.value("transcripts_ref", std::string());
    return r;
}

}  // namespace

std::string run_experiment(const ExperimentConfig& config) {
    validate_experiment_config(config);

    std::vector<Dataset> datasets;
    datasets.reserve(config.datasets.size());
    for (const auto& entry : config.datasets) datasets.push_back(load_dataset_entry(entry));

    // Few-shot exemplar sets resolve once, before any model call.
    std::map<std::string, ExemplarSet> exemplar_cache;
    for (const auto& m : config.methods) {
        if (m.exemplar_set && !exemplar_cache.count(*m.exemplar_set))
            exemplar_cache[*m.exemplar_set] = load_bundled_exemplars(*m.exemplar_set);
    }

    const fs::path run_dir = fs::path(config.output_dir) / config.run_name;
    fs::create_directories(run_dir);

    {
        json doc;
        doc["run_name"] = config.run_name;
        doc["model"] = config.model;
        doc["baseline_method"] = config.baseline_method;
        json methods = json::array();
        for (const auto& m : config.methods) methods.push_back(method_to_json(m));
        doc["methods"] = methods;
        json names = json::array();
        for (const auto& d : config.datasets) names.push_back(d.name);
        doc["datasets"] = names;
        std::ofstream out(run_dir / "run_config.json", std::ios::trunc);
        out << doc.dump(2) << "\n";
    }

    auto backend = make_backend(config.backend);
    EvalOptions opts;
    opts.model = config.model;
    opts.max_in_flight = config.max_in_flight;
    opts.hermetic_timing = config.backend.kind != BackendKind::http;

    std::ofstream transcripts(run_dir / "transcripts.jsonl", std::ios::trunc);
    std::ofstream results(run_dir / "results.jsonl", std::ios::trunc);
    if (!transcripts || !results)
        throw std::runtime_error("cannot write outputs under " + run_dir.string());

    for (const auto& dataset : datasets) {
        for (const auto& method : config.methods) {
            const ExemplarSet* exemplars =
                method.exemplar_set ? &exemplar_cache.at(*method.exemplar_set) : nullptr;
            EvalOutcome outcome = evaluate_method(dataset, method, exemplars, *backend, opts);
            const double error_rate = dataset.queries.empty()
                                          ? 0.0
                                          : static_cast<double>(outcome.errors) /
                                                static_cast<double>(dataset.queries.size());
            if (error_rate > config.abort_error_rate)
                throw std::runtime_error("backend failure rate " + std::to_string(error_rate) +
                                         " on " + dataset.name + "/" + method.id +
                                         " exceeds the abort threshold");
            for (const auto& t : outcome.transcripts)
                transcripts << transcript_to_json(t).dump() << "\n";
            results << result_to_json(outcome.result).dump() << "\n";
        }
    }
    transcripts.close();
    results.close();

    render_report(run_dir.string());
    return run_dir.string();
}

ExemplarSet generate_exemplar_rephrases(const ExemplarSet& set,
                                        const std::vector<RephraseStructure>& structures,
                                        Backend& backend, const std::string& model,
                                        RephraseGenReport* report) {
    ExemplarSet out = set;
    RephraseGenReport local;
    RephraseGenReport* rep = report ? report : &local;

    for (auto& ex : out.exemplars) {
        for (RephraseStructure structure : structures) {
            if (structure == RephraseStructure::repeat) {
                ex.rephrases[RephraseStructure::repeat] = ex.question;
                continue;
            }
            ex.rephrases.erase(structure);  // an empty completion leaves the cell blank
            const auto prompt = rephrase_generation_prompt(ex.question, structure);
            CompletionRequest req{model, *prompt, DecodeParams{256, 0.0, {"\n\n"}},
                                  "rephrase-exemplars/" + to_string(structure)};
            CompletionResponse resp;
            try {
                resp = backend.complete(req);
            } catch (const std::exception&) {
                resp.finish_reason = FinishReason::error;
            }
            ++rep->backend_calls;
            std::string text = resp.text;
            auto b = text.find_first_not_of(" \t\r\n");
            auto e = text.find_last_not_of(" \t\r\n");
            text = b == std::string::npos ? "" : text.substr(b, e - b + 1);
            if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
                text = text.substr(1, text.size() - 2);
            if (resp.finish_reason == FinishReason::error || text.empty()) {
                rep->empty_cells.push_back(ex.question.substr(0, 40) + " / " +
                                           to_string(structure));
                continue;  // cell left blank, set reported incomplete
            }
            ex.rephrases[structure] = text;
        }
        ex.rephrases[RephraseStructure::repeat] = ex.question;
    }
    return out;
}

namespace {

struct ReportData {
    std::string run_name;
    std::string baseline;
    std::vector<std::string> dataset_order;
    std::vector<std::string> method_order;
    // (dataset, method) -> result
    std::map<std::string, std::map<std::string, MethodResult>> cells;
    bool gaps = false;
};

ReportData collect_report_data(const fs::path& run_dir) {
    ReportData data;
    const fs::path results_path = run_dir / "results.jsonl";
    std::ifstream in(results_path);
    if (!in) throw std::runtime_error("no results.jsonl under " + run_dir.string());

    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        MethodResult r = result_from_json(json::parse(line));
        if (std::find(data.dataset_order.begin(), data.dataset_order.end(), r.dataset) ==
            data.dataset_order.end())
            data.dataset_order.push_back(r.dataset);
        if (std::find(data.method_order.begin(), data.method_order.end(), r.method_id) ==
            data.method_order.end())
            data.method_order.push_back(r.method_id);
        data.cells[r.dataset][r.method_id] = std::move(r);
    }
    if (data.method_order.empty())
        throw std::runtime_error("results.jsonl under " + run_dir.string() + " is empty");

    data.run_name = run_dir.filename().string();
    data.baseline = data.method_order.front();
    const fs::path config_path = run_dir / "run_config.json";
    if (fs::exists(config_path)) {
        json doc = read_json_file(config_path.string());
        data.run_name = doc.value("run_name", data.run_name);
        std::string configured = doc.value("baseline_method", data.baseline);
        if (std::find(data.method_order.begin(), data.method_order.end(), configured) !=
            data.method_order.end())
            data.baseline = configured;
    }
    return data;
}

std::string cell_text(const ReportData& data, const std::string& dataset,
                      const std::string& method) {
    auto ds = data.cells.find(dataset);
    if (ds == data.cells.end()) return "-";
    auto it = ds->second.find(method);
    if (it == ds->second.end()) return "-";

    const auto rows = [&]() -> std::vector<MethodResult> {
        std::vector<MethodResult> rs;
        for (const auto& m : data.method_order) {
            auto found = ds->second.find(m);
            if (found != ds->second.end()) rs.push_back(found->second);
        }
        return rs;
    }();
    const bool has_baseline = ds->second.count(data.baseline) > 0;
    if (!has_baseline || method == data.baseline) {
        double value = it->second.accuracy ? *it->second.accuracy : *it->second.mean_f1;
        return format_percent_cell(value, std::nullopt);
    }
    for (const auto& row : delta_table(rows, data.baseline)) {
        if (row.method_id == method) return row.cell;
    }
    return "-";
}

}  // namespace

void render_report(const std::string& run_dir_str) {
    const fs::path run_dir(run_dir_str);
    ReportData data = collect_report_data(run_dir);

    std::ostringstream md;
    std::ostringstream csv;
    md << "# Run report: " << data.run_name << "\n\n";
    md << "Deltas are against the baseline method `" << data.baseline
       << "`, on the x100 scale with one decimal.\n\n";

    md << "| method |";
    csv << "method";
    for (const auto& ds : data.dataset_order) {
        md << " " << ds << " |";
        csv << "," << ds;
    }
    md << "\n|---|";
    csv << "\n";
    for (std::size_t i = 0; i < data.dataset_order.size(); ++i) md << "---|";
    md << "\n";

    bool gaps = false;
    for (const auto& method : data.method_order) {
        md << "| " << method << " |";
        csv << method;
        for (const auto& ds : data.dataset_order) {
            const std::string cell = cell_text(data, ds, method);
            if (cell == "-") gaps = true;
            md << " " << cell << " |";
            csv << "," << cell;
        }
        md << "\n";
        csv << "\n";
    }
    if (gaps) md << "\nSome (dataset, method) cells are missing results.\n";

    const fs::path stats_path = run_dir / "rephrase_stats.jsonl";
    if (fs::exists(stats_path)) {
        md << "\n## Rephrase statistics\n\n";
        md << "| corpus | mean original tokens | mean rephrase tokens | retention | BLEU |\n";
        md << "|---|---|---|---|---|\n";
        std::ifstream stats(stats_path);
        std::string line;
        while (std::getline(stats, line)) {
            if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
            json rec = json::parse(line);
            char buf[256];
            std::snprintf(buf, sizeof(buf), "| %s | %.1f | %.1f | %.3f | %.1f |\n",
                          rec.value("corpus", std::string("-")).c_str(),
                          rec.value("mean_original_tokens", 0.0),
                          rec.value("mean_rephrase_tokens", 0.0),
                          rec.value("retention_fraction", 0.0), rec.value("bleu", 0.0));
            md << buf;
        }
    }

    std::ofstream md_out(run_dir / "report.md", std::ios::trunc);
    md_out << md.str();
    std::ofstream csv_out(run_dir / "report.csv", std::ios::trunc);
    csv_out << csv.str();
}

}  // namespace echo
