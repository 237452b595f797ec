#include "echo/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace echo::ablation {

using nlohmann::json;

void save_rephrase_corpus(const std::vector<RephraseRecord>& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write rephrase corpus: " + path);
    for (const auto& r : corpus) {
        json rec = {{"query_id", r.query_id},
                    {"structure", to_string(r.structure)},
                    {"rephrase", r.rephrase}};
        out << rec.dump() << "\n";
    }
}

std::vector<RephraseRecord> load_rephrase_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open rephrase corpus: " + path);
    std::vector<RephraseRecord> corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json rec = json::parse(line);
        corpus.push_back({rec.at("query_id").get<std::string>(),
                          rephrase_structure_from_string(rec.at("structure").get<std::string>()),
                          rec.at("rephrase").get<std::string>()});
    }
    return corpus;
}

std::map<std::string, std::string> corpus_to_map(const std::vector<RephraseRecord>& corpus) {
    std::map<std::string, std::string> out;
    for (const auto& r : corpus) out[r.query_id] = r.rephrase;
    return out;
}

RephraseStats corpus_stats(const Dataset& dataset, const std::vector<RephraseRecord>& corpus) {
    if (corpus.empty()) throw std::runtime_error("rephrase corpus is empty");
    std::map<std::string, const Query*> by_id;
    for (const auto& q : dataset.queries) by_id[q.id] = &q;

    RephraseStats stats;
    int counted = 0;
    for (const auto& r : corpus) {
        auto it = by_id.find(r.query_id);
        if (it == by_id.end()) continue;
        const std::string original = full_question_text(*it->second);
        const auto counts = token_retention(original, r.rephrase);
        stats.mean_original_tokens += static_cast<double>(counts.original_tokens);
        stats.mean_rephrase_tokens += static_cast<double>(counts.rephrase_tokens);
        stats.retention_fraction += counts.retention;
        stats.bleu += bleu(r.rephrase, original);
        ++counted;
    }
    if (counted == 0) throw std::runtime_error("rephrase corpus matches no dataset queries");
    stats.mean_original_tokens /= counted;
    stats.mean_rephrase_tokens /= counted;
    stats.retention_fraction /= counted;
    stats.bleu /= counted;
    return stats;
}

namespace {

// The phase-1 request: the normal echo few-shot prompt, with generation cut
// at the answer lead-in so only the rephrase is produced.
CompletionRequest phase1_request(const Query& query, const MethodConfig& config,
                                 const ExemplarSet& exemplars, const std::string& model,
                                 const std::string& dataset_name) {
    StagePlan plan = plan_stages(query, config, &exemplars);
    CompletionRequest req{model, plan.stages[0].prompt_prefix, plan.stages[0].decode,
                          dataset_name + "/" + config.id + "/" + query.id + "/rephrase"};
    req.decode.stop_sequences.push_back("Now, to answer");
    return req;
}

std::string strip_lead_in(std::string text) {
    auto pos = text.find(std::string(kAnswerLeadIn));
    if (pos == std::string::npos) pos = text.find("Now, to answer");
    if (pos != std::string::npos) text.resize(pos);
    return text;
}

// Revised exemplars for phase 2: the rephrases become the questions.
ExemplarSet revised_exemplars(const ExemplarSet& set, RephraseStructure structure) {
    ExemplarSet revised;
    revised.name = set.name + "-revised";
    for (const auto& ex : set.exemplars) {
        auto it = ex.rephrases.find(structure);
        if (it == ex.rephrases.end())
            throw std::runtime_error("exemplar lacks a " + to_string(structure) + " rephrase");
        Exemplar r = ex;
        r.question = it->second;
        r.rephrases[RephraseStructure::repeat] = r.question;
        revised.exemplars.push_back(std::move(r));
    }
    return revised;
}

MethodConfig without_echo(const MethodConfig& config, const std::string& suffix) {
    MethodConfig plain = config;
    plain.id = config.id + suffix;
    plain.echo.reset();
    plain.num_rephrases = 1;
    plain.quoted_repetition = false;
    return plain;
}

}  // namespace

StandaloneOutcome run_standalone_rephrase(const Dataset& dataset, const MethodConfig& config,
                                          const ExemplarSet& exemplars, Backend& backend,
                                          const EvalOptions& opts, bool exclude_failures) {
    validate_method_config(config);
    if (!config.echo) throw std::runtime_error("standalone rephrasing needs an echo config");
    if (config.shot_mode != ShotMode::few_shot)
        throw std::runtime_error("standalone rephrasing runs few-shot");

    StandaloneOutcome outcome;

    std::vector<CompletionRequest> phase1;
    phase1.reserve(dataset.queries.size());
    for (const auto& q : dataset.queries)
        phase1.push_back(phase1_request(q, config, exemplars, opts.model, dataset.name));
    const auto phase1_responses = complete_many(backend, phase1, opts.max_in_flight);

    Dataset rephrased;
    rephrased.name = dataset.name;
    rephrased.default_task_kind = dataset.default_task_kind;
    std::vector<std::size_t> kept_index;
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        const Query& query = dataset.queries[i];
        std::optional<std::string> rephrase;
        if (phase1_responses[i].finish_reason != FinishReason::error) {
            ParsedCompletion parsed = split_echo_output(phase1_responses[i].text, config);
            if (!parsed.rephrases.empty() && !parsed.rephrases.front().empty())
                rephrase = strip_lead_in(parsed.rephrases.front());
        }
        if (!rephrase) {
            ++outcome.rephrase_failures;
            continue;
        }
        outcome.corpus.push_back({query.id, *config.echo, *rephrase});
        Query swapped = query;
        swapped.question = *rephrase;
        swapped.passage.reset();  // the rephrase already folds the context in
        rephrased.queries.push_back(std::move(swapped));
        kept_index.push_back(i);
    }

    if (rephrased.queries.empty())
        throw std::runtime_error("no parseable rephrases for " + dataset.name);

    const ExemplarSet revised = revised_exemplars(exemplars, *config.echo);
    const MethodConfig plain = without_echo(config, "-standalone");
    EvalOutcome phase2 = evaluate_method(rephrased, plain, &revised, backend, opts);
    outcome.transcripts = std::move(phase2.transcripts);

    std::vector<Grade> grades;
    for (const auto& t : outcome.transcripts) grades.push_back(t.grade);
    if (!exclude_failures) {
        // Rephrase failures count against the headline accuracy.
        for (int i = 0; i < outcome.rephrase_failures; ++i) {
            Grade failed;
            if (dataset.default_task_kind == TaskKind::span) failed.f1 = 0.0;
            else failed.correct = false;
            grades.push_back(failed);
        }
    }
    outcome.result =
        aggregate_grades(config.id + "-standalone", dataset, grades, "transcripts.jsonl");
    return outcome;
}

MethodResult run_augmentation(const Dataset& dataset,
                              const std::map<std::string, std::string>& rephrase_corpus,
                              const MethodConfig& config, const ExemplarSet& exemplars,
                              Backend& backend, const EvalOptions& opts) {
    validate_method_config(config);
    if (!config.echo || config.shot_mode != ShotMode::few_shot)
        throw std::runtime_error("augmentation needs a few-shot echo config");

    std::string missing;
    for (const auto& q : dataset.queries) {
        if (!rephrase_corpus.count(q.id)) missing += missing.empty() ? q.id : ", " + q.id;
    }
    if (!missing.empty())
        throw std::runtime_error("rephrase corpus is missing queries: " + missing);

    std::vector<CompletionRequest> requests;
    requests.reserve(dataset.queries.size());
    for (const auto& q : dataset.queries) {
        std::string prompt = augmentation_prompt(q, rephrase_corpus.at(q.id), exemplars, config);
        requests.push_back({opts.model, std::move(prompt), DecodeParams{512, 0.0, {"\nQ:"}},
                            dataset.name + "/" + config.id + "/" + q.id + "/augment"});
    }
    const auto responses = complete_many(backend, requests, opts.max_in_flight);

    std::vector<Grade> grades;
    grades.reserve(dataset.queries.size());
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        std::optional<Answer> answer;
        if (responses[i].finish_reason != FinishReason::error)
            answer = extract_answer(responses[i].text, dataset.queries[i].task_kind);
        grades.push_back(grade(answer, dataset.queries[i]));
    }
    return aggregate_grades(config.id + "-augment", dataset, grades, "transcripts.jsonl");
}

std::vector<MethodResult> run_multi_rephrase(const Dataset& dataset, const MethodConfig& config,
                                             const std::vector<int>& ks,
                                             const ExemplarSet& exemplars, Backend& backend,
                                             const EvalOptions& opts) {
    validate_method_config(config);
    if (!config.echo) throw std::runtime_error("multi-rephrase stacking needs an echo config");
    for (int k : ks) {
        if (k < 1) throw std::runtime_error("rephrase counts must be >= 1");
    }

    std::vector<MethodResult> results;
    results.reserve(ks.size());
    for (int k : ks) {
        MethodConfig stacked = config;
        stacked.num_rephrases = k;
        if (k > 1) stacked.id = config.id + "-k" + std::to_string(k);
        EvalOutcome outcome = evaluate_method(dataset, stacked, &exemplars, backend, opts);
        results.push_back(std::move(outcome.result));
    }
    return results;
}

namespace {

std::string normalized_for_match(const std::string& s) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

}  // namespace

PerturbationOutcome run_perturbation_probe(const Dataset& dataset, const MethodConfig& config,
                                           const ExemplarSet* exemplars, Backend& backend,
                                           const EvalOptions& opts) {
    EvalOutcome eval = evaluate_method(dataset, config, exemplars, backend, opts);

    PerturbationOutcome outcome;
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        const auto it = dataset.queries[i].meta.find("perturbation");
        if (it == dataset.queries[i].meta.end() || it->second.empty()) continue;
        ++outcome.with_perturbation;
        const std::string needle = normalized_for_match(it->second);
        for (const auto& rephrase : eval.transcripts[i].parsed.rephrases) {
            if (normalized_for_match(rephrase).find(needle) != std::string::npos) {
                ++outcome.echoed;
                break;
            }
        }
    }
    outcome.echo_rate = outcome.with_perturbation == 0
                            ? 0.0
                            : static_cast<double>(outcome.echoed) /
                                  static_cast<double>(outcome.with_perturbation);
    outcome.result = std::move(eval.result);
    return outcome;
}

}  // namespace echo::ablation
