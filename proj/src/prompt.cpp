#include "echo/prompt.hpp"

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include "json.hpp"

namespace echo {

using nlohmann::json;

std::string to_string(RephraseStructure s) {
    switch (s) {
        case RephraseStructure::repeat: return "repeat";
        case RephraseStructure::compound: return "compound";
        case RephraseStructure::question_first: return "question_first";
        case RephraseStructure::simple: return "simple";
    }
    throw std::logic_error("unknown rephrase structure");
}

RephraseStructure rephrase_structure_from_string(const std::string& name) {
    if (name == "repeat") return RephraseStructure::repeat;
    if (name == "compound") return RephraseStructure::compound;
    if (name == "question_first") return RephraseStructure::question_first;
    if (name == "simple") return RephraseStructure::simple;
    throw std::runtime_error("unknown rephrase structure: " + name);
}

void validate_method_config(const MethodConfig& c) {
    if (c.id.empty()) throw std::runtime_error("method config has an empty id");
    if (c.shot_mode == ShotMode::few_shot && !c.exemplar_set)
        throw std::runtime_error("method " + c.id + ": few_shot requires an exemplar set");
    if (c.shot_mode == ShotMode::zero_shot && c.exemplar_set)
        throw std::runtime_error("method " + c.id + ": zero_shot must not name an exemplar set");
    if (!c.echo && c.num_rephrases != 1)
        throw std::runtime_error("method " + c.id + ": num_rephrases > 1 requires echo");
    if (c.num_rephrases < 1)
        throw std::runtime_error("method " + c.id + ": num_rephrases must be >= 1");
    if (c.quoted_repetition) {
        // Only verbatim repetition has a detectable quote boundary.
        if (c.echo != RephraseStructure::repeat)
            throw std::runtime_error("method " + c.id + ": quoted repetition requires echo=repeat");
        if (c.shot_mode != ShotMode::zero_shot)
            throw std::runtime_error("method " + c.id + ": quoted repetition is zero-shot only");
    }
    if (c.shot_mode == ShotMode::zero_shot && (c.echo || c.reasoning == Reasoning::cot) &&
        c.stage1_template.empty())
        throw std::runtime_error("method " + c.id + ": two-stage zero-shot needs a stage-1 template");
}

std::string extraction_prompt(TaskKind kind) {
    if (kind == TaskKind::multiple_choice) return "From (a) through (e), the answer is";
    return "Therefore, the answer is";
}

std::string question_block(const Query& q) {
    std::string block = "Q: " + full_question_text(q);
    if (q.choices && !q.choices->empty()) {
        block += "\nAnswer Choices:";
        int i = 0;
        for (const auto& c : *q.choices) {
            block += " (";
            block += static_cast<char>('a' + i);
            block += ") " + c.text;
            ++i;
        }
    }
    return block;
}

namespace {

DecodeParams stage1_decode() { return {512, 0.0, {}}; }
DecodeParams stage2_decode() { return {64, 0.0, {}}; }
DecodeParams few_shot_decode() { return {512, 0.0, {"\nQ:"}}; }

std::string resolved_extraction(const MethodConfig& config, const Query& q) {
    return config.extraction_template.empty() ? extraction_prompt(q.task_kind)
                                              : config.extraction_template;
}

std::string stage1_instruction(const MethodConfig& config) {
    std::string instr = config.stage1_template;
    if (config.quoted_repetition) instr += " \"";
    return instr;
}

const std::string& rephrase_for(const Exemplar& ex, RephraseStructure structure) {
    auto it = ex.rephrases.find(structure);
    if (it == ex.rephrases.end())
        throw std::runtime_error("exemplar lacks a " + to_string(structure) + " rephrase");
    return it->second;
}

std::string answer_body(const Exemplar& ex, const MethodConfig& config) {
    if (config.reasoning == Reasoning::cot) {
        if (!ex.rationale)
            throw std::runtime_error("chain-of-thought rendering needs an exemplar rationale");
        return *ex.rationale + " The answer is " + ex.answer + ".";
    }
    return "the answer is " + ex.answer + ".";
}

}  // namespace

StagePlan plan_stages(const Query& query, const MethodConfig& config,
                      const ExemplarSet* exemplars) {
    validate_method_config(config);
    StagePlan plan;
    if (config.shot_mode == ShotMode::few_shot) {
        if (!exemplars) throw std::runtime_error("few-shot planning needs a loaded exemplar set");
        plan.stages.push_back({assemble_few_shot_prompt(query, *exemplars, config),
                               few_shot_decode()});
        return plan;
    }
    const std::string extraction = resolved_extraction(config, query);
    if (!config.echo && config.reasoning == Reasoning::standard) {
        plan.stages.push_back({question_block(query) + "\nA: " + extraction, stage2_decode()});
        return plan;
    }
    plan.stages.push_back({question_block(query) + "\nA: " + stage1_instruction(config),
                           stage1_decode()});
    plan.stages.push_back({extraction, stage2_decode()});
    return plan;
}

std::string render_exemplar(const Exemplar& ex, const MethodConfig& config) {
    if (config.num_rephrases > 1 && config.echo)
        return multi_rephrase_exemplar(ex, config, config.num_rephrases);
    if (!config.echo) {
        if (config.reasoning == Reasoning::cot) {
            if (!ex.rationale)
                throw std::runtime_error("chain-of-thought rendering needs an exemplar rationale");
            return "Q: " + ex.question + "\nA: " + *ex.rationale + " The answer is " + ex.answer +
                   ".";
        }
        return "Q: " + ex.question + "\nA: The answer is " + ex.answer + ".";
    }
    const std::string& rephrase = rephrase_for(ex, *config.echo);
    return "Q: " + ex.question + "\nA: " + std::string(kRephraseMarker) + " \"" + rephrase +
           "\"\n" + std::string(kAnswerLeadIn) + " " + answer_body(ex, config);
}

std::string multi_rephrase_exemplar(const Exemplar& ex, const MethodConfig& config, int k) {
    if (!config.echo) throw std::runtime_error("multi-rephrase rendering requires echo");
    if (k < 2) throw std::runtime_error("multi-rephrase rendering requires k >= 2");
    const std::string& rephrase = rephrase_for(ex, *config.echo);
    std::string block = "Q: " + ex.question + "\nA: " + std::string(kRephraseMarker) + " \"" +
                        rephrase + "\"";
    for (int i = 1; i < k; ++i)
        block += "\n" + std::string(kRepeatAgainMarker) + " \"" + rephrase + "\"";
    block += "\n" + std::string(kAnswerLeadIn) + " " + answer_body(ex, config);
    return block;
}

std::string assemble_few_shot_prompt(const Query& query, const ExemplarSet& set,
                                     const MethodConfig& config) {
    if (set.exemplars.empty()) throw std::runtime_error("exemplar set " + set.name + " is empty");
    std::string prompt;
    for (const auto& ex : set.exemplars) {
        prompt += render_exemplar(ex, config);
        prompt += "\n\n";
    }
    prompt += question_block(query);
    prompt += "\nA:";
    return prompt;
}

std::optional<std::string> rephrase_generation_prompt(const std::string& question,
                                                      RephraseStructure structure) {
    if (question.empty()) throw std::runtime_error("cannot rephrase an empty question");
    switch (structure) {
        case RephraseStructure::repeat:
            return std::nullopt;  // the rephrase is the question itself
        case RephraseStructure::compound:
            return "Rephrase the following query using compound sentences without loss of "
                   "details, starting with \"Given that\" and ending with the question in the "
                   "query: " +
                   question;
        case RephraseStructure::question_first:
            return "Rephrase the following query by asking the question in the query first, "
                   "without loss of details: " +
                   question;
        case RephraseStructure::simple:
            return "Rephrase the following query using short and simple sentences, without loss "
                   "of details: " +
                   question;
    }
    throw std::logic_error("unknown rephrase structure");
}

namespace {

std::string augmented_block(const std::string& question, const std::string& rephrase,
                            const std::string& body) {
    return "Q: " + question + "\n" + std::string(kRephraseMarker) + " \"" + rephrase + "\"\nA:" +
           (body.empty() ? "" : " " + body);
}

}  // namespace

std::string augmentation_prompt(const Query& query, const std::string& rephrase,
                                const ExemplarSet& set, const MethodConfig& config) {
    validate_method_config(config);
    if (config.shot_mode != ShotMode::few_shot || !config.echo)
        throw std::runtime_error("augmentation prompts need a few-shot echo config");
    if (rephrase.empty()) throw std::runtime_error("augmentation needs a non-empty rephrase");
    if (set.exemplars.empty()) throw std::runtime_error("exemplar set " + set.name + " is empty");

    std::string prompt;
    for (const auto& ex : set.exemplars) {
        std::string body;
        if (config.reasoning == Reasoning::cot) {
            if (!ex.rationale)
                throw std::runtime_error("chain-of-thought rendering needs an exemplar rationale");
            body = *ex.rationale + " The answer is " + ex.answer + ".";
        } else {
            body = "The answer is " + ex.answer + ".";
        }
        prompt += augmented_block(ex.question, rephrase_for(ex, *config.echo), body);
        prompt += "\n\n";
    }
    prompt += augmented_block(full_question_text(query), rephrase, "");
    return prompt;
}

namespace {

std::string data_dir_override;
std::mutex data_dir_mutex;

Exemplar exemplar_from_json(const json& rec) {
    Exemplar ex;
    ex.question = rec.at("question").get<std::string>();
    if (rec.contains("rephrases") && !rec.at("rephrases").is_null()) {
        for (auto it = rec.at("rephrases").begin(); it != rec.at("rephrases").end(); ++it)
            ex.rephrases[rephrase_structure_from_string(it.key())] = it.value().get<std::string>();
    }
    if (rec.contains("rationale") && !rec.at("rationale").is_null())
        ex.rationale = rec.at("rationale").get<std::string>();
    ex.answer = rec.at("answer").get<std::string>();

    auto repeat = ex.rephrases.find(RephraseStructure::repeat);
    if (repeat == ex.rephrases.end()) {
        ex.rephrases[RephraseStructure::repeat] = ex.question;
    } else if (repeat->second != ex.question) {
        throw std::runtime_error("repeat rephrase must equal the question verbatim");
    }
    return ex;
}

std::string file_stem(const std::string& path) {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
    return base;
}

}  // namespace

ExemplarSet load_exemplar_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open exemplar set: " + path);
    ExemplarSet set;
    set.name = file_stem(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            set.exemplars.push_back(exemplar_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (set.exemplars.empty()) throw std::runtime_error("exemplar set " + path + " is empty");
    return set;
}

void save_exemplar_set(const ExemplarSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write exemplar set: " + path);
    for (const auto& ex : set.exemplars) {
        json rec;
        rec["question"] = ex.question;
        json rephrases;
        for (const auto& [structure, text] : ex.rephrases) rephrases[to_string(structure)] = text;
        rec["rephrases"] = rephrases;
        if (ex.rationale) rec["rationale"] = *ex.rationale;
        rec["answer"] = ex.answer;
        out << rec.dump() << "\n";
    }
}

std::string data_dir() {
    {
        std::lock_guard<std::mutex> lock(data_dir_mutex);
        if (!data_dir_override.empty()) return data_dir_override;
    }
    if (const char* env = std::getenv("ECHO_DATA_DIR"); env && *env) return env;
#ifdef ECHO_DEFAULT_DATA_DIR
    return ECHO_DEFAULT_DATA_DIR;
#else
    return "data";
#endif
}

void set_data_dir(const std::string& dir) {
    std::lock_guard<std::mutex> lock(data_dir_mutex);
    data_dir_override = dir;
}

ExemplarSet load_bundled_exemplars(const std::string& name_or_path) {
    if (name_or_path.find('/') != std::string::npos ||
        name_or_path.find('\\') != std::string::npos ||
        name_or_path.ends_with(".jsonl"))
        return load_exemplar_set(name_or_path);
    return load_exemplar_set(data_dir() + "/exemplars/" + name_or_path + ".jsonl");
}

namespace {

MethodConfig method_config_from_json(const std::string& id, const json& rec) {
    MethodConfig c;
    c.id = id;
    c.shot_mode = rec.value("shot_mode", std::string("zero_shot")) == "few_shot"
                      ? ShotMode::few_shot
                      : ShotMode::zero_shot;
    c.reasoning =
        rec.value("reasoning", std::string("standard")) == "cot" ? Reasoning::cot
                                                                 : Reasoning::standard;
    if (rec.contains("echo") && !rec.at("echo").is_null())
        c.echo = rephrase_structure_from_string(rec.at("echo").get<std::string>());
    c.stage1_template = rec.value("stage1_template", std::string());
    c.extraction_template = rec.value("extraction_template", std::string());
    c.num_rephrases = rec.value("num_rephrases", 1);
    c.quoted_repetition = rec.value("quoted_repetition", false);
    if (rec.contains("exemplar_set") && !rec.at("exemplar_set").is_null())
        c.exemplar_set = rec.at("exemplar_set").get<std::string>();
    return c;
}

}  // namespace

std::map<std::string, MethodConfig> load_preset_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open preset catalog: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    std::map<std::string, MethodConfig> catalog;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        MethodConfig c = method_config_from_json(it.key(), it.value());
        validate_method_config(c);
        catalog[it.key()] = std::move(c);
    }
    return catalog;
}

const std::map<std::string, MethodConfig>& preset_catalog() {
    static const std::map<std::string, MethodConfig> catalog =
        load_preset_catalog(data_dir() + "/presets.json");
    return catalog;
}

MethodConfig preset(const std::string& id) {
    const auto& catalog = preset_catalog();
    auto it = catalog.find(id);
    if (it == catalog.end()) throw std::runtime_error("unknown method preset: " + id);
    return it->second;
}

}  // namespace echo
