#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "echo/dataset.hpp"

namespace echo {

enum class RephraseStructure { repeat, compound, question_first, simple };

std::string to_string(RephraseStructure s);
RephraseStructure rephrase_structure_from_string(const std::string& name);

enum class ShotMode { zero_shot, few_shot };
enum class Reasoning { standard, cot };

struct DecodeParams {
    int max_tokens = 512;
    double temperature = 0.0;
    std::vector<std::string> stop_sequences;
    bool operator==(const DecodeParams&) const = default;
};

/// A demonstration rendered into few-shot prompts.  rephrases[repeat] always
/// equals the question; the loader fills it in when a file omits it.
struct Exemplar {
    std::string question;
    std::map<RephraseStructure, std::string> rephrases;
    std::optional<std::string> rationale;
    std::string answer;
};

struct ExemplarSet {
    std::string name;
    std::vector<Exemplar> exemplars;  // order is significant
};

/// Full description of a prompting strategy: shot mode x reasoning mode x
/// echo variant x rephrase count.
struct MethodConfig {
    std::string id;
    ShotMode shot_mode = ShotMode::zero_shot;
    Reasoning reasoning = Reasoning::standard;
    std::optional<RephraseStructure> echo;  // absent = baseline
    std::string stage1_template;            // stage-1 instruction text
    std::string extraction_template;        // empty selects the per-task default
    int num_rephrases = 1;
    bool quoted_repetition = false;  // stage-1 prompt ends with an opening quote
    std::optional<std::string> exemplar_set;  // bundled set name or file path
};

void validate_method_config(const MethodConfig& c);

struct Stage {
    std::string prompt_prefix;
    DecodeParams decode;
};

struct StagePlan {
    std::vector<Stage> stages;  // 1 or 2
};

// Marker strings shared between rendering and completion parsing.
inline constexpr std::string_view kRephraseMarker =
    "Rewriting in simple words, the question is:";
inline constexpr std::string_view kRepeatAgainMarker =
    "Repeating the question again, the question is:";
inline constexpr std::string_view kAnswerLeadIn =
    "Now, to answer the rewritten question,";

std::string extraction_prompt(TaskKind kind);

// "Q: <text>" plus, for multiple choice, an "Answer Choices: (a) ..." line.
std::string question_block(const Query& q);

// exemplars may be null for zero-shot configs.
StagePlan plan_stages(const Query& query, const MethodConfig& config,
                      const ExemplarSet* exemplars = nullptr);

std::string render_exemplar(const Exemplar& ex, const MethodConfig& config);

// k >= 2 repetitions of the rephrase, each after the first introduced by the
// "Repeating the question again" marker.
std::string multi_rephrase_exemplar(const Exemplar& ex, const MethodConfig& config, int k);

std::string assemble_few_shot_prompt(const Query& query, const ExemplarSet& set,
                                     const MethodConfig& config);

// Instruction used to have a model produce an exemplar rephrase; absent for
// repeat, which needs no model call.
std::optional<std::string> rephrase_generation_prompt(const std::string& question,
                                                      RephraseStructure structure);

// Prompt where the rephrase is supplied inside the "Q:" block and the model
// generates only the answer body.
std::string augmentation_prompt(const Query& query, const std::string& rephrase,
                                const ExemplarSet& set, const MethodConfig& config);

ExemplarSet load_exemplar_set(const std::string& path);
void save_exemplar_set(const ExemplarSet& set, const std::string& path);

// Root of the bundled data files (exemplar sets, presets).  Resolution order:
// explicit set_data_dir, ECHO_DATA_DIR environment variable, compiled default.
std::string data_dir();
void set_data_dir(const std::string& dir);

// Resolves a set name against <data_dir>/exemplars/<name>.jsonl; anything
// containing a path separator or .jsonl suffix is treated as a path.
ExemplarSet load_bundled_exemplars(const std::string& name_or_path);

std::map<std::string, MethodConfig> load_preset_catalog(const std::string& path);
const std::map<std::string, MethodConfig>& preset_catalog();
MethodConfig preset(const std::string& id);

}  // namespace echo
