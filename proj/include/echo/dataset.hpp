#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace echo {

enum class TaskKind { numeric, multiple_choice, span, symbolic };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct Choice {
    std::string label;
    std::string text;
    bool operator==(const Choice&) const = default;
};

/// One benchmark instance in the uniform schema all loaders normalize into.
struct Query {
    std::string id;
    TaskKind task_kind = TaskKind::numeric;
    std::string question;
    std::optional<std::string> passage;
    std::optional<std::vector<Choice>> choices;
    std::vector<std::string> golds;
    std::map<std::string, std::string> meta;
    bool operator==(const Query&) const = default;
};

// Passage and question joined into the single paragraph prompts embed.
std::string full_question_text(const Query& q);

struct Dataset {
    std::string name;
    TaskKind default_task_kind = TaskKind::numeric;
    std::vector<Query> queries;
    bool operator==(const Dataset&) const = default;
};

enum class DatasetSchema { native_jsonl, gsm8k, drop, squad, aqua };
DatasetSchema schema_from_string(const std::string& name);
std::string to_string(DatasetSchema schema);

// Throw std::runtime_error describing the first violated invariant.
void validate_query(const Query& q);
void validate_dataset(const Dataset& d);

Dataset load_queries(const std::string& path, DatasetSchema schema);

// GSMIC-style records: the perturbed question plus, when present, the
// injected irrelevant sentence (stored under meta["perturbation"]).
Dataset load_gsmic(const std::string& path);

void save_native_jsonl(const Dataset& d, const std::string& path);

// Synthesizes coin-flip queries: flips_per_sample people, each of whom
// either flips the coin or leaves it, gold "yes" iff the flip count is even.
// Pure function of (n, flips_per_sample, seed).
Dataset generate_coin_flip(int n, int flips_per_sample, std::uint64_t seed);

enum class DropSubset { football, census };
std::vector<Query> filter_drop_subset(const std::vector<Query>& records, DropSubset subset);

}  // namespace echo
