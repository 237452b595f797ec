#include "echo/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace echo {

using nlohmann::json;

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::numeric: return "numeric";
        case TaskKind::multiple_choice: return "multiple_choice";
        case TaskKind::span: return "span";
        case TaskKind::symbolic: return "symbolic";
    }
    throw std::logic_error("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& name) {
    if (name == "numeric") return TaskKind::numeric;
    if (name == "multiple_choice") return TaskKind::multiple_choice;
    if (name == "span") return TaskKind::span;
    if (name == "symbolic") return TaskKind::symbolic;
    throw std::runtime_error("unknown task kind: " + name);
}

DatasetSchema schema_from_string(const std::string& name) {
    if (name == "native_jsonl" || name == "native") return DatasetSchema::native_jsonl;
    if (name == "gsm8k") return DatasetSchema::gsm8k;
    if (name == "drop") return DatasetSchema::drop;
    if (name == "squad") return DatasetSchema::squad;
    if (name == "aqua") return DatasetSchema::aqua;
    throw std::runtime_error("unknown dataset schema: " + name);
}

std::string to_string(DatasetSchema schema) {
    switch (schema) {
        case DatasetSchema::native_jsonl: return "native_jsonl";
        case DatasetSchema::gsm8k: return "gsm8k";
        case DatasetSchema::drop: return "drop";
        case DatasetSchema::squad: return "squad";
        case DatasetSchema::aqua: return "aqua";
    }
    throw std::logic_error("unknown dataset schema");
}

std::string full_question_text(const Query& q) {
    if (q.passage && !q.passage->empty()) return *q.passage + " " + q.question;
    return q.question;
}

void validate_query(const Query& q) {
    if (q.id.empty()) throw std::runtime_error("query has an empty id");
    if (q.question.empty()) throw std::runtime_error("query " + q.id + " has an empty question");
    if (q.golds.empty()) throw std::runtime_error("query " + q.id + " has an empty golds list");

    const bool has_choices = q.choices && !q.choices->empty();
    if (q.task_kind == TaskKind::multiple_choice) {
        if (!has_choices || q.choices->size() < 2)
            throw std::runtime_error("multiple-choice query " + q.id + " needs >= 2 choices");
        std::unordered_set<std::string> labels;
        for (const auto& c : *q.choices) {
            if (!labels.insert(c.label).second)
                throw std::runtime_error("query " + q.id + " has duplicate choice label " + c.label);
        }
        for (const auto& g : q.golds) {
            if (!labels.count(g))
                throw std::runtime_error("query " + q.id + " gold '" + g +
                                         "' is not a choice label");
        }
    } else if (has_choices) {
        throw std::runtime_error("query " + q.id + " carries choices but is not multiple_choice");
    }
}

void validate_dataset(const Dataset& d) {
    if (d.name.empty()) throw std::runtime_error("dataset has an empty name");
    std::unordered_set<std::string> ids;
    for (const auto& q : d.queries) {
        validate_query(q);
        if (!ids.insert(q.id).second)
            throw std::runtime_error("dataset " + d.name + " has duplicate query id " + q.id);
    }
}

namespace {

std::string path_stem(const std::string& path) {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
    return base.empty() ? "dataset" : base;
}

std::string trimmed(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void line_error(const std::string& path, std::size_t line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

json parse_line(const std::string& path, std::size_t line_no, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        line_error(path, line_no, std::string("malformed record: ") + e.what());
    }
}

Query query_from_native(const json& rec, std::size_t index) {
    Query q;
    q.id = rec.contains("id") ? rec.at("id").get<std::string>() : "q-" + std::to_string(index);
    q.task_kind = task_kind_from_string(rec.value("task_kind", std::string("numeric")));
    q.question = rec.at("question").get<std::string>();
    if (rec.contains("passage") && !rec.at("passage").is_null())
        q.passage = rec.at("passage").get<std::string>();
    if (rec.contains("choices") && !rec.at("choices").is_null()) {
        std::vector<Choice> choices;
        for (const auto& c : rec.at("choices"))
            choices.push_back({c.at("label").get<std::string>(), c.at("text").get<std::string>()});
        q.choices = std::move(choices);
    }
    for (const auto& g : rec.at("golds")) q.golds.push_back(g.get<std::string>());
    if (rec.contains("meta") && !rec.at("meta").is_null()) {
        for (auto it = rec.at("meta").begin(); it != rec.at("meta").end(); ++it)
            q.meta[it.key()] = it.value().get<std::string>();
    }
    return q;
}

// GSM8K answer fields end with "#### <final>"; keep only the final value.
std::string gsm8k_gold(const std::string& answer) {
    auto pos = answer.rfind("####");
    if (pos == std::string::npos) return trimmed(answer);
    return trimmed(answer.substr(pos + 4));
}

Query query_from_gsm8k(const json& rec, std::size_t index) {
    Query q;
    q.id = "q-" + std::to_string(index);
    q.task_kind = TaskKind::numeric;
    q.question = rec.at("question").get<std::string>();
    q.golds.push_back(gsm8k_gold(rec.at("answer").get<std::string>()));
    return q;
}

Query query_from_drop(const json& rec, std::size_t index) {
    Query q;
    q.id = rec.contains("query_id") ? rec.at("query_id").get<std::string>()
                                    : "q-" + std::to_string(index);
    q.task_kind = TaskKind::numeric;
    q.passage = rec.at("passage").get<std::string>();
    q.question = rec.at("question").get<std::string>();
    for (const auto& a : rec.at("answers")) q.golds.push_back(a.get<std::string>());
    return q;
}

Query query_from_squad(const json& rec, std::size_t index) {
    Query q;
    q.id = rec.contains("id") ? rec.at("id").get<std::string>() : "q-" + std::to_string(index);
    q.task_kind = TaskKind::span;
    q.passage = rec.at("context").get<std::string>();
    q.question = rec.at("question").get<std::string>();
    for (const auto& a : rec.at("answers").at("text")) q.golds.push_back(a.get<std::string>());
    return q;
}

// AQuA options look like "A)50"; relabel to lowercase letters by position.
Query query_from_aqua(const json& rec, std::size_t index) {
    Query q;
    q.id = "q-" + std::to_string(index);
    q.task_kind = TaskKind::multiple_choice;
    q.question = rec.at("question").get<std::string>();
    std::vector<Choice> choices;
    int i = 0;
    for (const auto& opt : rec.at("options")) {
        std::string text = opt.get<std::string>();
        auto paren = text.find(')');
        if (paren != std::string::npos) text = trimmed(text.substr(paren + 1));
        choices.push_back({std::string(1, static_cast<char>('a' + i)), text});
        ++i;
    }
    q.choices = std::move(choices);
    std::string correct = rec.at("correct").get<std::string>();
    std::transform(correct.begin(), correct.end(), correct.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    q.golds.push_back(trimmed(correct));
    return q;
}

Query query_from_gsmic(const json& rec, std::size_t index) {
    Query q;
    q.id = "q-" + std::to_string(index);
    q.task_kind = TaskKind::numeric;
    if (rec.contains("new_question")) q.question = rec.at("new_question").get<std::string>();
    else q.question = rec.at("question").get<std::string>();
    q.golds.push_back(gsm8k_gold(rec.at("answer").get<std::string>()));
    for (const char* key : {"perturbation", "sentence"}) {
        if (rec.contains(key) && rec.at(key).is_string()) {
            q.meta["perturbation"] = rec.at(key).get<std::string>();
            break;
        }
    }
    return q;
}

Dataset load_jsonl(const std::string& path, const std::string& name,
                   Query (*convert)(const json&, std::size_t), TaskKind default_kind) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    Dataset d;
    d.name = name;
    d.default_task_kind = default_kind;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trimmed(line).empty()) continue;  // blank lines are skipped silently
        json rec = parse_line(path, line_no, line);
        Query q;
        try {
            q = convert(rec, d.queries.size());
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        try {
            validate_query(q);
        } catch (const std::exception& e) {
            line_error(path, line_no, e.what());
        }
        d.queries.push_back(std::move(q));
    }
    validate_dataset(d);
    return d;
}

}  // namespace

Dataset load_queries(const std::string& path, DatasetSchema schema) {
    const std::string name = path_stem(path);
    switch (schema) {
        case DatasetSchema::native_jsonl:
            return load_jsonl(path, name, query_from_native, TaskKind::numeric);
        case DatasetSchema::gsm8k:
            return load_jsonl(path, name, query_from_gsm8k, TaskKind::numeric);
        case DatasetSchema::drop:
            return load_jsonl(path, name, query_from_drop, TaskKind::numeric);
        case DatasetSchema::squad:
            return load_jsonl(path, name, query_from_squad, TaskKind::span);
        case DatasetSchema::aqua:
            return load_jsonl(path, name, query_from_aqua, TaskKind::multiple_choice);
    }
    throw std::logic_error("unknown dataset schema");
}

Dataset load_gsmic(const std::string& path) {
    return load_jsonl(path, path_stem(path), query_from_gsmic, TaskKind::numeric);
}

void save_native_jsonl(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    for (const auto& q : d.queries) {
        json rec;
        rec["id"] = q.id;
        rec["task_kind"] = to_string(q.task_kind);
        rec["question"] = q.question;
        if (q.passage) rec["passage"] = *q.passage;
        if (q.choices) {
            json choices = json::array();
            for (const auto& c : *q.choices) choices.push_back({{"label", c.label}, {"text", c.text}});
            rec["choices"] = choices;
        }
        rec["golds"] = q.golds;
        if (!q.meta.empty()) rec["meta"] = q.meta;
        out << rec.dump() << "\n";
    }
}

namespace {

constexpr std::array<const char*, 50> kNamePool = {
    "Avery",  "Blake",  "Casey",  "Devon",  "Elliot", "Frankie", "Harper", "Indigo",
    "Jordan", "Kendall", "Logan",  "Morgan", "Noel",   "Oakley",  "Parker", "Quinn",
    "Riley",  "Sawyer", "Taylor", "Unity",  "Val",    "Winter",  "Xen",    "Yael",
    "Zion",   "Adrian", "Bella",  "Carlos", "Diana",  "Elena",   "Felix",  "Grace",
    "Hugo",   "Irene",  "Jamal",  "Kira",   "Liam",   "Maya",    "Nadia",  "Omar",
    "Priya",  "Rosa",   "Sam",    "Tara",   "Uma",    "Victor",  "Wendy",  "Ximena",
    "Yusuf",  "Zara"};

// mt19937_64 is bit-reproducible everywhere; std::uniform_int_distribution is
// not, so bounded draws go through a plain modulo.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

}  // namespace

Dataset generate_coin_flip(int n, int flips_per_sample, std::uint64_t seed) {
    if (n < 1) throw std::runtime_error("coin flip generation needs n >= 1");
    if (flips_per_sample < 1)
        throw std::runtime_error("coin flip generation needs flips_per_sample >= 1");
    if (flips_per_sample > static_cast<int>(kNamePool.size()))
        throw std::runtime_error("flips_per_sample exceeds the name pool size");

    std::mt19937_64 rng(seed);
    Dataset d;
    d.name = "coin_flip";
    d.default_task_kind = TaskKind::symbolic;
    d.queries.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::array<const char*, kNamePool.size()> pool = kNamePool;
        std::string text = "A coin is heads up.";
        int flips = 0;
        for (int p = 0; p < flips_per_sample; ++p) {
            auto pick = bounded(rng, kNamePool.size() - static_cast<std::uint64_t>(p));
            std::swap(pool[p], pool[p + pick]);
            const bool flip = (rng() & 1) != 0;
            if (flip) ++flips;
            text += " ";
            text += pool[p];
            text += flip ? " flips the coin." : " does not flip the coin.";
        }
        text += " Is the coin still heads up?";

        Query q;
        q.id = "coinflip-" + std::to_string(i + 1);
        q.task_kind = TaskKind::symbolic;
        q.question = std::move(text);
        q.golds.push_back(flips % 2 == 0 ? "yes" : "no");
        d.queries.push_back(std::move(q));
    }
    return d;
}

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::vector<Query> filter_drop_subset(const std::vector<Query>& records, DropSubset subset) {
    std::vector<Query> kept;
    for (const auto& q : records) {
        if (!q.passage)
            throw std::runtime_error("query " + q.id + " has no passage to filter on");
        const std::string passage = lowercase(*q.passage);
        bool keep = false;
        switch (subset) {
            case DropSubset::football:
                keep = passage.find("yard") != std::string::npos;
                break;
            case DropSubset::census:
                keep = passage.find("population") != std::string::npos &&
                       passage.find("census") != std::string::npos;
                break;
        }
        if (keep) kept.push_back(q);
    }
    return kept;
}

}  // namespace echo
