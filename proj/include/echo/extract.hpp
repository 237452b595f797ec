#pragma once

#include <optional>
#include <string>
#include <vector>

#include "echo/dataset.hpp"
#include "echo/prompt.hpp"

namespace echo {

/// Exact decimal held as a reduced rational, so 65.3 and 9.75 compare without
/// binary-float noise.  Fractions like "3/2" land here exactly as well.
struct Decimal {
    long long num = 0;
    long long den = 1;  // > 0, gcd(num, den) == 1
    bool operator==(const Decimal&) const = default;
};

std::string to_string(const Decimal& d);

// |a - b| <= 1e-4, computed exactly in integers.
bool nearly_equal(const Decimal& a, const Decimal& b);

// Strips currency symbols, thousands separators, '%', wrapping quotes and
// whitespace, then parses the leading signed decimal (or simple fraction).
// Absent when no digit is present.
std::optional<Decimal> normalize_numeric(const std::string& s);

struct Answer {
    TaskKind kind = TaskKind::numeric;
    Decimal number;    // numeric
    std::string text;  // choice label / normalized span / yes-no token
};

// Text after the last case-insensitive "answer is", if any.
std::optional<std::string> answer_tail(const std::string& text);

// Canonicalizes the text after the last "answer is" per task kind, with a
// last-number fallback for numeric and a last-(x) fallback for choices.
std::optional<Answer> extract_answer(const std::string& text, TaskKind kind);

struct ParsedCompletion {
    std::vector<std::string> rephrases;  // may be empty
    std::string reasoning;
    std::string raw_answer;
    std::optional<Answer> answer;
};

// Splits a completion into rephrase segments and reasoning.  Quoted
// repetition ends at the first closing quote; few-shot echo output is
// delimited by the rephrase markers and the "Now, to answer" lead-in.
// Degraded parses are represented, never thrown.
ParsedCompletion split_echo_output(const std::string& text, const MethodConfig& config);

struct Grade {
    std::optional<bool> correct;  // accuracy tasks
    std::optional<double> f1;     // span tasks
    std::optional<std::string> matched_gold;
};

Grade grade(const std::optional<Answer>& answer, const Query& query);

// SQuAD-style normalization: lowercase, punctuation to spaces, articles
// dropped, whitespace collapsed.
std::string squad_normalize(const std::string& s);
double token_f1(const std::string& prediction, const std::string& gold);

}  // namespace echo
