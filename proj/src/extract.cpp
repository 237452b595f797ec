#include "echo/extract.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace echo {

namespace {

using std::size_t;

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string trimmed(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

long long gcd_ll(long long a, long long b) {
    a = std::abs(a);
    b = std::abs(b);
    while (b != 0) {
        long long t = a % b;
        a = b;
        b = t;
    }
    return a == 0 ? 1 : a;
}

Decimal make_decimal(long long num, long long den) {
    if (den == 0) throw std::logic_error("zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    long long g = gcd_ll(num, den);
    return {num / g, den / g};
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

bool nearly_equal(const Decimal& a, const Decimal& b) {
    // |a/ad - b/bd| <= 1/10000  <=>  |a*bd - b*ad| * 10000 <= ad*bd
    __int128 diff = static_cast<__int128>(a.num) * b.den - static_cast<__int128>(b.num) * a.den;
    if (diff < 0) diff = -diff;
    return diff * 10000 <= static_cast<__int128>(a.den) * b.den;
}

std::string to_string(const Decimal& d) {
    if (d.den == 1) return std::to_string(d.num);
    // Exact decimal expansion when the denominator is 2^a * 5^b.
    long long den = d.den;
    int twos = 0, fives = 0;
    while (den % 2 == 0) {
        den /= 2;
        ++twos;
    }
    while (den % 5 == 0) {
        den /= 5;
        ++fives;
    }
    if (den != 1) return std::to_string(d.num) + "/" + std::to_string(d.den);

    int digits = std::max(twos, fives);
    __int128 scaled = d.num;
    for (int i = twos; i < digits; ++i) scaled *= 2;
    for (int i = fives; i < digits; ++i) scaled *= 5;
    bool negative = scaled < 0;
    if (negative) scaled = -scaled;
    std::string raw;
    while (scaled > 0) {
        raw.push_back(static_cast<char>('0' + static_cast<int>(scaled % 10)));
        scaled /= 10;
    }
    while (static_cast<int>(raw.size()) <= digits) raw.push_back('0');
    std::reverse(raw.begin(), raw.end());
    std::string out = raw.substr(0, raw.size() - digits) + "." + raw.substr(raw.size() - digits);
    return negative ? "-" + out : out;
}

std::optional<Decimal> normalize_numeric(const std::string& s) {
    size_t i = 0;
    const size_t n = s.size();
    // Leading wrappers: whitespace, quotes, brackets, currency markers.
    while (i < n) {
        char c = s[i];
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '"' || c == '\'' ||
            c == '(' || c == '[' || c == '{' || c == '$' || c == ':' || c == '\\') {
            ++i;
        } else {
            break;
        }
    }
    if (i >= n) return std::nullopt;

    bool negative = false;
    if (s[i] == '+' || s[i] == '-') {
        negative = s[i] == '-';
        ++i;
    }
    while (i < n && s[i] == '$') ++i;  // "-$3" style

    std::string digits;
    bool seen_digit = false;
    bool seen_dot = false;
    long long frac_len = 0;
    while (i < n) {
        char c = s[i];
        if (is_digit(c)) {
            digits.push_back(c);
            seen_digit = true;
            if (seen_dot) ++frac_len;
            ++i;
        } else if (c == ',' && seen_digit && !seen_dot && i + 1 < n && is_digit(s[i + 1])) {
            ++i;  // thousands separator
        } else if (c == '.' && !seen_dot && i + 1 < n && is_digit(s[i + 1])) {
            seen_dot = true;
            ++i;
        } else {
            break;
        }
    }
    if (!seen_digit || digits.size() > 17) return std::nullopt;

    long long num = 0;
    for (char c : digits) num = num * 10 + (c - '0');
    if (negative) num = -num;
    long long den = 1;
    for (long long k = 0; k < frac_len; ++k) den *= 10;

    // Simple fractions like "3/2"; anything else after '/' is not one.
    if (!seen_dot && i < n && s[i] == '/' && i + 1 < n && is_digit(s[i + 1])) {
        size_t j = i + 1;
        std::string denom_digits;
        while (j < n && is_digit(s[j])) denom_digits.push_back(s[j++]);
        const bool more_slash = j < n && s[j] == '/';
        if (!more_slash && denom_digits.size() <= 17) {
            long long denom = 0;
            for (char c : denom_digits) denom = denom * 10 + (c - '0');
            if (denom != 0) return make_decimal(num, denom);
        }
    }
    return make_decimal(num, den);
}

std::optional<std::string> answer_tail(const std::string& text) {
    static const std::string marker = "answer is";
    const std::string lowered = lowercase(text);
    auto pos = lowered.rfind(marker);
    if (pos == std::string::npos) return std::nullopt;
    return text.substr(pos + marker.size());
}

namespace {

std::optional<std::string> first_choice_label(const std::string& text) {
    for (size_t i = 0; i + 2 < text.size(); ++i) {
        if (text[i] == '(' && std::isalpha(static_cast<unsigned char>(text[i + 1])) &&
            text[i + 2] == ')')
            return std::string(1, static_cast<char>(std::tolower(
                static_cast<unsigned char>(text[i + 1]))));
    }
    return std::nullopt;
}

std::optional<std::string> last_choice_label(const std::string& text) {
    for (size_t i = text.size(); i-- > 2;) {
        if (text[i] == ')' && std::isalpha(static_cast<unsigned char>(text[i - 1])) &&
            text[i - 2] == '(')
            return std::string(1, static_cast<char>(std::tolower(
                static_cast<unsigned char>(text[i - 1]))));
    }
    return std::nullopt;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> tokens;
    std::istringstream in(s);
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

std::string strip_token_punct(const std::string& token) {
    size_t b = 0, e = token.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(token[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(token[e - 1]))) --e;
    return token.substr(b, e - b);
}

std::optional<Decimal> last_number_token(const std::string& text) {
    std::optional<Decimal> last;
    for (const auto& token : split_ws(text)) {
        if (token.find_first_of("0123456789") == std::string::npos) continue;
        if (auto v = normalize_numeric(token)) last = v;
    }
    return last;
}

std::string strip_span(const std::string& tail) {
    std::string s = trimmed(tail);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
    s = trimmed(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return trimmed(s);
}

}  // namespace

std::optional<Answer> extract_answer(const std::string& text, TaskKind kind) {
    const auto tail = answer_tail(text);
    switch (kind) {
        case TaskKind::numeric: {
            if (tail) {
                if (auto v = normalize_numeric(*tail))
                    return Answer{TaskKind::numeric, *v, to_string(*v)};
            }
            if (auto v = last_number_token(text))
                return Answer{TaskKind::numeric, *v, to_string(*v)};
            return std::nullopt;
        }
        case TaskKind::multiple_choice: {
            if (tail) {
                if (auto label = first_choice_label(*tail))
                    return Answer{TaskKind::multiple_choice, {}, *label};
                for (const auto& token : split_ws(*tail)) {
                    std::string bare = strip_token_punct(token);
                    if (bare.size() == 1 && std::isalpha(static_cast<unsigned char>(bare[0])))
                        return Answer{TaskKind::multiple_choice, {},
                                      std::string(1, static_cast<char>(std::tolower(
                                          static_cast<unsigned char>(bare[0]))))};
                    break;  // only the first token may be a bare label
                }
            }
            if (auto label = last_choice_label(text))
                return Answer{TaskKind::multiple_choice, {}, *label};
            return std::nullopt;
        }
        case TaskKind::symbolic: {
            if (!tail) return std::nullopt;
            for (const auto& token : split_ws(*tail)) {
                std::string bare = lowercase(strip_token_punct(token));
                if (bare == "yes" || bare == "no") return Answer{TaskKind::symbolic, {}, bare};
                break;
            }
            return std::nullopt;
        }
        case TaskKind::span: {
            if (!tail) return std::nullopt;
            std::string span = strip_span(*tail);
            if (span.empty()) return std::nullopt;
            return Answer{TaskKind::span, {}, span};
        }
    }
    return std::nullopt;
}

ParsedCompletion split_echo_output(const std::string& text, const MethodConfig& config) {
    ParsedCompletion out;
    if (!config.echo) {
        out.reasoning = text;
        return out;
    }

    if (config.quoted_repetition) {
        // The opening quote came from the prompt; the rephrase ends at the
        // first closing quote.
        static const std::string closers[] = {"\"", "”", "“"};
        size_t best = std::string::npos;
        size_t closer_len = 0;
        for (const auto& c : closers) {
            auto pos = text.find(c);
            if (pos != std::string::npos && pos < best) {
                best = pos;
                closer_len = c.size();
            }
        }
        if (best == std::string::npos) {
            out.reasoning = text;
            return out;
        }
        out.rephrases.push_back(trimmed(text.substr(0, best)));
        out.reasoning = text.substr(best + closer_len);
        return out;
    }

    const std::string markers[] = {std::string(kRephraseMarker), std::string(kRepeatAgainMarker)};
    struct Hit {
        size_t pos;
        size_t len;
    };
    std::vector<Hit> hits;
    for (const auto& m : markers) {
        for (size_t pos = text.find(m); pos != std::string::npos; pos = text.find(m, pos + 1))
            hits.push_back({pos, m.size()});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });

    if (!hits.empty()) {
        const std::string lead_in(kAnswerLeadIn);
        const auto terminator = text.find(lead_in, hits.front().pos);

        // Only markers before the lead-in delimit rephrase segments; anything
        // later belongs to the reasoning verbatim.
        size_t usable = hits.size();
        if (terminator != std::string::npos) {
            usable = 0;
            while (usable < hits.size() && hits[usable].pos < terminator) ++usable;
        }
        const size_t keep =
            std::min(usable, static_cast<size_t>(std::max(config.num_rephrases, 1)));
        for (size_t i = 0; i < keep; ++i) {
            size_t start = hits[i].pos + hits[i].len;
            size_t end = i + 1 < hits.size() ? hits[i + 1].pos : std::string::npos;
            if (terminator != std::string::npos) end = std::min(end, terminator);
            if (end == std::string::npos) end = text.size();
            std::string segment = trimmed(text.substr(start, end - start));
            if (segment.size() >= 2 && segment.front() == '"' && segment.back() == '"')
                segment = segment.substr(1, segment.size() - 2);
            out.rephrases.push_back(std::move(segment));
        }
        if (keep < usable) {
            out.reasoning = text.substr(hits[keep].pos);  // surplus segments stay verbatim
        } else if (terminator != std::string::npos) {
            out.reasoning = text.substr(terminator + lead_in.size());
        } else if (keep < hits.size()) {
            out.reasoning = text.substr(hits[keep].pos);
        }
        std::string prefix = trimmed(text.substr(0, hits.front().pos));
        if (!prefix.empty()) out.reasoning = prefix + out.reasoning;
        return out;
    }

    // Unquoted zero-shot repetition: the repeated question ends at its
    // question mark; everything after is reasoning.
    if (config.shot_mode == ShotMode::zero_shot && config.echo == RephraseStructure::repeat) {
        auto pos = text.find('?');
        if (pos != std::string::npos && pos + 1 < text.size()) {
            out.rephrases.push_back(trimmed(text.substr(0, pos + 1)));
            out.reasoning = text.substr(pos + 1);
            return out;
        }
    }

    out.reasoning = text;  // degraded parse, never an error
    return out;
}

std::string squad_normalize(const std::string& s) {
    std::string spaced;
    spaced.reserve(s.size());
    for (unsigned char c : s) {
        if (std::ispunct(c)) {
            spaced.push_back(' ');
        } else {
            spaced.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    std::string out;
    for (const auto& token : split_ws(spaced)) {
        if (token == "a" || token == "an" || token == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += token;
    }
    return out;
}

double token_f1(const std::string& prediction, const std::string& gold) {
    const auto pred = split_ws(squad_normalize(prediction));
    const auto ref = split_ws(squad_normalize(gold));
    if (pred.empty() || ref.empty()) return pred == ref ? 1.0 : 0.0;

    std::map<std::string, int> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    int common = 0;
    for (const auto& t : pred) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            ++common;
            --it->second;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

Grade grade(const std::optional<Answer>& answer, const Query& query) {
    if (answer && answer->kind != query.task_kind)
        throw std::runtime_error("answer kind does not match query " + query.id);

    Grade g;
    switch (query.task_kind) {
        case TaskKind::numeric: {
            g.correct = false;
            if (!answer) return g;
            for (const auto& gold : query.golds) {
                auto gold_value = normalize_numeric(gold);
                if (gold_value && nearly_equal(answer->number, *gold_value)) {
                    g.correct = true;
                    g.matched_gold = gold;
                    return g;
                }
            }
            return g;
        }
        case TaskKind::multiple_choice: {
            g.correct = false;
            if (!answer) return g;
            const std::string label = lowercase(answer->text);
            int index = label.size() == 1 ? label[0] - 'a' : -1;
            for (const auto& gold : query.golds) {
                bool hit = lowercase(gold) == label;
                if (!hit && query.choices && index >= 0 &&
                    index < static_cast<int>(query.choices->size()))
                    hit = lowercase((*query.choices)[static_cast<size_t>(index)].label) ==
                          lowercase(gold);
                if (hit) {
                    g.correct = true;
                    g.matched_gold = gold;
                    return g;
                }
            }
            return g;
        }
        case TaskKind::symbolic: {
            g.correct = false;
            if (!answer) return g;
            for (const auto& gold : query.golds) {
                if (lowercase(gold) == lowercase(answer->text)) {
                    g.correct = true;
                    g.matched_gold = gold;
                    return g;
                }
            }
            return g;
        }
        case TaskKind::span: {
            g.f1 = 0.0;
            if (!answer) return g;
            for (const auto& gold : query.golds) {
                double f1 = token_f1(answer->text, gold);
                if (f1 > *g.f1) {
                    g.f1 = f1;
                    g.matched_gold = gold;
                }
            }
            return g;
        }
    }
    throw std::logic_error("unknown task kind");
}

}  // namespace echo
