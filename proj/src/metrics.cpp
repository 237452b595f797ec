#include "echo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace echo {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> tokens;
    std::istringstream in(s);
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

}  // namespace

double accuracy(const std::vector<Grade>& grades) {
    if (grades.empty()) throw std::runtime_error("accuracy over an empty grade list");
    int correct = 0;
    for (const auto& g : grades) {
        if (!g.correct) throw std::runtime_error("accuracy expects boolean grades");
        if (*g.correct) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(grades.size());
}

double mean_f1(const std::vector<Grade>& grades) {
    if (grades.empty()) throw std::runtime_error("mean F1 over an empty grade list");
    double sum = 0.0;
    for (const auto& g : grades) {
        if (!g.f1) throw std::runtime_error("mean F1 expects F1 grades");
        sum += *g.f1;
    }
    return sum / static_cast<double>(grades.size());
}

double bleu(const std::string& candidate, const std::string& reference) {
    const auto cand = split_ws(candidate);
    const auto ref = split_ws(reference);
    if (cand.empty()) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, int> ref_counts;
        for (int i = 0; i + n <= static_cast<int>(ref.size()); ++i)
            ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];

        int total = 0;
        int matched = 0;
        std::map<std::vector<std::string>, int> cand_counts;
        for (int i = 0; i + n <= static_cast<int>(cand.size()); ++i)
            ++cand_counts[std::vector<std::string>(cand.begin() + i, cand.begin() + i + n)];
        for (const auto& [gram, count] : cand_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }

        double p;
        if (n == 1) {
            if (matched == 0) return 0.0;
            p = static_cast<double>(matched) / static_cast<double>(total);
        } else {
            // add-one smoothing for the higher-order precisions
            p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
        }
        log_sum += 0.25 * std::log(p);
    }

    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
    return 100.0 * brevity * std::exp(log_sum);
}

RetentionCounts token_retention(const std::string& original, const std::string& rephrase) {
    const auto orig = split_ws(original);
    if (orig.empty()) throw std::runtime_error("token retention needs a non-empty original");
    const auto reph = split_ws(rephrase);

    std::map<std::string, int> pool;
    for (const auto& t : orig) ++pool[t];
    int kept = 0;
    for (const auto& t : reph) {
        auto it = pool.find(t);
        if (it != pool.end() && it->second > 0) {
            ++kept;
            --it->second;
        }
    }
    RetentionCounts counts;
    counts.original_tokens = orig.size();
    counts.rephrase_tokens = reph.size();
    counts.retention = static_cast<double>(kept) / static_cast<double>(orig.size());
    return counts;
}

namespace {

std::string one_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string signed_one_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", v);
    std::string out = buf;
    if (out == "-0.0") out = "+0.0";
    return out;
}

double result_value(const MethodResult& r) {
    if (r.accuracy) return *r.accuracy;
    if (r.mean_f1) return *r.mean_f1;
    throw std::runtime_error("result for " + r.method_id + " carries no metric value");
}

}  // namespace

std::string format_percent_cell(double value, std::optional<double> baseline) {
    std::string cell = one_decimal(value * 100.0);
    if (baseline) cell += "(" + signed_one_decimal(value * 100.0 - *baseline * 100.0) + ")";
    return cell;
}

std::vector<DeltaRow> delta_table(const std::vector<MethodResult>& results,
                                  const std::string& baseline_id) {
    const MethodResult* baseline = nullptr;
    for (const auto& r : results) {
        if (r.method_id == baseline_id) {
            baseline = &r;
            break;
        }
    }
    if (!baseline) throw std::runtime_error("baseline method " + baseline_id + " not in results");
    for (const auto& r : results) {
        if (r.dataset != baseline->dataset)
            throw std::runtime_error("delta table mixes datasets " + r.dataset + " and " +
                                     baseline->dataset);
    }

    const double base_value = result_value(*baseline);
    std::vector<DeltaRow> rows;
    rows.reserve(results.size());
    for (const auto& r : results) {
        DeltaRow row;
        row.method_id = r.method_id;
        row.is_baseline = r.method_id == baseline_id;
        row.cell = row.is_baseline ? format_percent_cell(result_value(r), std::nullopt)
                                   : format_percent_cell(result_value(r), base_value);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace echo
