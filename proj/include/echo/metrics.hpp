#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "echo/extract.hpp"

namespace echo {

struct MethodResult {
    std::string method_id;
    std::string dataset;
    int n = 0;
    std::optional<double> accuracy;
    std::optional<double> mean_f1;
    std::string transcripts_ref;
};

double accuracy(const std::vector<Grade>& grades);
double mean_f1(const std::vector<Grade>& grades);

// Sentence-level BLEU-4 on whitespace tokens, add-one smoothing on n-gram
// precisions for n >= 2, standard brevity penalty, scaled x100.
double bleu(const std::string& candidate, const std::string& reference);

struct RetentionCounts {
    std::size_t original_tokens = 0;
    std::size_t rephrase_tokens = 0;
    double retention = 0.0;  // multiset-intersection fraction of the original
};

RetentionCounts token_retention(const std::string& original, const std::string& rephrase);

struct RephraseStats {
    double mean_original_tokens = 0.0;
    double mean_rephrase_tokens = 0.0;
    double retention_fraction = 0.0;
    double bleu = 0.0;
};

struct DeltaRow {
    std::string method_id;
    std::string cell;  // "20.7(+4.3)", baseline rendered without a delta
    bool is_baseline = false;
};

// Rows in input order; values and deltas on the x100 scale, one decimal,
// deltas computed before rounding.
std::vector<DeltaRow> delta_table(const std::vector<MethodResult>& results,
                                  const std::string& baseline_id);

std::string format_percent_cell(double value, std::optional<double> baseline);

}  // namespace echo
