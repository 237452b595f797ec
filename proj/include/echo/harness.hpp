#pragma once

#include <string>
#include <vector>

#include "echo/client.hpp"
#include "echo/extract.hpp"
#include "echo/metrics.hpp"

namespace echo {

struct StageRecord {
    std::string prompt;
    std::string completion;
    FinishReason finish_reason = FinishReason::stop;
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

/// Complete record of one query's evaluation under one method.
struct Transcript {
    std::string query_id;
    std::string method_id;
    std::string dataset;
    std::vector<StageRecord> stages;
    ParsedCompletion parsed;
    Grade grade;
    long long wall_time_ms = 0;
};

struct EvalOptions {
    std::string model = "default";
    int max_in_flight = 4;
    bool hermetic_timing = false;  // record 0 ms so reruns are byte-identical
};

struct EvalOutcome {
    std::vector<Transcript> transcripts;
    MethodResult result;
    int errors = 0;  // completions that finished with an error
};

// Plans, executes (batched through complete_many), parses and grades every
// query of the dataset under one method.
EvalOutcome evaluate_method(const Dataset& dataset, const MethodConfig& config,
                            const ExemplarSet* exemplars, Backend& backend,
                            const EvalOptions& opts);

MethodResult aggregate_grades(const std::string& method_id, const Dataset& dataset,
                              const std::vector<Grade>& grades,
                              const std::string& transcripts_ref);

}  // namespace echo
