#include "echo/harness.hpp"

#include <chrono>
#include <stdexcept>

namespace echo {

MethodResult aggregate_grades(const std::string& method_id, const Dataset& dataset,
                              const std::vector<Grade>& grades,
                              const std::string& transcripts_ref) {
    if (grades.empty())
        throw std::runtime_error("no grades to aggregate for " + method_id + " on " + dataset.name);
    MethodResult result;
    result.method_id = method_id;
    result.dataset = dataset.name;
    result.n = static_cast<int>(grades.size());
    result.transcripts_ref = transcripts_ref;
    if (grades.front().f1) {
        result.mean_f1 = mean_f1(grades);
    } else {
        result.accuracy = accuracy(grades);
    }
    return result;
}

EvalOutcome evaluate_method(const Dataset& dataset, const MethodConfig& config,
                            const ExemplarSet* exemplars, Backend& backend,
                            const EvalOptions& opts) {
    validate_method_config(config);
    if (config.shot_mode == ShotMode::few_shot && !exemplars)
        throw std::runtime_error("method " + config.id + " needs a loaded exemplar set");

    const auto started = std::chrono::steady_clock::now();

    std::vector<StagePlan> plans;
    plans.reserve(dataset.queries.size());
    for (const auto& q : dataset.queries) plans.push_back(plan_stages(q, config, exemplars));

    auto tag_for = [&](const Query& q, int stage) {
        return dataset.name + "/" + config.id + "/" + q.id + "/s" + std::to_string(stage + 1);
    };

    std::vector<CompletionRequest> first_round;
    first_round.reserve(dataset.queries.size());
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        first_round.push_back({opts.model, plans[i].stages[0].prompt_prefix,
                               plans[i].stages[0].decode, tag_for(dataset.queries[i], 0)});
    }
    const auto first_responses = complete_many(backend, first_round, opts.max_in_flight);

    // Stage-2 prompts splice the stage-1 completion between the stage-1
    // prefix and the extraction instruction.
    std::vector<CompletionRequest> second_round;
    std::vector<std::size_t> second_index;
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        if (plans[i].stages.size() < 2) continue;
        if (first_responses[i].finish_reason == FinishReason::error) continue;
        std::string prompt = first_round[i].prompt + first_responses[i].text + "\n" +
                             plans[i].stages[1].prompt_prefix;
        second_round.push_back({opts.model, std::move(prompt), plans[i].stages[1].decode,
                                tag_for(dataset.queries[i], 1)});
        second_index.push_back(i);
    }
    const auto second_responses = complete_many(backend, second_round, opts.max_in_flight);

    std::vector<const CompletionResponse*> final_by_query(dataset.queries.size(), nullptr);
    std::vector<const CompletionRequest*> second_by_query(dataset.queries.size(), nullptr);
    for (std::size_t k = 0; k < second_index.size(); ++k) {
        final_by_query[second_index[k]] = &second_responses[k];
        second_by_query[second_index[k]] = &second_round[k];
    }

    const auto elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - started)
                                .count();
    const long long per_query_ms =
        opts.hermetic_timing || dataset.queries.empty()
            ? 0
            : elapsed_ms / static_cast<long long>(dataset.queries.size());

    EvalOutcome outcome;
    std::vector<Grade> grades;
    grades.reserve(dataset.queries.size());
    for (std::size_t i = 0; i < dataset.queries.size(); ++i) {
        const Query& query = dataset.queries[i];
        const bool two_stage = plans[i].stages.size() == 2;

        Transcript t;
        t.query_id = query.id;
        t.method_id = config.id;
        t.dataset = dataset.name;
        t.wall_time_ms = per_query_ms;
        t.stages.push_back({first_round[i].prompt, first_responses[i].text,
                            first_responses[i].finish_reason, first_responses[i].prompt_tokens,
                            first_responses[i].completion_tokens});

        bool errored = first_responses[i].finish_reason == FinishReason::error;
        std::string final_text;
        if (two_stage) {
            if (const CompletionResponse* resp = final_by_query[i]) {
                t.stages.push_back({second_by_query[i]->prompt, resp->text, resp->finish_reason,
                                    resp->prompt_tokens, resp->completion_tokens});
                errored = errored || resp->finish_reason == FinishReason::error;
                // Re-attach the extraction instruction so "answer is" parsing
                // sees the full sentence the model was completing.
                final_text = plans[i].stages[1].prompt_prefix + resp->text;
            } else {
                // Stage 2 never ran; keep one record per planned stage.
                t.stages.push_back({"", "", FinishReason::error, 0, 0});
                errored = true;
            }
        } else {
            final_text = first_responses[i].text;
        }

        if (errored) ++outcome.errors;

        if (config.echo) {
            t.parsed = split_echo_output(first_responses[i].text, config);
        } else {
            t.parsed.reasoning = two_stage ? first_responses[i].text : final_text;
        }
        if (!errored) {
            if (auto tail = answer_tail(final_text)) t.parsed.raw_answer = *tail;
            t.parsed.answer = extract_answer(final_text, query.task_kind);
        }
        t.grade = grade(t.parsed.answer, query);
        grades.push_back(t.grade);
        outcome.transcripts.push_back(std::move(t));
    }

    outcome.result = aggregate_grades(config.id, dataset, grades, "transcripts.jsonl");
    return outcome;
}

}  // namespace echo
