#pragma once

#include <map>
#include <string>
#include <vector>

#include "echo/harness.hpp"

namespace echo::ablation {

struct RephraseRecord {
    std::string query_id;
    RephraseStructure structure = RephraseStructure::compound;
    std::string rephrase;
};

void save_rephrase_corpus(const std::vector<RephraseRecord>& corpus, const std::string& path);
std::vector<RephraseRecord> load_rephrase_corpus(const std::string& path);

// query_id -> rephrase, the shape run_augmentation consumes.
std::map<std::string, std::string> corpus_to_map(const std::vector<RephraseRecord>& corpus);

// Token counts, retention and BLEU of a corpus against its source queries.
RephraseStats corpus_stats(const Dataset& dataset, const std::vector<RephraseRecord>& corpus);

struct StandaloneOutcome {
    std::vector<RephraseRecord> corpus;
    MethodResult result;
    int rephrase_failures = 0;
    std::vector<Transcript> transcripts;
};

/// Two-phase pipeline: phase 1 elicits only the rephrase (generation stops at
/// the answer lead-in); phase 2 answers the rephrase alone, against exemplars
/// whose questions are themselves the rephrases.  Failures are graded
/// incorrect unless exclude_failures is set.
StandaloneOutcome run_standalone_rephrase(const Dataset& dataset, const MethodConfig& config,
                                          const ExemplarSet& exemplars, Backend& backend,
                                          const EvalOptions& opts,
                                          bool exclude_failures = false);

/// Supplies a precomputed rephrase inside every "Q:" block so the model
/// generates only the answer; one completion per query.
MethodResult run_augmentation(const Dataset& dataset,
                              const std::map<std::string, std::string>& rephrase_corpus,
                              const MethodConfig& config, const ExemplarSet& exemplars,
                              Backend& backend, const EvalOptions& opts);

// One result per k, in input order; k = 1 issues exactly the base echo
// request set.
std::vector<MethodResult> run_multi_rephrase(const Dataset& dataset, const MethodConfig& config,
                                             const std::vector<int>& ks,
                                             const ExemplarSet& exemplars, Backend& backend,
                                             const EvalOptions& opts);

struct PerturbationOutcome {
    MethodResult result;
    int with_perturbation = 0;  // queries carrying a known injected sentence
    int echoed = 0;             // whose extracted rephrase contains it
    double echo_rate = 0.0;
};

PerturbationOutcome run_perturbation_probe(const Dataset& dataset, const MethodConfig& config,
                                           const ExemplarSet* exemplars, Backend& backend,
                                           const EvalOptions& opts);

}  // namespace echo::ablation
