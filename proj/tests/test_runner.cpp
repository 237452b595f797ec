#include "echo/runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include <gtest/gtest.h>

#include "httplib.h"
#include "json.hpp"

namespace echo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    EXPECT_TRUE(in) << path;
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::size_t line_count(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++n;
    }
    return n;
}

class RunWorkspace : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("echo-runner-" + std::to_string(::getpid()) + "-" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }

    std::string write(const std::string& name, const std::string& content) {
        auto path = dir_ / name;
        std::ofstream out(path);
        out << content;
        return path.string();
    }

    fs::path dir_;
};

json base_config(const fs::path& dir) {
    json script = json::array();
    script.push_back({{"matcher", "substring"},
                      {"pattern", "What is 2 plus 3?"},
                      {"response", " It is 5. Therefore, the answer is 5."}});
    script.push_back({{"matcher", "substring"},
                      {"pattern", "What is 10 minus 4?"},
                      {"response", " It is 7. Therefore, the answer is 7."}});
    script.push_back({{"matcher", "substring"}, {"pattern", ""}, {"response", " The answer is 5."}});

    json config;
    config["run_name"] = "demo";
    config["model"] = "mock";
    config["backend"] = {{"kind", "scripted"}, {"script", script}};
    config["datasets"] = json::array();
    config["datasets"].push_back({{"name", "mini"}, {"path", "mini.jsonl"}});
    config["methods"] = json::array({"zs", "zs-cot"});
    config["baseline_method"] = "zs";
    config["max_in_flight"] = 2;
    config["output_dir"] = (dir / "runs").string();
    return config;
}

const char* kMiniDataset =
    R"({"id":"a","task_kind":"numeric","question":"What is 2 plus 3?","golds":["5"]})"
    "\n"
    R"({"id":"b","task_kind":"numeric","question":"What is 10 minus 4?","golds":["6"]})"
    "\n";

TEST_F(RunWorkspace, GridShapeAndReportCell) {
    write("mini.jsonl", kMiniDataset);
    auto config_path = write("config.json", base_config(dir_).dump(2));

    auto config = load_experiment_config(config_path);
    auto run_dir = run_experiment(config);

    EXPECT_EQ(line_count(fs::path(run_dir) / "transcripts.jsonl"), 4u);  // 2 queries x 2 methods
    EXPECT_EQ(line_count(fs::path(run_dir) / "results.jsonl"), 2u);
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / "report.md"));
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / "report.csv"));

    // baseline gets 5 and 7 (one right), cot path answers 5 for both (one right)
    const std::string report = slurp(fs::path(run_dir) / "report.md");
    EXPECT_NE(report.find("| zs |"), std::string::npos) << report;
    EXPECT_NE(report.find("50.0"), std::string::npos) << report;
}

TEST_F(RunWorkspace, BaselineMissingFailsBeforeAnyCall) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    config["baseline_method"] = "not-a-method";
    auto config_path = write("config.json", config.dump(2));
    auto parsed = load_experiment_config(config_path);
    EXPECT_THROW(run_experiment(parsed), std::runtime_error);
    EXPECT_FALSE(fs::exists(dir_ / "runs" / "demo" / "results.jsonl"));
}

TEST_F(RunWorkspace, CachedRerunIsByteIdenticalWithZeroBackendCalls) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    config["backend"]["cache_dir"] = (dir_ / "cache").string();
    auto config_path = write("config.json", config.dump(2));
    auto parsed = load_experiment_config(config_path);

    auto run_dir = run_experiment(parsed);
    const std::string report1 = slurp(fs::path(run_dir) / "report.md");
    const std::string transcripts1 = slurp(fs::path(run_dir) / "transcripts.jsonl");

    // Replay: the cache now answers everything; a scripted fallback that
    // would change answers must never be consulted.
    json replay = config;
    replay["backend"] = {{"kind", "replay"}, {"cache_dir", (dir_ / "cache").string()}};
    auto replay_path = write("replay.json", replay.dump(2));
    auto replay_config = load_experiment_config(replay_path);
    auto run_dir2 = run_experiment(replay_config);

    EXPECT_EQ(slurp(fs::path(run_dir2) / "report.md"), report1);
    EXPECT_EQ(slurp(fs::path(run_dir2) / "transcripts.jsonl"), transcripts1);
}

TEST_F(RunWorkspace, NoHiddenStateAfterDeletingOutputsAndCache) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    config["backend"]["cache_dir"] = (dir_ / "cache").string();
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));

    auto run_dir = run_experiment(parsed);
    const std::string report = slurp(fs::path(run_dir) / "report.md");
    const std::string transcripts = slurp(fs::path(run_dir) / "transcripts.jsonl");
    const std::string results = slurp(fs::path(run_dir) / "results.jsonl");

    fs::remove_all(run_dir);
    fs::remove_all(dir_ / "cache");

    auto run_dir2 = run_experiment(parsed);
    EXPECT_EQ(slurp(fs::path(run_dir2) / "report.md"), report);
    EXPECT_EQ(slurp(fs::path(run_dir2) / "transcripts.jsonl"), transcripts);
    EXPECT_EQ(slurp(fs::path(run_dir2) / "results.jsonl"), results);
}

TEST_F(RunWorkspace, DropSubsetEntryFiltersOnLoad) {
    write("drop.jsonl",
          R"({"passage":"Jones ran a 27-yard TD.","question":"How many yards?","answers":["27"]})"
          "\n"
          R"({"passage":"The town population at the 2010 census was 2,213.","question":"How many people?","answers":["2213"]})"
          "\n");
    json config = base_config(dir_);
    config["datasets"] = json::array();
    config["datasets"].push_back({{"name", "drop-football"},
                                  {"path", "drop.jsonl"},
                                  {"schema", "drop"},
                                  {"subset", "football"}});
    config["methods"] = json::array({"zs"});
    config["baseline_method"] = "zs";
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    auto run_dir = run_experiment(parsed);
    EXPECT_EQ(line_count(fs::path(run_dir) / "transcripts.jsonl"), 1u);
    const std::string transcripts = slurp(fs::path(run_dir) / "transcripts.jsonl");
    EXPECT_NE(transcripts.find("27-yard"), std::string::npos);
    EXPECT_EQ(transcripts.find("census"), std::string::npos);
}

TEST_F(RunWorkspace, AbortsWhenFailureRateExceedsThreshold) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    // Script matching nothing: every completion errors out.
    config["backend"]["script"] = json::array(
        {{{"matcher", "exact"}, {"pattern", "never"}, {"response", "x"}}});
    config["abort_error_rate"] = 0.4;
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    EXPECT_THROW(run_experiment(parsed), std::runtime_error);
}

TEST_F(RunWorkspace, ScriptPathLoadsAnOnDiskScript) {
    write("mini.jsonl", kMiniDataset);
    write("script.jsonl",
          R"({"matcher":"substring","pattern":"","response":" The answer is 5."})"
          "\n");
    json config = base_config(dir_);
    config["backend"].erase("script");
    config["backend"]["script_path"] = "script.jsonl";
    config["methods"] = json::array({"zs"});
    config["baseline_method"] = "zs";
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    auto run_dir = run_experiment(parsed);
    EXPECT_EQ(line_count(fs::path(run_dir) / "results.jsonl"), 1u);
}

TEST_F(RunWorkspace, StageOneErrorStillRecordsBothPlannedStages) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    // zs-cot plans two stages; an unmatched script errors out stage 1.
    config["backend"]["script"] = json::array(
        {{{"matcher", "exact"}, {"pattern", "never"}, {"response", "x"}}});
    config["methods"] = json::array({"zs-cot"});
    config["baseline_method"] = "zs-cot";
    config["abort_error_rate"] = 1.0;
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    auto run_dir = run_experiment(parsed);
    std::ifstream in(fs::path(run_dir) / "transcripts.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto rec = json::parse(line);
        EXPECT_EQ(rec.at("stages").size(), 2u);
        EXPECT_FALSE(rec.at("grade").at("correct").get<bool>());
    }
}

TEST_F(RunWorkspace, CoinFlipGeneratorEntry) {
    json config = base_config(dir_);
    config["datasets"] = json::array();
    config["datasets"].push_back(
        {{"name", "coin"}, {"generator", {{"n", 6}, {"flips_per_sample", 2}, {"seed", 11}}}});
    config["methods"] = json::array({"zs"});
    config["baseline_method"] = "zs";
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    auto run_dir = run_experiment(parsed);
    EXPECT_EQ(line_count(fs::path(run_dir) / "transcripts.jsonl"), 6u);
}

TEST_F(RunWorkspace, RunSeedFeedsGeneratorsWithoutTheirOwn) {
    json config = base_config(dir_);
    config["seed"] = 42;
    config["datasets"] = json::array();
    config["datasets"].push_back({{"name", "coin"}, {"generator", {{"n", 5}}}});
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    ASSERT_TRUE(parsed.datasets[0].generator);
    EXPECT_EQ(parsed.datasets[0].generator->seed, 42u);
    EXPECT_EQ(load_dataset_entry(parsed.datasets[0]),
              [] {
                  auto d = generate_coin_flip(5, 2, 42);
                  d.name = "coin";
                  return d;
              }());

    // An explicit generator seed still wins.
    config["datasets"][0]["generator"]["seed"] = 7;
    auto pinned = load_experiment_config(write("config2.json", config.dump(2)));
    EXPECT_EQ(pinned.datasets[0].generator->seed, 7u);
}

TEST_F(RunWorkspace, RenderReportFlagsGaps) {
    fs::create_directories(dir_ / "run");
    std::ofstream results(dir_ / "run" / "results.jsonl");
    results << R"({"method_id":"zs","dataset":"d1","n":4,"accuracy":0.5})" << "\n";
    results << R"({"method_id":"echo","dataset":"d1","n":4,"accuracy":0.75})" << "\n";
    results << R"({"method_id":"echo","dataset":"d2","n":4,"accuracy":1.0})" << "\n";
    results.close();
    render_report((dir_ / "run").string());
    const std::string report = slurp(dir_ / "run" / "report.md");
    EXPECT_NE(report.find("75.0(+25.0)"), std::string::npos) << report;
    EXPECT_NE(report.find("missing results"), std::string::npos) << report;
    const std::string csv = slurp(dir_ / "run" / "report.csv");
    EXPECT_NE(csv.find("method,d1,d2"), std::string::npos) << csv;
}

TEST_F(RunWorkspace, ReportIncludesRephraseStatsWhenPresent) {
    write("mini.jsonl", kMiniDataset);
    auto parsed = load_experiment_config(write("config.json", base_config(dir_).dump(2)));
    auto run_dir = run_experiment(parsed);
    {
        std::ofstream stats(fs::path(run_dir) / "rephrase_stats.jsonl");
        stats << R"({"corpus":"mini-compound","mean_original_tokens":56.8,)"
              << R"("mean_rephrase_tokens":52.1,"retention_fraction":0.91,"bleu":70.5})"
              << "\n";
    }
    render_report(run_dir);
    const std::string report = slurp(fs::path(run_dir) / "report.md");
    EXPECT_NE(report.find("Rephrase statistics"), std::string::npos);
    EXPECT_NE(report.find("70.5"), std::string::npos);
}

TEST_F(RunWorkspace, HttpBackendEndToEnd) {
    httplib::Server server;
    server.Post("/v1/completions", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        const std::string prompt = body.at("prompt").get<std::string>();
        std::string text = prompt.find("What is 2 plus 3?") != std::string::npos
                               ? " Therefore, the answer is 5."
                               : " Therefore, the answer is 0.";
        nlohmann::json reply = {{"choices", {{{"text", text}, {"finish_reason", "stop"}}}},
                                {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 6}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    config["backend"] = {{"kind", "http"},
                         {"endpoint", "http://127.0.0.1:" + std::to_string(port) +
                                          "/v1/completions"}};
    config["methods"] = json::array({"zs"});
    config["baseline_method"] = "zs";
    auto parsed = load_experiment_config(write("config.json", config.dump(2)));
    auto run_dir = run_experiment(parsed);

    server.stop();
    listener.join();

    const std::string report = slurp(fs::path(run_dir) / "report.md");
    EXPECT_NE(report.find("50.0"), std::string::npos) << report;
    const std::string transcripts = slurp(fs::path(run_dir) / "transcripts.jsonl");
    EXPECT_NE(transcripts.find("\"prompt_tokens\":7"), std::string::npos);
}

TEST(EvaluateMethod, QuotedEchoStagePipeline) {
    Dataset d;
    d.name = "one";
    d.queries = {{"q1", TaskKind::numeric, "What is 40 plus 2?", std::nullopt, std::nullopt,
                  {"42"}, {}}};

    // Stage 1 ends with the opening quote; the completion closes it and the
    // stage-2 extraction names the answer.
    std::vector<ScriptEntry> script = {
        {ScriptEntry::Matcher::substring, "What is 40 plus 2?\" It", " 42."},
        {ScriptEntry::Matcher::substring, "Let's repeat the question. \"",
         "What is 40 plus 2?\" It must be 42."},
    };
    ScriptedBackend backend(script);

    MethodConfig cfg = preset("zs-echo-repeat");
    EvalOptions opts;
    opts.model = "mock";
    opts.hermetic_timing = true;
    auto outcome = evaluate_method(d, cfg, nullptr, backend, opts);

    ASSERT_EQ(outcome.transcripts.size(), 1u);
    const auto& t = outcome.transcripts[0];
    ASSERT_EQ(t.stages.size(), 2u);
    EXPECT_TRUE(t.stages[0].prompt.ends_with("Let's repeat the question. \""));
    ASSERT_EQ(t.parsed.rephrases.size(), 1u);
    EXPECT_EQ(t.parsed.rephrases[0], "What is 40 plus 2?");
    EXPECT_EQ(t.parsed.reasoning, " It must be 42.");
    ASSERT_TRUE(t.parsed.answer);
    EXPECT_EQ(to_string(t.parsed.answer->number), "42");
    EXPECT_TRUE(*t.grade.correct);
    EXPECT_DOUBLE_EQ(*outcome.result.accuracy, 1.0);
}

TEST(GenerateExemplarRephrases, RepeatNeedsNoBackendCalls) {
    auto set = load_bundled_exemplars("arith_main");
    ScriptedBackend backend({});
    RephraseGenReport report;
    auto out = generate_exemplar_rephrases(set, {RephraseStructure::repeat}, backend, "m",
                                           &report);
    EXPECT_EQ(backend.calls(), 0u);
    EXPECT_EQ(report.backend_calls, 0);
    for (const auto& ex : out.exemplars)
        EXPECT_EQ(ex.rephrases.at(RephraseStructure::repeat), ex.question);
}

TEST(GenerateExemplarRephrases, OneCallPerExemplarStructurePair) {
    auto set = load_bundled_exemplars("arith_main");
    ASSERT_EQ(set.exemplars.size(), 8u);
    ScriptedBackend backend({{ScriptEntry::Matcher::substring, "Rephrase the following query",
                              "Given that things happen, what is the result?"}});
    RephraseGenReport report;
    auto out = generate_exemplar_rephrases(
        set,
        {RephraseStructure::compound, RephraseStructure::question_first,
         RephraseStructure::simple},
        backend, "m", &report);
    EXPECT_EQ(backend.calls(), 24u);
    EXPECT_EQ(report.backend_calls, 24);
    EXPECT_TRUE(report.complete());
    for (const auto& ex : out.exemplars) {
        EXPECT_EQ(ex.rephrases.at(RephraseStructure::compound),
                  "Given that things happen, what is the result?");
    }
}

TEST(GenerateExemplarRephrases, EmptyCompletionMarksTheSetIncomplete) {
    auto set = load_bundled_exemplars("arith_long");
    ScriptedBackend backend({{ScriptEntry::Matcher::substring, "compound sentences", ""},
                             {ScriptEntry::Matcher::substring, "", "a fine rephrase"}});
    RephraseGenReport report;
    auto out = generate_exemplar_rephrases(
        set, {RephraseStructure::compound, RephraseStructure::simple}, backend, "m", &report);
    EXPECT_FALSE(report.complete());
    EXPECT_EQ(report.empty_cells.size(), set.exemplars.size());
    for (const auto& ex : out.exemplars) {
        EXPECT_EQ(ex.rephrases.count(RephraseStructure::compound), 0u);
        EXPECT_EQ(ex.rephrases.at(RephraseStructure::simple), "a fine rephrase");
    }
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ECHOEVAL_BIN) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

TEST_F(RunWorkspace, CliSubcommands) {
    write("mini.jsonl", kMiniDataset);
    auto config_path = write("config.json", base_config(dir_).dump(2));

    EXPECT_EQ(run_cli("validate " + config_path), 0);
    EXPECT_EQ(run_cli("run " + config_path), 0);
    EXPECT_TRUE(fs::exists(dir_ / "runs" / "demo" / "report.md"));
    EXPECT_EQ(run_cli("report " + (dir_ / "runs" / "demo").string()), 0);

    const std::string coin_out = (dir_ / "coin.jsonl").string();
    EXPECT_EQ(run_cli("gen-coinflip --n 12 --flips 2 --seed 3 --out " + coin_out), 0);
    auto coin = load_queries(coin_out, DatasetSchema::native_jsonl);
    EXPECT_EQ(coin.queries.size(), 12u);

    // validation failure exits non-zero
    json bad = base_config(dir_);
    bad["baseline_method"] = "nope";
    auto bad_path = write("bad.json", bad.dump(2));
    EXPECT_NE(run_cli("validate " + bad_path), 0);
}

TEST_F(RunWorkspace, CliRephraseExemplars) {
    write("mini.jsonl", kMiniDataset);
    json config = base_config(dir_);
    config["backend"]["script"] = json::array(
        {{{"matcher", "substring"},
          {"pattern", "Rephrase the following query"},
          {"response", "Given that numbers add up, what is the sum?"}}});
    auto config_path = write("config.json", config.dump(2));

    const std::string out_path = (dir_ / "rephrased.jsonl").string();
    EXPECT_EQ(run_cli("rephrase-exemplars arith_long --structures compound --out " + out_path +
                      " --config " + config_path),
              0);
    auto out = load_exemplar_set(out_path);
    ASSERT_EQ(out.exemplars.size(), 4u);
    EXPECT_EQ(out.exemplars[0].rephrases.at(RephraseStructure::compound),
              "Given that numbers add up, what is the sum?");
}

}  // namespace
}  // namespace echo
