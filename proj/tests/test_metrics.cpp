#include "echo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace echo {
namespace {

Grade correct(bool value) {
    Grade g;
    g.correct = value;
    return g;
}

Grade f1_grade(double value) {
    Grade g;
    g.f1 = value;
    return g;
}

TEST(Accuracy, CountRatio) {
    EXPECT_DOUBLE_EQ(accuracy({correct(true), correct(true), correct(false), correct(true)}),
                     0.75);
    EXPECT_DOUBLE_EQ(accuracy({correct(true), correct(true)}), 1.0);
}

TEST(Accuracy, CountingOracle) {
    // 200 grades, 124 correct, laid out deterministically.
    std::vector<Grade> grades;
    for (int i = 0; i < 200; ++i) grades.push_back(correct(i < 124));
    EXPECT_DOUBLE_EQ(accuracy(grades), 0.62);
}

TEST(Accuracy, ErrorsOnEmptyOrMixed) {
    EXPECT_THROW(accuracy({}), std::runtime_error);
    EXPECT_THROW(accuracy({correct(true), f1_grade(1.0)}), std::runtime_error);
}

TEST(MeanF1, Mean) {
    EXPECT_DOUBLE_EQ(mean_f1({f1_grade(1.0), f1_grade(0.0)}), 0.5);
    EXPECT_DOUBLE_EQ(mean_f1({f1_grade(1.0), f1_grade(1.0)}), 1.0);
    EXPECT_NEAR(mean_f1({f1_grade(0.8), f1_grade(2.0 / 3.0), f1_grade(0.4)}),
                (0.8 + 2.0 / 3.0 + 0.4) / 3.0, 1e-9);
    EXPECT_THROW(mean_f1({}), std::runtime_error);
    EXPECT_THROW(mean_f1({f1_grade(1.0), correct(true)}), std::runtime_error);
}

TEST(MeanF1, PermutationInvariant) {
    std::vector<Grade> grades = {f1_grade(0.25), f1_grade(0.5), f1_grade(1.0), f1_grade(0.0)};
    double forward = mean_f1(grades);
    std::reverse(grades.begin(), grades.end());
    EXPECT_DOUBLE_EQ(mean_f1(grades), forward);
}

TEST(Bleu, IdentityAndEmpty) {
    EXPECT_DOUBLE_EQ(bleu("some non empty string", "some non empty string"), 100.0);
    EXPECT_DOUBLE_EQ(bleu("", "reference text"), 0.0);
    EXPECT_DOUBLE_EQ(bleu("one", "one"), 100.0);
}

// Frozen from an independent reference implementation of the same smoothing.
struct BleuCase {
    const char* candidate;
    const char* reference;
    double expected;
};

TEST(Bleu, MatchesReferenceImplementation) {
    const BleuCase cases[] = {
        {R"(the cat sat on the mat)", R"(the cat is on the mat)", 48.549177},
        {R"(a quick brown fox jumps over the lazy dog)",
         R"(the quick brown fox jumped over a lazy dog)", 34.464877},
        {R"(hello world)", R"(hello there world)", 51.002946},
        {R"(one two three four five six seven)", R"(one two three four five six seven eight)",
         86.687790},
        {R"(completely different words here)", R"(nothing shared at all between these)",
         0.000000},
        {R"(given that Pam is twice as young as Rena how old is Pam)",
         R"(if Pam is currently twice as young as Rena is how old is Pam now)", 48.981481},
        {R"(x)", R"(x)", 100.000000},
        {R"(x y)", R"(y x)", 84.089642},
        {R"(repeat repeat repeat repeat)", R"(repeat)", 31.947155},
        {R"(the population is 34.7% below the poverty line)",
         R"(34.7% of the population were below the poverty line)", 46.656343},
    };
    for (const auto& c : cases) {
        EXPECT_NEAR(bleu(c.candidate, c.reference), c.expected, 0.1)
            << c.candidate << " / " << c.reference;
    }
}

std::string random_sentence(std::mt19937& rng) {
    static const char* words[] = {"alpha", "beta", "gamma", "delta", "epsilon",
                                  "zeta",  "eta",  "theta", "iota",  "kappa"};
    int len = 1 + static_cast<int>(rng() % 12);
    std::string out;
    for (int i = 0; i < len; ++i) {
        if (i) out.push_back(' ');
        out += words[rng() % 10];
    }
    return out;
}

TEST(Bleu, PropertiesOverRandomStrings) {
    std::mt19937 rng(20240817);
    for (int i = 0; i < 100; ++i) {
        std::string x = random_sentence(rng);
        std::string y = random_sentence(rng);
        EXPECT_DOUBLE_EQ(bleu(x, x), 100.0) << x;
        double score = bleu(x, y);
        EXPECT_GE(score, 0.0);
        EXPECT_LE(score, 100.0);
    }
}

TEST(TokenRetention, Cases) {
    auto identity = token_retention("a b c", "a b c");
    EXPECT_DOUBLE_EQ(identity.retention, 1.0);
    EXPECT_EQ(identity.original_tokens, 3u);
    EXPECT_EQ(identity.rephrase_tokens, 3u);

    auto partial = token_retention("a b c", "a c");
    EXPECT_NEAR(partial.retention, 2.0 / 3.0, 1e-12);
    EXPECT_EQ(partial.original_tokens, 3u);
    EXPECT_EQ(partial.rephrase_tokens, 2u);

    EXPECT_DOUBLE_EQ(token_retention("a b c", "x y z").retention, 0.0);
    EXPECT_THROW(token_retention("", "a"), std::runtime_error);
}

TEST(TokenRetention, MultisetSemantics) {
    // The rephrase can not reuse one original token twice.
    EXPECT_NEAR(token_retention("a a b", "a a a").retention, 2.0 / 3.0, 1e-12);
}

TEST(TokenRetention, MonotoneUnderTokenDeletion) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::string original = random_sentence(rng);
        std::string rephrase = random_sentence(rng);
        auto full = token_retention(original, rephrase);
        // Delete the last token of the rephrase.
        auto cut = rephrase.rfind(' ');
        std::string shorter = cut == std::string::npos ? "" : rephrase.substr(0, cut);
        auto less = token_retention(original, shorter);
        EXPECT_LE(less.retention, full.retention + 1e-12);
    }
}

MethodResult result(const std::string& id, double acc, const std::string& dataset = "gsm8k") {
    MethodResult r;
    r.method_id = id;
    r.dataset = dataset;
    r.n = 100;
    r.accuracy = acc;
    return r;
}

TEST(DeltaTable, PaperRows) {
    auto rows = delta_table({result("zs", 0.164), result("zs-echo", 0.207)}, "zs");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_TRUE(rows[0].is_baseline);
    EXPECT_EQ(rows[0].cell, "16.4");
    EXPECT_EQ(rows[1].cell, "20.7(+4.3)");

    auto drop = delta_table({result("zs", 0.364), result("zs-echo", 0.352)}, "zs");
    EXPECT_EQ(drop[1].cell, "35.2(-1.2)");
}

TEST(DeltaTable, ZeroDelta) {
    auto rows = delta_table({result("a", 0.5), result("b", 0.5)}, "a");
    EXPECT_EQ(rows[1].cell, "50.0(+0.0)");
}

TEST(DeltaTable, Errors) {
    EXPECT_THROW(delta_table({result("a", 0.5)}, "missing"), std::runtime_error);
    EXPECT_THROW(delta_table({result("a", 0.5, "x"), result("b", 0.6, "y")}, "a"),
                 std::runtime_error);
}

TEST(DeltaTable, RoundTripWithinRoundingBound) {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        double base = static_cast<double>(rng() % 10000) / 10000.0;
        double value = static_cast<double>(rng() % 10000) / 10000.0;
        auto rows = delta_table({result("base", base), result("m", value)}, "base");
        const std::string& cell = rows[1].cell;
        auto paren = cell.find('(');
        ASSERT_NE(paren, std::string::npos);
        double rendered_value = std::stod(cell.substr(0, paren));
        double rendered_delta = std::stod(cell.substr(paren + 1, cell.size() - paren - 2));
        EXPECT_LE(std::abs(rendered_value - value * 100.0), 0.05 + 1e-9);
        EXPECT_LE(std::abs(rendered_delta - (value - base) * 100.0), 0.05 + 1e-9);
    }
}

TEST(FormatPercentCell, BaselineHasNoDelta) {
    EXPECT_EQ(format_percent_cell(0.493, std::nullopt), "49.3");
    EXPECT_EQ(format_percent_cell(0.511, 0.493), "51.1(+1.8)");
}

}  // namespace
}  // namespace echo
