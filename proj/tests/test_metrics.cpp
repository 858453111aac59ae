#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "persodpo/metrics.hpp"
#include "support/mock_openai.hpp"

using namespace persodpo;

namespace {

std::vector<EvaluatorAdapter> file_adapters(const std::string& path) {
    std::vector<EvaluatorAdapter> out;
    for (MetricId m : {MetricId::c, MetricId::p, MetricId::ue, MetricId::coh_unieval}) {
        EvaluatorAdapter a;
        a.metric_id = m;
        a.kind = AdapterKind::precomputed_file;
        a.source = path;
        out.push_back(a);
    }
    return out;
}

CandidateResponse candidate(const std::string& rec, const std::string& model) {
    CandidateResponse c;
    c.record_id = rec;
    c.model_id = model;
    c.raw_output = "{\"response\": \"hello\"}";
    c.parsed_response = "hello";
    c.format_valid = true;
    return c;
}

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream(path) << content;
    return path;
}

}  // namespace

TEST_CASE("precomputed file covering all candidates yields a complete map") {
    auto path = write_temp("persodpo_metrics_full.jsonl",
                           R"({"record_id":"r1","model_id":"a","c":0.4,"p":0.2,"ue":0.6,"coh_unieval":0.8})"
                           "\n");
    auto scores = fetch_scores({candidate("r1", "a")}, file_adapters(path), Strictness::strict);
    const auto& raw = scores.at({"r1", "a"});
    REQUIRE(raw.complete());
    CHECK(*raw.c == 0.4);
    CHECK(*raw.coh_unieval == 0.8);
}

TEST_CASE("strict mode names the candidate and metric that is missing") {
    auto path = write_temp("persodpo_metrics_missing.jsonl",
                           R"({"record_id":"r1","model_id":"a","c":0.4,"p":0.2,"coh_unieval":0.8})"
                           "\n");
    CHECK_THROWS_WITH(fetch_scores({candidate("r1", "a")}, file_adapters(path), Strictness::strict),
                      Catch::Matchers::ContainsSubstring("ue") &&
                          Catch::Matchers::ContainsSubstring("r1"));
}

TEST_CASE("lenient mode flags incomplete candidates instead of failing") {
    auto path = write_temp("persodpo_metrics_missing2.jsonl",
                           R"({"record_id":"r1","model_id":"a","c":0.4,"p":0.2,"coh_unieval":0.8})"
                           "\n");
    auto scores = fetch_scores({candidate("r1", "a")}, file_adapters(path), Strictness::lenient);
    CHECK_FALSE(scores.at({"r1", "a"}).complete());
}

TEST_CASE("adapter configuration requires exactly one adapter per metric") {
    auto path = write_temp("persodpo_metrics_dup.jsonl", "");
    auto adapters = file_adapters(path);
    SECTION("duplicate") {
        adapters.push_back(adapters[0]);
        CHECK_THROWS_AS(fetch_scores({}, adapters, Strictness::strict), CoreError);
    }
    SECTION("missing") {
        adapters.pop_back();
        CHECK_THROWS_AS(fetch_scores({}, adapters, Strictness::strict), CoreError);
    }
}

TEST_CASE("affine normalization maps raw scores") {
    auto path = write_temp("persodpo_metrics_affine.jsonl",
                           R"({"record_id":"r1","model_id":"a","c":-1.0,"p":0.5,"ue":0.5,"coh_unieval":0.5})"
                           "\n");
    auto adapters = file_adapters(path);
    // Map native [-1,1] consistency onto [0,1].
    adapters[0].scale = 0.5;
    adapters[0].offset = 0.5;
    auto scores = fetch_scores({candidate("r1", "a")}, adapters, Strictness::strict);
    CHECK(*scores.at({"r1", "a"}).c == 0.0);
    CHECK(*scores.at({"r1", "a"}).p == 0.5);  // identity elsewhere
}

TEST_CASE("aggregate computes the mean and total identities") {
    LfcConfig cfg;
    RawMetricScores raw;
    raw.c = 0.4;
    raw.p = 0.2;
    raw.ue = 0.6;
    raw.coh_unieval = 0.8;
    LfcResult lfc;
    lfc.s_length = 1.0;
    lfc.s_format = 1.0;
    lfc.s_lfc = 1.0;

    auto v = aggregate(raw, lfc, cfg);
    CHECK_THAT(v.s_metric, Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THAT(v.s_total, Catch::Matchers::WithinAbs(1.5, 1e-12));

    SECTION("zero case") {
        raw.c = raw.p = raw.ue = raw.coh_unieval = 0.0;
        LfcResult zero;
        CHECK(aggregate(raw, zero, cfg).s_total == 0.0);
    }
    SECTION("mean of constants") {
        for (double val : {0.0, 0.3, 1.0, -0.7}) {
            raw.c = raw.p = raw.ue = raw.coh_unieval = val;
            CHECK_THAT(aggregate(raw, lfc, cfg).s_metric, Catch::Matchers::WithinAbs(val, 1e-12));
        }
    }
    SECTION("missing metric is an error naming it") {
        raw.ue.reset();
        CHECK_THROWS_WITH(aggregate(raw, lfc, cfg), Catch::Matchers::ContainsSubstring("ue"));
    }
    SECTION("permutation invariance of the mean") {
        RawMetricScores perm;
        perm.c = *raw.coh_unieval;
        perm.p = *raw.ue;
        perm.ue = *raw.p;
        perm.coh_unieval = *raw.c;
        raw.ue = 0.6;
        CHECK(aggregate(raw, lfc, cfg).s_metric == aggregate(perm, lfc, cfg).s_metric);
    }
}

TEST_CASE("judge endpoint verdicts are parsed and normalized") {
    testing::MockOpenAIServer server([](const json& body) {
        auto prompt = body.at("messages").at(0).at("content").get<std::string>();
        // Verdict depends on the graded response so the rubric is exercised.
        return std::make_pair(200, prompt.find("hello") != std::string::npos ? std::string("0.8")
                                                                             : std::string("0.2"));
    });

    auto rubric = write_temp("persodpo_rubric.txt", "Grade this:\n{response}\nNumber only.");
    EvaluatorAdapter a;
    a.metric_id = MetricId::ue;
    a.kind = AdapterKind::judge_endpoint;
    a.source = server.base_url();
    a.rubric_path = rubric;
    a.scale = 0.5;
    a.offset = 0.1;
    double v = judge_score(a, a.rubric_path, "hello world");
    CHECK_THAT(v, Catch::Matchers::WithinAbs(0.8, 1e-12));  // raw verdict, pre-normalization

    auto path = write_temp("persodpo_metrics_rest.jsonl",
                           R"({"record_id":"r1","model_id":"a","c":0.1,"p":0.1,"coh_unieval":0.1})"
                           "\n");
    auto adapters = file_adapters(path);
    adapters[2] = a;  // ue via judge
    auto scores = fetch_scores({candidate("r1", "a")}, adapters, Strictness::strict);
    CHECK_THAT(*scores.at({"r1", "a"}).ue,
               Catch::Matchers::WithinAbs(0.5 * 0.8 + 0.1, 1e-12));
}

TEST_CASE("judge verdict extractor rejects non-numeric replies") {
    CHECK_THROWS_AS(detail::parse_verdict("no score here"), CoreError);
    CHECK_THROWS_AS(detail::parse_verdict("0.3 or maybe 0.7"), CoreError);
    CHECK(detail::parse_verdict("  0.75 ") == 0.75);
    CHECK(detail::parse_verdict("-1") == -1.0);
}
