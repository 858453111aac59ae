#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "persodpo/pair_forge.hpp"
#include "support/oracles.hpp"

using namespace persodpo;

namespace {

ScoredCandidate scored(const std::string& rec, const std::string& model, double s_total,
                       bool valid = true) {
    ScoredCandidate sc;
    sc.candidate.record_id = rec;
    sc.candidate.model_id = model;
    sc.candidate.raw_output = "raw output of " + model + " for " + rec;
    if (valid) sc.candidate.parsed_response = "response of " + model + " for " + rec;
    sc.candidate.format_valid = valid;
    sc.scores.s_total = s_total;
    sc.has_scores = true;
    return sc;
}

}  // namespace

TEST_CASE("forge_margin emits all ordered pairs above the threshold") {
    CandidatesByRecord by_record;
    by_record["r1"] = {scored("r1", "a", 1.5), scored("r1", "b", 0.9), scored("r1", "c", 0.2)};
    PairingPolicy policy;
    policy.margin_threshold = 0.5;
    policy.max_pairs_per_prompt = 0;

    auto pairs = forge_margin(by_record, policy, {});
    REQUIRE(pairs.size() == 3);  // margins 0.6, 1.3, 0.7 all >= 0.5
    // Sorted by descending margin within the record.
    CHECK_THAT(pairs[0].margin, Catch::Matchers::WithinAbs(1.3, 1e-12));
    CHECK_THAT(pairs[1].margin, Catch::Matchers::WithinAbs(0.7, 1e-12));
    CHECK_THAT(pairs[2].margin, Catch::Matchers::WithinAbs(0.6, 1e-12));
    for (const auto& p : pairs) p.validate();
}

TEST_CASE("single-candidate record yields no pairs") {
    CandidatesByRecord by_record;
    by_record["r1"] = {scored("r1", "a", 1.0)};
    CHECK(forge_margin(by_record, PairingPolicy{}, {}).empty());
}

TEST_CASE("equal totals yield no pair even at tau = 0") {
    CandidatesByRecord by_record;
    by_record["r1"] = {scored("r1", "a", 0.7), scored("r1", "b", 0.7)};
    PairingPolicy policy;
    policy.margin_threshold = 0.0;
    CHECK(forge_margin(by_record, policy, {}).empty());
}

TEST_CASE("missing scores are an error naming the candidate") {
    CandidatesByRecord by_record;
    by_record["r1"] = {scored("r1", "a", 1.0), scored("r1", "b", 0.2)};
    by_record["r1"][1].has_scores = false;
    CHECK_THROWS_WITH(forge_margin(by_record, PairingPolicy{}, {}),
                      Catch::Matchers::ContainsSubstring("r1") &&
                          Catch::Matchers::ContainsSubstring("b"));
}

TEST_CASE("max_pairs_per_prompt caps by descending margin") {
    CandidatesByRecord by_record;
    by_record["r1"] = {scored("r1", "a", 2.0), scored("r1", "b", 1.0), scored("r1", "c", 0.0)};
    PairingPolicy policy;
    policy.margin_threshold = 0.0;
    policy.max_pairs_per_prompt = 1;
    auto pairs = forge_margin(by_record, policy, {});
    REQUIRE(pairs.size() == 1);
    CHECK_THAT(pairs[0].margin, Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("forge_margin matches the brute-force oracle on random instances") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> n_cands(1, 8);
    std::uniform_real_distribution<double> score(0.0, 2.0);

    for (double tau : {0.0, 0.1, 0.5}) {
        for (int trial = 0; trial < 40; ++trial) {
            CandidatesByRecord by_record;
            int n = n_cands(rng);
            for (int i = 0; i < n; ++i)
                by_record["rec"].push_back(scored("rec", "m" + std::to_string(i), score(rng)));

            PairingPolicy policy;
            policy.margin_threshold = tau;
            policy.max_pairs_per_prompt = 0;
            auto got = forge_margin(by_record, policy, {});
            auto expected = testing::brute_force_margin(by_record, tau);

            REQUIRE(got.size() == expected.size());
            std::vector<testing::OraclePair> got_as_oracle;
            for (const auto& p : got)
                got_as_oracle.push_back({p.record_id, p.chosen_model, p.rejected_model, p.margin});
            std::sort(got_as_oracle.begin(), got_as_oracle.end());
            for (std::size_t i = 0; i < expected.size(); ++i) {
                CHECK(got_as_oracle[i].key() == expected[i].key());
                CHECK_THAT(got_as_oracle[i].margin,
                           Catch::Matchers::WithinAbs(expected[i].margin, 1e-12));
            }
        }
    }
}

TEST_CASE("no record contributes both (a,b) and (b,a)") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> score(0.0, 2.0);
    CandidatesByRecord by_record;
    for (int i = 0; i < 6; ++i)
        by_record["rec"].push_back(scored("rec", "m" + std::to_string(i), score(rng)));
    PairingPolicy policy;
    policy.margin_threshold = 0.0;
    policy.max_pairs_per_prompt = 0;
    auto pairs = forge_margin(by_record, policy, {});
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
        CHECK_FALSE(seen.count({p.rejected_model, p.chosen_model}));
        seen.insert({p.chosen_model, p.rejected_model});
        CHECK(p.margin > 0);
    }
}

TEST_CASE("forge_validity pairs valid with invalid candidates") {
    CandidatesByRecord by_record;
    for (int i = 0; i < 4; ++i)
        by_record["r1"].push_back(scored("r1", "v" + std::to_string(i), 1.0, true));
    for (int i = 0; i < 2; ++i)
        by_record["r1"].push_back(scored("r1", "i" + std::to_string(i), 0.0, false));

    PairingPolicy policy;
    policy.mode = PairingMode::format_validity;
    policy.max_pairs_per_prompt = 0;
    auto pairs = forge_validity(by_record, policy, {});
    CHECK(pairs.size() == 8);  // 4 valid x 2 invalid
    for (const auto& p : pairs) {
        CHECK(p.margin == 1.0);
        CHECK(p.pairing_mode == "format_validity");
        p.validate();
    }
}

TEST_CASE("forge_validity needs both groups") {
    PairingPolicy policy;
    policy.mode = PairingMode::format_validity;
    CandidatesByRecord all_valid, all_invalid;
    for (int i = 0; i < 6; ++i) {
        all_valid["r"].push_back(scored("r", "m" + std::to_string(i), 1.0, true));
        all_invalid["r"].push_back(scored("r", "m" + std::to_string(i), 0.0, false));
    }
    CHECK(forge_validity(all_valid, policy, {}).empty());
    CHECK(forge_validity(all_invalid, policy, {}).empty());
}

TEST_CASE("identical inputs produce byte-identical pair files") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> score(0.0, 2.0);
    CandidatesByRecord by_record;
    for (int r = 0; r < 5; ++r)
        for (int i = 0; i < 4; ++i)
            by_record["rec" + std::to_string(r)].push_back(
                scored("rec" + std::to_string(r), "m" + std::to_string(i), score(rng)));

    auto path_a = (std::filesystem::temp_directory_path() / "persodpo_pairs_a.jsonl").string();
    auto path_b = (std::filesystem::temp_directory_path() / "persodpo_pairs_b.jsonl").string();
    write_pairs(forge_margin(by_record, PairingPolicy{}, {}), path_a);
    write_pairs(forge_margin(by_record, PairingPolicy{}, {}), path_b);

    std::ifstream a(path_a), b(path_b);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(!sa.str().empty());
}
